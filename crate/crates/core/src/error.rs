use thiserror::Error;

use crate::dists::Family;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("family mismatch: {0} vs {1}")]
    FamilyMismatch(Family, Family),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("degenerate support: {0}")]
    DegenerateSupport(&'static str),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("non-finite loss at t={t} (batch entity {index})")]
    NonFiniteLoss { t: f64, index: usize },
    #[error("non-finite prediction at chain step {step}")]
    NonFinitePrediction { step: usize },
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

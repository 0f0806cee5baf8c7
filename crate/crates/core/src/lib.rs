//! Parameter interpolation flows.
//!
//! A generative model that never moves samples directly: it moves the
//! *parameters* of a distribution along a straight line from a fixed prior
//! to a Dirac endpoint at each datum, and trains a network to recover the
//! endpoint from a draw at any point on that line. Coordinates use an
//! isotropic Gaussian or Laplace family, categorical labels a Dirichlet.

pub mod data;
pub mod dists;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod net;
pub mod schedule;
pub mod special;

pub use error::{Error, Result};

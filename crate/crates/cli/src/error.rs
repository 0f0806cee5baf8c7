use std::fmt;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: String, expected: u32 },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("epoch {epoch} step {step}: {source}")]
    Step {
        epoch: usize,
        step: u64,
        #[source]
        source: pif_core::Error,
    },
    #[error(transparent)]
    Core(#[from] pif_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Stable category names printed on failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Config,
    Io,
    Format,
    Version,
    Schema,
    Numeric,
    Data,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Io => "io",
            Category::Format => "format",
            Category::Version => "version",
            Category::Schema => "schema",
            Category::Numeric => "numeric",
            Category::Data => "data",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Config => 3,
            Category::Io => 4,
            Category::Format => 5,
            Category::Version => 6,
            Category::Schema => 7,
            Category::Numeric => 8,
            Category::Data => 9,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            CliError::Usage(_) => Category::Usage,
            CliError::Config(_) => Category::Config,
            CliError::Io { .. } => Category::Io,
            CliError::Format { .. } => Category::Format,
            CliError::Version { .. } => Category::Version,
            CliError::Schema { .. } => Category::Schema,
            CliError::Step { source, .. } => CliError::core_category(source),
            CliError::Core(e) => CliError::core_category(e),
        }
    }

    fn core_category(e: &pif_core::Error) -> Category {
        use pif_core::Error as E;
        match e {
            E::NonFinite(_)
            | E::NonFiniteActivation { .. }
            | E::NonFiniteGradient { .. }
            | E::NonFiniteLoss { .. }
            | E::NonFinitePrediction { .. } => Category::Numeric,
            E::Config(_) | E::UnknownDataset(_) => Category::Config,
            _ => Category::Data,
        }
    }

    /// `error[<category>]: <message>` on a single line.
    pub fn report(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.category(), msg)
    }
}

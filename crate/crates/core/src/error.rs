use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// User-supplied coefficients must come with their own constants.
    #[error("model `{0}` uses custom coefficients but no Lipschitz constants were supplied")]
    MissingConstants(String),

    #[error("particle {particle} blew up at t = {time}: position {value}")]
    BlowUp {
        particle: usize,
        time: f64,
        value: f64,
    },

    #[error("particle count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    #[error("dimension mismatch at `{context}`: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. } | Error::NonFinite(_) | Error::Optimizer(_)
        )
    }
}

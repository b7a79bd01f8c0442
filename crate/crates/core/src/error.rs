use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize the zero vector to a spin state")]
    ZeroVector,

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ensemble size {p} exceeds the enumeration limit of {max}")]
    TooManySpins { p: usize, max: usize },

    #[error("eigensolver failed to converge for pattern {pattern}")]
    Eigensolver { pattern: String },

    #[error("secular residual undefined: eigenvalue sits on i*e_{index} (non-hyperbolic input)")]
    NonHyperbolic { index: usize },

    #[error("control law {law} does not match the state's weight convention: {reason}")]
    WeightConvention { law: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

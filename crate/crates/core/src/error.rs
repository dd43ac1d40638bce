use thiserror::Error;

/// Crate-wide error type. Contract violations that indicate programmer error
/// (dimension mismatches, inverted clamp bounds) panic instead; everything a
/// caller can plausibly trigger through data flows through this enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("config key `{key}`: {reason}")]
    ConfigKey { key: String, reason: String },

    #[error("validation: {0}")]
    Validation(String),

    #[error("linear solve did not reach tolerance at step {step} ({context})")]
    LinearSolve { step: usize, context: &'static str },

    #[error("non-finite {what} at time step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("precondition: {0}")]
    Precondition(String),

    #[error("path {index}: {source}")]
    Path {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

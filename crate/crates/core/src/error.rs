use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A cross-module contract was violated (e.g. weights bound to the wrong
    /// model, or a payload kind incompatible with the requested objective).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The observed update carries no usable signal (identical weights).
    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    /// The adversary objective became non-finite.
    #[error("attack diverged at iteration {iteration}: {message}")]
    Diverged { iteration: usize, message: String },

    /// The federated simulation itself failed.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// A binary input file is malformed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A run configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

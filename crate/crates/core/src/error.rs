use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument violates its documented domain.
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    /// A stored state broke a density-matrix invariant during integration.
    #[error("integration failed at t = {time} us: {reason}")]
    Integration { time: f64, reason: String },

    /// Post-processing could not find the structure it looks for.
    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("{context}, line {line}: {reason}")]
    Input {
        context: String,
        line: u64,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }
}

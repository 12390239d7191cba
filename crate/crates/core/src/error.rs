use thiserror::Error;

/// Errors raised by the model, search, moment and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The data carry no information about the parameters, e.g. every
    /// conditioning class is a singleton.
    #[error("no information: {0}")]
    NoInformation(String),

    #[error("{what} too large (estimated size {estimate:.3e}, limit {limit:.3e})")]
    TooLarge { what: String, estimate: f64, limit: f64 },

    #[error("design is not binary: every w_t must be a standard basis vector")]
    NotBinaryDesign,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("matrix is not positive semi-definite: min eigenvalue {min_eig:e} below -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    /// Data are valid but carry no usable information (e.g. all scales zero).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the request.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPsd { .. } | Error::Degenerate(_))
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

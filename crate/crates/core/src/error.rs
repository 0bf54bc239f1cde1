use thiserror::Error;

/// Errors surfaced by the estimators.
///
/// `Input` covers every contract violation a caller can fix (bad shapes,
/// invalid tuning parameters, missing cells where none are allowed).
/// `Numerical` is reserved for backend failures such as a non-converging SVD.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

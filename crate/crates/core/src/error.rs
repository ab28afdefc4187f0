use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The uniform-concentration observation model does not hold for the given geometry.
    #[error("model validity violated: {0}")]
    ModelValidity(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

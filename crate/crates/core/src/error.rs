use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("kernel mass is {mass} (deficit {deficit:+e}); expected 1")]
    Normalization { mass: f64, deficit: f64 },

    #[error("no bracket found: {0}")]
    Range(String),

    #[error("estimation failed: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}

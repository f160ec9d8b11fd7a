use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix in {context} (condition number {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("stale forward cache: built at parameter version {cache}, network is at {current}")]
    StaleCache { cache: u64, current: u64 },

    #[error("parameter file: {0}")]
    Format(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

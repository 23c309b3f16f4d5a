use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("model not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sampler aborted at iteration {iteration} of chain {chain}: {reason}")]
    SamplerAborted {
        chain: usize,
        iteration: usize,
        reason: String,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid_dimension",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Capacity(_) => "capacity",
            Error::Numerical(_) => "numerical",
            Error::OutOfRange(_) => "out_of_range",
            Error::NotIdentifiable(_) => "not_identifiable",
            Error::Empty(_) => "empty",
            Error::InsufficientData(_) => "insufficient_data",
            Error::SamplerAborted { .. } => "sampler_aborted",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} has {size} columns, above the dense limit of {limit}; {hint}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
        hint: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {n} observations")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("pair ({0}, {1}) is listed as active but its difference block is zero")]
    InconsistentActiveSet(usize, usize),

    #[error("no admissible entries: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("unknown location label `{0}`")]
    UnknownLocation(String),
    #[error("no default location rule for finding `{0}`")]
    NoDefaultRule(String),
    #[error("phantom: {0}")]
    Phantom(String),
    #[error("report generation: {0}")]
    Template(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(alloc::format!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;

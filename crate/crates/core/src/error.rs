use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A line of an input file could not be decoded.
    Parse { line: usize, message: String },
    /// Cross-record reference failure, e.g. an interaction naming an unknown item.
    Integrity(String),
    /// Experiment or operation parameters violate a precondition.
    Config(String),
    /// API misuse, such as stepping a finished episode.
    Usage(String),
    /// Numerical failure that aborted an update.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { line, message } => write!(f, "parse error on line {line}: {message}"),
            Error::Integrity(msg) => write!(f, "integrity error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Where in a file a format error was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Byte(usize),
    Line(usize),
    Tensor(String),
    Unknown,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Byte(o) => write!(f, "byte offset {o}"),
            Location::Line(l) => write!(f, "line {l}"),
            Location::Tensor(name) => write!(f, "tensor `{name}`"),
            Location::Unknown => write!(f, "unknown location"),
        }
    }
}

/// A file did not match its declared format.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind} format error at {location}: {message}")]
pub struct FormatError {
    pub kind: &'static str,
    pub location: Location,
    pub message: String,
}

impl FormatError {
    pub(crate) fn at_byte(kind: &'static str, offset: usize, message: impl Into<String>) -> Self {
        FormatError { kind, location: Location::Byte(offset), message: message.into() }
    }

    pub(crate) fn at_line(kind: &'static str, line: usize, message: impl Into<String>) -> Self {
        FormatError { kind, location: Location::Line(line), message: message.into() }
    }

    pub(crate) fn at_tensor(kind: &'static str, name: &str, message: impl Into<String>) -> Self {
        FormatError { kind, location: Location::Tensor(name.to_string()), message: message.into() }
    }
}

use std::fmt;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    Numeric { op: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: FormatReason },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a binary file was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatReason {
    BadMagic,
    UnsupportedVersion(u16),
    /// The file ended inside a record. Carries the id of the last record
    /// that decoded completely, if any.
    Truncated { last_good: Option<String> },
    Invalid(String),
}

impl fmt::Display for FormatReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatReason::BadMagic => write!(f, "missing or wrong magic"),
            FormatReason::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            FormatReason::Truncated { last_good: Some(id) } => {
                write!(f, "truncated after record {id:?}")
            }
            FormatReason::Truncated { last_good: None } => {
                write!(f, "truncated before the first complete record")
            }
            FormatReason::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn numeric(op: impl Into<String>) -> Self {
        Error::Numeric { op: op.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: FormatReason) -> Self {
        Error::Format { offset, reason }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

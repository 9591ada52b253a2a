use alloc::string::String;
use core::fmt;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on a dimension.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// More attachment edges requested than there are nodes to attach to.
    TooManyEdges { edges: usize, nodes: usize },
    /// A replayed sequence ran out before the requested step.
    ReplayExhausted { step: usize, available: usize },
    /// The normal-equation matrix could not be factorized.
    SingularSystem,
    /// A gradient or loss became NaN or infinite.
    NonFinite(String),
    /// `backward` was called on something that is not a 1x1 tensor.
    NonScalarOutput { rows: usize, cols: usize },
    /// A configuration value is out of its allowed range.
    InvalidConfig(String),
    /// A checkpoint or dump could not be parsed.
    Parse(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::TooManyEdges { edges, nodes } => {
                write!(f, "cannot attach {edges} edges to a graph with {nodes} nodes")
            }
            Error::ReplayExhausted { step, available } => write!(
                f,
                "replay exhausted: step {step} requested but only {available} records stored"
            ),
            Error::SingularSystem => write!(f, "normal equations are singular; retry with ridge > 0"),
            Error::NonFinite(ctx) => write!(f, "non-finite value encountered: {ctx}"),
            Error::NonScalarOutput { rows, cols } => {
                write!(f, "backward requires a scalar output, got a {rows}x{cols} tensor")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for `op`.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A spatial extent is not a multiple of the required factor.
    Indivisible {
        op: &'static str,
        extent: usize,
        factor: usize,
    },
    /// An op produced NaN or infinity.
    NonFinite { op: &'static str },
    /// The gradient of a named parameter contains NaN or infinity.
    NonFiniteGrad { param: String },
    /// `backward` was called a second time without `zero_grad`.
    BackwardTwice,
    /// `backward` requires a single-element loss.
    NonScalarLoss { shape: Vec<usize> },
    InvalidArgument(String),
    InvalidConfig(String),
    Checkpoint(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::Indivisible { op, extent, factor } => {
                write!(f, "{op}: extent {extent} is not divisible by {factor}")
            }
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Error::NonFiniteGrad { param } => write!(f, "gradient of {param} is not finite"),
            Error::BackwardTwice => f.write_str("backward already ran on this tape; call zero_grad first"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward needs a scalar loss, got shape {shape:?}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint: {msg}"),
        }
    }
}

impl Error {
    /// True for failures caused by NaN or infinite values.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteGrad { .. })
    }
}

impl core::error::Error for Error {}

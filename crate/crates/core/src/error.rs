use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    Dimension { context: &'static str, expected: usize, found: usize },
    /// A NaN or infinity reached an operation that requires finite input.
    NonFinite { context: &'static str },
    /// An argument violates an operation's precondition.
    Precondition(String),
    /// A compositing window had no observations.
    WindowGap { window: usize },
    /// Training produced a non-finite loss.
    Diverged { epoch: usize, batch: usize },
    /// AUC needs both classes.
    SingleClass,
    /// Configuration outside the supported grid.
    InvalidConfig(String),
    /// The requested head does not exist on this model.
    MissingHead,
    /// Data was normalized twice.
    AlreadyNormalized,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { context, expected, found } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, found {found}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::WindowGap { window } => {
                write!(f, "no observations in compositing window {window}")
            }
            Error::Diverged { epoch, batch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}, batch {batch}")
            }
            Error::SingleClass => f.write_str("AUC is undefined when only one class is present"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::MissingHead => f.write_str("model has no global head (single-headed)"),
            Error::AlreadyNormalized => f.write_str("dataset is already normalized"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { context, expected, found })
    }
}

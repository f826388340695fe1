use alloc::string::String;
use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input violates an operation's precondition.
    InvalidInput(String),
    /// Signal too short for the requested transform.
    TooShort { required: usize, actual: usize },
    /// A hyperparameter combination that cannot describe a network or experiment.
    Config(String),
    /// A metric is undefined for the given data, e.g. AUC with a single class.
    UndefinedMetric(String),
    /// Training produced a non-finite or exploding loss.
    Diverged { epoch: usize, loss: f64 },
    /// Random search could not draw an admissible configuration.
    SpaceInfeasible { attempts: usize, budget: usize },
    /// Re-applying a noise plan to an already injected split.
    AlreadyInjected,
    /// A window has no detectable QRS complex.
    NoQrs(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::TooShort { required, actual } => write!(
                f,
                "signal too short: need at least {required} samples, got {actual}"
            ),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss})")
            }
            Error::SpaceInfeasible { attempts, budget } => write!(
                f,
                "search space infeasible: {attempts} consecutive draws exceeded the {budget}-parameter budget"
            ),
            Error::AlreadyInjected => write!(f, "split already carries injected noise"),
            Error::NoQrs(msg) => write!(f, "no QRS complex detected: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

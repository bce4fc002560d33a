use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument violated a precondition (shape, range, size mismatch).
    #[error("domain error: {0}")]
    Domain(String),
    /// A non-finite value appeared during a computation.
    #[error("numeric failure in {stage} at index {index}")]
    NonFinite { stage: &'static str, index: usize },
    /// Toy training diverged.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// `true` for the numeric-failure family (non-finite values, divergence).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;

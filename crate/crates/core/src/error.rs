use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("context capacity exceeded: {needed} positions requested, capacity is {capacity}")]
    Capacity { needed: usize, capacity: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid draft: token {token} has zero draft probability")]
    InvalidDraft { token: u32 },
    #[error("residual distribution has no positive mass")]
    DegenerateResidual,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) at step {step}")]
    Training { step: usize },
    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

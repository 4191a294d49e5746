use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularDesign { condition: f64 },

    #[error("insufficient data: {samples} samples for {params} parameters")]
    InsufficientData { samples: usize, params: usize },

    #[error("non-finite value in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("ensemble member {member} failed: {source}")]
    MemberFailed { member: usize, source: Box<Error> },

    #[error("only {succeeded} of {required} required repetitions succeeded")]
    InsufficientRepetitions { succeeded: usize, required: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

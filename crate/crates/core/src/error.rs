use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate landmark name `{0}`")]
    DuplicateName(String),
    #[error("landmark `{name}` lies outside the volume bounds")]
    OutOfBounds { name: String },
    #[error("only {0} landmark pair(s) survived; at least {1} required")]
    TooFewLandmarks(usize, usize),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration} (batch pairs {batch:?})")]
    NonFiniteLoss { iteration: usize, batch: alloc::vec::Vec<usize> },
}

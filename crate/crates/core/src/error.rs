use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid value in {context}: {detail}")]
    InvalidValue { context: &'static str, detail: String },

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at step {step}; aborting with last-good checkpoint")]
    NonFiniteLoss { step: u64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("image {height}x{width} is smaller than the SSIM patch ({patch}x{patch})")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch: usize,
    },

    #[error(
        "discriminator requires spatial dimensions divisible by {required}, got {height}x{width}"
    )]
    SpatialNotDivisible {
        height: usize,
        width: usize,
        required: usize,
    },

    #[error("bad checkpoint magic; not a checkpoint file")]
    CheckpointBadMagic,

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint file truncated or corrupt: {0}")]
    CheckpointTruncated(&'static str),

    #[error("checkpoint parameter `{name}`: expected shape {expected}, got {got}")]
    CheckpointShape {
        name: String,
        expected: String,
        got: String,
    },

    #[error("checkpoint is missing parameter `{name}`")]
    CheckpointMissingParam { name: String },

    #[error("checkpoint metadata: {0}")]
    CheckpointMetadata(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of {frames} frames is shorter than the downsampling factor {factor}")]
    SequenceTooShort { frames: usize, factor: usize },
    #[error("{positions} latent positions exceed the transformer capacity of {max}")]
    TooManyPositions { positions: usize, max: usize },
    #[error("diffusion step {t} out of range for a {steps}-step schedule")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("DDIM step order violated: t_prev {t_prev} is not below t {t}")]
    StepOrder { t: usize, t_prev: usize },
    #[error("no masked positions")]
    NoMaskedPositions,
    #[error("keyframes at frames {first} and {second} map to the same latent position {position}")]
    KeyframeCollision {
        first: usize,
        second: usize,
        position: usize,
    },
    #[error("keyframe at frame {frame} outside [0, {frames})")]
    KeyframeOutOfRange { frame: usize, frames: usize },
    #[error("edit mask mixes preserved and generated frames inside latent window {window}")]
    MixedEditWindow { window: usize },
    #[error("clip of {frames} frames is shorter than the {required} context frames requested")]
    ClipTooShort { frames: usize, required: usize },
    #[error("too few samples: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("unknown motion layout kind {0}")]
    UnknownLayout(u8),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

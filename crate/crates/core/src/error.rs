use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("waveform has {samples} samples, need at least {needed} for one frame")]
    TooShort { samples: usize, needed: usize },
    #[error("unsupported sample rate {0} Hz, expected 16000")]
    SampleRate(u32),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("no voiced frames in pitch contours")]
    NoVoicedFrames,
    #[error("pitch statistics have zero variance")]
    ZeroVariance,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("resample plan covers {plan} frames but sequence has {seq}")]
    PlanMismatch { plan: usize, seq: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("model is untrained")]
    Untrained,
    #[error("syllable segmentation failed: expected {expected} syllables, found {found}")]
    Segmentation { expected: usize, found: usize },
}

impl Error {
    /// Numerical failures (as opposed to bad data or bad usage).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("photon number {0} has no amplitude in the pulse shape")]
    UnknownPhotonNumber(u32),

    #[error("photon number {n} outside 1..={max}")]
    PhotonNumberOutOfRange { n: u32, max: u32 },

    #[error("duration {duration:e} s too short: {reason}")]
    DurationTooShort { duration: f64, reason: String },

    #[error("event at {time:e} s outside trace window [0, {duration:e}) s")]
    EventOutsideWindow { time: f64, duration: f64 },

    #[error("sample rate mismatch: trace {trace} Hz, kernel {kernel} Hz")]
    SampleRateMismatch { trace: f64, kernel: f64 },

    #[error("cutoff {cutoff} Hz outside (0, {nyquist}] Hz")]
    CutoffOutOfRange { cutoff: f64, nyquist: f64 },

    #[error("trace of {len} samples too short for {segments} averaging segments")]
    TraceTooShort { len: usize, segments: usize },

    #[error("spectra do not share a frequency grid")]
    GridMismatch,

    #[error("no crossing found")]
    NoCrossing,

    #[error("peak at sample {index} lies on the search-window boundary")]
    PeakNotBracketed { index: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid mixture component count {0}")]
    InvalidComponentCount(usize),

    #[error("histogram has {nonzero} nonzero bins, {required} needed for {components} components")]
    TooFewBins {
        nonzero: usize,
        required: usize,
        components: usize,
    },

    #[error("mixture fit did not converge after {iterations} iterations (relative residual {residual_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("mixture fit degenerate: {0}")]
    DegenerateFit(String),

    #[error("{required} samples required, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("all detections fired every pixel; mean photon number is unbounded")]
    Saturated,

    #[error("noise-free signal: SNR is infinite")]
    InfiniteSnr,

    #[error("no array size keeps the extrapolated spacing above 1")]
    NoValidSize,

    #[error("{path}: bad format at byte {offset}: {reason}")]
    BadFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

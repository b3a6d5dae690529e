//! Audio front end: WAV ingestion, mid/side, the 4-plane Gammatone
//! spectrogram, low-pass anchors and bandwidth estimation.

mod bandwidth;
mod filter;
mod gammatone;
mod spectrogram;
mod wav;

pub use bandwidth::estimate_bandwidth;
pub use filter::{lowpass, LowpassDesign};
pub use gammatone::{erb_centers, erb_hz, gammatone_spectrogram, FrontendConfig, GammatoneWeights};
pub use spectrogram::{swap_lr, Segment, Spectrogram, PLANES};
pub use wav::{load_wav, write_wav, AudioBuffer};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 48_000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported sample rate {0} Hz (expected 48000)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count {0} (expected 1 or 2)")]
    UnsupportedChannels(usize),
    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),
    #[error("channels have different lengths ({0} vs {1})")]
    RaggedChannels(usize, usize),
    #[error("{op} needs a stereo buffer; duplicate mono input to dual-mono first")]
    NeedsStereo { op: &'static str },
    #[error("input too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("invalid cutoff {0} Hz (must be in (0, 24000))")]
    InvalidCutoff(f64),
    #[error("invalid front-end config: {0}")]
    InvalidConfig(String),
    #[error("bad spectrogram file: {0}")]
    BadBlob(String),
    #[error("wav {path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// `M = (L + R)/2`, `S = (L − R)/2`, samplewise.
pub fn mid_side(buffer: &AudioBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    if buffer.channels() != 2 {
        return Err(DspError::NeedsStereo { op: "mid_side" });
    }
    let (l, r) = (buffer.channel(0), buffer.channel(1));
    let mid = l.iter().zip(r).map(|(a, b)| 0.5 * (a + b)).collect();
    let side = l.iter().zip(r).map(|(a, b)| 0.5 * (a - b)).collect();
    Ok((mid, side))
}

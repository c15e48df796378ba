use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read audio file {path}: {source}")]
    AudioRead {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("cannot write audio file {path}: {source}")]
    AudioWrite {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("audio is empty")]
    EmptyAudio,

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("signal has {len} samples, shorter than one {frame_len}-sample frame")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("invalid STFT configuration: {0}")]
    InvalidFrameConfig(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("matrix has a negative or non-finite entry at ({row}, {col})")]
    NotNonnegative { row: usize, col: usize },

    #[error("invalid factorization rank {rank} for a {rows}x{cols} matrix")]
    InvalidRank { rank: usize, rows: usize, cols: usize },

    #[error("cannot form {clusters} clusters from {informative} informative rows")]
    TooFewInformativeRows { clusters: usize, informative: usize },

    #[error("input is {seconds:.2} s long; at least {min_seconds:.1} s is required")]
    InputTooShort { seconds: f64, min_seconds: f64 },

    #[error("invalid source specification: {0}")]
    InvalidSpec(String),

    #[error("signal is silent (zero RMS): {0}")]
    SilentSignal(&'static str),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed model checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

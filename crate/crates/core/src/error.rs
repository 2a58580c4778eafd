use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("COLA violation: zero window normalization at sample {sample}")]
    ColaViolation { sample: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidStftConfig(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("brute-force limit: {0} sources exceeds the permutation scan limit of 8")]
    BruteForceLimit(usize),
    #[error("phase estimate not unit norm at bin {bin} (norm {norm})")]
    NonUnitPhase { bin: usize, norm: f64 },
    #[error("WAV format error: {0}")]
    Wav(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("empty corpus")]
    EmptyCorpus,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

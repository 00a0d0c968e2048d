use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: output window is empty ({detail})")]
    EmptyWindow { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("infeasible filter spec: {0}")]
    InfeasibleFilter(String),

    #[error("channel {channel} is degenerate (variance {variance:e})")]
    DegenerateChannel { channel: usize, variance: f64 },

    #[error("signal of length {len} is shorter than wavelet filter ({filter_len})")]
    SignalTooShort { len: usize, filter_len: usize },

    #[error("sampling rate {fs} Hz is not an integer multiple of {target} Hz")]
    IndivisibleRate { fs: f64, target: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("training diverged (seed {seed}, step {step}): loss is not finite")]
    Diverged { seed: u64, step: usize },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short category tag used in command-line error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::EmptyWindow { .. } | Error::NonScalarLoss { .. } => "shape",
            Error::NonFinite { .. } | Error::Diverged { .. } => "divergence",
            Error::MissingGrad(_) | Error::DuplicateParam(_) | Error::UnknownParam(_) => "params",
            Error::InfeasibleFilter(_)
            | Error::DegenerateChannel { .. }
            | Error::SignalTooShort { .. }
            | Error::IndivisibleRate { .. } => "dsp",
            Error::Invalid(_) => "invalid",
            Error::Format(_) | Error::Checksum { .. } | Error::Version { .. } => "format",
            Error::Stats(_) => "stats",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

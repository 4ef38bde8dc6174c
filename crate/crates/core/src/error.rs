use std::path::PathBuf;

use thiserror::Error;

use crate::types::{FmaMode, KernelDescriptor, Precision};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid device spec `{device}`: {reason}")]
    InvalidSpec { device: String, reason: String },

    #[error("unknown precision rate: {0}")]
    UnknownPrecisionRate(Precision),

    #[error("unsupported PCIe generation: {0}")]
    UnsupportedPcieGen(u8),

    #[error("invalid PCIe lane count: {0}")]
    InvalidPcieLanes(u8),

    #[error("invalid kernel descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("sweep must be ascending")]
    SweepNotAscending,

    #[error("sweep must not be empty")]
    EmptySweep,

    #[error("no template for precision {0}")]
    NoTemplate(Precision),

    #[error("executor failed on {precision} c={compute_iters} {fma_mode}: {message}", precision = .descriptor.precision, compute_iters = .descriptor.compute_iters, fma_mode = .descriptor.fma_mode)]
    Executor { descriptor: Box<KernelDescriptor>, message: String },

    #[error("nonpositive ratio: {0}")]
    NonpositiveRatio(f64),

    #[error("no truth entry for {0} {1}")]
    NoTruthEntry(Precision, FmaMode),

    #[error("invalid simulation profile: {0}")]
    InvalidProfile(String),

    #[error("invalid model spec `{model}`: {reason}")]
    InvalidModel { model: String, reason: String },

    #[error("invalid quant format `{name}`: {reason}")]
    InvalidQuant { name: String, reason: String },

    #[error("unknown quant format `{0}`")]
    UnknownQuant(String),

    #[error("context exceeds model maximum ({context} > {max})")]
    ContextOverflow { context: u64, max: u64 },

    #[error("predicted throughput must be positive, got {0}")]
    NonpositivePrediction(f64),

    #[error("value must be positive: {0}")]
    Nonpositive(&'static str),

    #[error("no power samples in window")]
    NoPowerSamples,

    #[error("unordered power log at line {line}")]
    UnorderedPowerLog { line: usize },

    #[error("nonpositive price: {0}")]
    NonpositivePrice(f64),

    #[error("invalid scenario `{scenario}`: {reason}")]
    InvalidScenario { scenario: String, reason: String },

    #[error("unrecognized schema: {0}")]
    UnrecognizedSchema(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("missing report inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error("unsupported store schema version {0}")]
    SchemaVersion(u32),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures reading or writing files, as opposed to bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}

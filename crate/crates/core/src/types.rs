use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arithmetic precision of a kernel or a peak-rate entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp64,
    Fp32,
    Fp16,
    Int32,
    Int16,
    Int8,
}

impl Precision {
    pub const ALL: [Precision; 6] =
        [Precision::Fp64, Precision::Fp32, Precision::Fp16, Precision::Int32, Precision::Int16, Precision::Int8];

    /// Storage size of one scalar element.
    pub fn element_bytes(self) -> u32 {
        match self {
            Precision::Fp64 => 8,
            Precision::Fp32 | Precision::Int32 => 4,
            Precision::Fp16 | Precision::Int16 => 2,
            Precision::Int8 => 1,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, Precision::Int32 | Precision::Int16 | Precision::Int8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Fp64 => "fp64",
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Int32 => "int32",
            Precision::Int16 => "int16",
            Precision::Int8 => "int8",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Precision::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidDescriptor(format!("unknown precision `{s}`")))
    }
}

/// Whether the compiler may contract `a * b + c` into a fused instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FmaMode {
    Fused,
    Unfused,
}

impl FmaMode {
    pub const BOTH: [FmaMode; 2] = [FmaMode::Fused, FmaMode::Unfused];

    pub fn as_str(self) -> &'static str {
        match self {
            FmaMode::Fused => "fused",
            FmaMode::Unfused => "unfused",
        }
    }
}

impl fmt::Display for FmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FmaMode {
    type Err = Error;

    /// Accepts `fused`/`unfused` and the CLI spelling `on`/`off`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fused" | "on" | "1" | "true" => Ok(FmaMode::Fused),
            "unfused" | "off" | "0" | "false" => Ok(FmaMode::Unfused),
            other => Err(Error::InvalidDescriptor(format!("unknown fma mode `{other}`"))),
        }
    }
}

/// Compiler family a build plan targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Toolchain {
    CudaLike,
    OpenclLike,
}

/// Provenance of a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Api {
    CudaLike,
    OpenclLike,
    Simulated,
}

/// Default buffer size for generated kernels, before the VRAM cap.
pub const DEFAULT_BUFFER_BYTES: u64 = 256 * 1024 * 1024;

/// One microbenchmark point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelDescriptor {
    pub precision: Precision,
    pub compute_iters: u32,
    pub element_bytes: u32,
    pub flops_per_iter: u32,
    pub extra_flops: u32,
    pub fma_mode: FmaMode,
    pub buffer_bytes: u64,
}

impl KernelDescriptor {
    /// One multiply-add (2 flops) per iteration plus one trailing add, over
    /// the default 256 MiB buffer.
    pub fn new(precision: Precision, compute_iters: u32, fma_mode: FmaMode) -> Self {
        KernelDescriptor {
            precision,
            compute_iters,
            element_bytes: precision.element_bytes(),
            flops_per_iter: 2,
            extra_flops: 1,
            fma_mode,
            buffer_bytes: DEFAULT_BUFFER_BYTES,
        }
    }

    pub fn with_buffer_bytes(mut self, buffer_bytes: u64) -> Self {
        self.buffer_bytes = buffer_bytes;
        self
    }

    pub fn with_iters(mut self, compute_iters: u32) -> Self {
        self.compute_iters = compute_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_bytes == 0 {
            return Err(Error::InvalidDescriptor("element_bytes must be positive".into()));
        }
        if self.flops_per_iter == 0 {
            return Err(Error::InvalidDescriptor("flops_per_iter must be positive".into()));
        }
        if self.buffer_bytes == 0 {
            return Err(Error::InvalidDescriptor("buffer_bytes must be positive".into()));
        }
        if !self.buffer_bytes.is_multiple_of(u64::from(self.element_bytes)) {
            return Err(Error::InvalidDescriptor(format!(
                "buffer_bytes {} not divisible by element_bytes {}",
                self.buffer_bytes, self.element_bytes
            )));
        }
        Ok(())
    }

    pub fn elements(&self) -> u64 {
        self.buffer_bytes / u64::from(self.element_bytes)
    }

    /// Operations executed per element.
    pub fn ops_per_element(&self) -> u64 {
        u64::from(self.flops_per_iter) * u64::from(self.compute_iters) + u64::from(self.extra_flops)
    }

    /// Operations executed over the whole buffer.
    pub fn total_ops(&self) -> f64 {
        self.ops_per_element() as f64 * self.elements() as f64
    }
}

/// A benchmark result, simulated or ingested. Rates are in ops/s and bytes/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub descriptor: KernelDescriptor,
    pub ops_per_sec: f64,
    pub bytes_per_sec: f64,
    pub exec_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_watts: Option<f64>,
    pub api: Api,
    pub timestamp: DateTime<Utc>,
}

//! Performance models for artificially restricted GPUs.
//!
//! The crate derives theoretical peaks from a [`DeviceSpec`], evaluates
//! roofline envelopes, generates fused/unfused multiply-add microbenchmark
//! kernels, classifies measured/theoretical ratios into restriction bins,
//! simulates a restricted device deterministically, predicts LLM inference
//! throughput and memory footprint, estimates unit sales from revenue
//! scenarios, and ingests/report benchmark results through a JSONL store.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundled;
pub mod device;
pub mod economics;
pub mod error;
pub mod fingerprint;
pub mod ingest;
pub mod llm;
pub mod report;
pub mod roofline;
pub mod sim;
pub mod store;
mod types;
pub mod workbench;

pub use device::{
    memory_bandwidth, pcie_theoretical, texture_fill_rate, theoretical_peak, ClockDomain, DeviceSpec, PcieRates,
    PrecisionRateTable, TheoreticalProfile,
};
pub use economics::{estimate_units, scenario_totals, SalesScenario, ScenarioRow, ScenarioTotals};
pub use error::{Error, Result};
pub use fingerprint::{classify, restriction_report, Fingerprint, RestrictionBin, Verdict};
pub use llm::{LlmModelSpec, PredictionResult, QuantFormat, ScalingBasis};
pub use roofline::{attainable, operational_intensity, ridge_point, sweep, Bound, RooflinePoint};
pub use sim::{simulate, simulate_power, SimExecutor, SimProfile};
pub use store::{BenchRecord, Payload, ResultStore, Source};
pub use types::{Api, FmaMode, KernelDescriptor, Measurement, Precision, Toolchain};
pub use workbench::{build_plan, generate_kernel, run_fingerprint_campaign, BuildPlan, Executor, KernelSource};

/// 1 GB/s and 1 GFLOPS are decimal units throughout.
pub const GIGA: f64 = 1e9;
/// 1 TFLOPS.
pub const TERA: f64 = 1e12;

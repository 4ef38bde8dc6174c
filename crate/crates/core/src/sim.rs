//! A deterministic simulated device.
//!
//! Throughput follows the roofline envelope with per-(precision, mode)
//! restriction factors applied to the compute roof:
//!
//! ```text
//! ops/s = min(peak * truth, intensity * bw * bandwidth_ratio) * (1 + eps)
//! ```
//!
//! `eps` is drawn uniformly from `[-noise_rel, +noise_rel]` by SplitMix64,
//! seeded from the profile seed mixed with every descriptor field, so a given
//! (profile, descriptor) pair always produces the same bits.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use crate::device::{memory_bandwidth, DeviceSpec, PrecisionRateTable};
use crate::error::{Error, Result};
use crate::roofline::operational_intensity;
use crate::types::{Api, FmaMode, KernelDescriptor, Measurement, Precision};
use crate::workbench::{BuildPlan, Executor, KernelSource};

/// SplitMix64 (Steele, Lea, Flood 2014), the reference constants.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn descriptor_stream(seed: u64, d: &KernelDescriptor) -> SplitMix64 {
    let fields = [
        d.precision as u64,
        u64::from(d.compute_iters),
        u64::from(d.element_bytes),
        u64::from(d.flops_per_iter),
        u64::from(d.extra_flops),
        d.fma_mode as u64,
        d.buffer_bytes,
    ];
    let mut h = seed;
    for v in fields {
        h = SplitMix64::new(h ^ v).next_u64();
    }
    SplitMix64::new(h)
}

pub const DEFAULT_IDLE_FLOOR_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SimProfile {
    pub spec: DeviceSpec,
    /// Fraction of the theoretical compute roof actually delivered.
    pub truth: BTreeMap<(Precision, FmaMode), f64>,
    /// Rates the simulated silicon runs at for precisions the spec sheet
    /// leaves unrated.
    pub hidden_rates: PrecisionRateTable,
    pub bandwidth_ratio: f64,
    pub noise_rel: f64,
    pub seed: u64,
    pub idle_floor_fraction: f64,
    /// Timestamp stamped on every simulated measurement.
    pub epoch: DateTime<Utc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    device: Option<String>,
    spec: Option<DeviceSpec>,
    #[serde(default)]
    truth: BTreeMap<Precision, BTreeMap<FmaMode, f64>>,
    #[serde(default)]
    hidden_rates: PrecisionRateTable,
    #[serde(default = "one")]
    bandwidth_ratio: f64,
    #[serde(default)]
    noise_rel: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_floor")]
    idle_floor_fraction: f64,
}

fn one() -> f64 {
    1.0
}

fn default_floor() -> f64 {
    DEFAULT_IDLE_FLOOR_FRACTION
}

impl SimProfile {
    /// A profile with every precision the spec rates unrestricted.
    pub fn unrestricted(spec: DeviceSpec) -> Self {
        let truth = spec.rates.iter().flat_map(|(p, _)| FmaMode::BOTH.map(|m| ((p, m), 1.0))).collect();
        SimProfile {
            spec,
            truth,
            hidden_rates: PrecisionRateTable::new(),
            bandwidth_ratio: 1.0,
            noise_rel: 0.0,
            seed: 0,
            idle_floor_fraction: DEFAULT_IDLE_FLOOR_FRACTION,
            epoch: DateTime::UNIX_EPOCH,
        }
    }

    /// Parses a truth profile. The device is either an inline `[spec]` table
    /// or `device = "<bundled name or path>"`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ProfileFile = toml::from_str(text)?;
        let spec = match (file.spec, file.device) {
            (Some(spec), _) => {
                spec.validate()?;
                spec
            }
            (None, Some(name)) => crate::bundled::device(&name)?,
            (None, None) => return Err(Error::InvalidProfile("profile names no device".into())),
        };
        let truth =
            file.truth.into_iter().flat_map(|(p, modes)| modes.into_iter().map(move |(m, r)| ((p, m), r))).collect();
        let profile = SimProfile {
            spec,
            truth,
            hidden_rates: file.hidden_rates,
            bandwidth_ratio: file.bandwidth_ratio,
            noise_rel: file.noise_rel,
            seed: file.seed,
            idle_floor_fraction: file.idle_floor_fraction,
            epoch: DateTime::UNIX_EPOCH,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x <= 1.0;
        for ((p, m), r) in &self.truth {
            if !in_unit(*r) {
                return Err(Error::InvalidProfile(format!("truth ratio for {p} {m} must be in (0, 1], got {r}")));
            }
        }
        if !in_unit(self.bandwidth_ratio) {
            return Err(Error::InvalidProfile(format!(
                "bandwidth_ratio must be in (0, 1], got {}",
                self.bandwidth_ratio
            )));
        }
        if !(self.noise_rel >= 0.0 && self.noise_rel < 1.0) {
            return Err(Error::InvalidProfile(format!("noise_rel must be in [0, 1), got {}", self.noise_rel)));
        }
        if !(0.0..=1.0).contains(&self.idle_floor_fraction) {
            return Err(Error::InvalidProfile("idle_floor_fraction must be in [0, 1]".into()));
        }
        for (p, r) in self.hidden_rates.iter() {
            if !(r > 0.0) {
                return Err(Error::InvalidProfile(format!("hidden rate for {p} must be positive")));
            }
        }
        Ok(())
    }

    pub fn with_noise(mut self, noise_rel: f64, seed: u64) -> Self {
        self.noise_rel = noise_rel;
        self.seed = seed;
        self
    }

    /// Peak of the simulated silicon, using hidden rates where the spec has none.
    fn silicon_peak(&self, precision: Precision) -> Result<f64> {
        let rate = self
            .spec
            .rates
            .get(precision)
            .or_else(|| self.hidden_rates.get(precision))
            .ok_or(Error::UnknownPrecisionRate(precision))?;
        Ok(f64::from(self.spec.cuda_cores) * self.spec.boost_clock_hz as f64 * rate)
    }

    fn truth_for(&self, d: &KernelDescriptor) -> Result<f64> {
        self.truth.get(&(d.precision, d.fma_mode)).copied().ok_or(Error::NoTruthEntry(d.precision, d.fma_mode))
    }

    /// (attained, unrestricted envelope) in ops/s, noise-free.
    fn envelopes(&self, d: &KernelDescriptor) -> Result<(f64, f64)> {
        let truth = self.truth_for(d)?;
        let peak = self.silicon_peak(d.precision)?;
        let bw = memory_bandwidth(&self.spec);
        let intensity = operational_intensity(d);
        let attained = (peak * truth).min(intensity * bw * self.bandwidth_ratio);
        let envelope = peak.min(intensity * bw);
        Ok((attained, envelope))
    }
}

/// Deterministic synthetic measurement of `d` on the simulated device.
pub fn simulate(profile: &SimProfile, d: &KernelDescriptor) -> Result<Measurement> {
    d.validate()?;
    let (attained, _) = profile.envelopes(d)?;
    let eps = profile.noise_rel * (2.0 * descriptor_stream(profile.seed, d).next_f64() - 1.0);
    let factor = 1.0 + eps;
    let intensity = operational_intensity(d);
    let achieved_bw = if intensity > 0.0 {
        attained * factor / intensity
    } else {
        memory_bandwidth(&profile.spec) * profile.bandwidth_ratio * factor
    };
    let bytes = d.buffer_bytes as f64;
    let exec_time_s = bytes / achieved_bw;
    Ok(Measurement {
        descriptor: *d,
        ops_per_sec: d.total_ops() / exec_time_s,
        bytes_per_sec: bytes / exec_time_s,
        exec_time_s,
        power_watts: Some(simulate_power(profile, d)?),
        api: Api::Simulated,
        timestamp: profile.epoch,
    })
}

/// Board power under a linear utilization model between an idle floor and TDP.
pub fn simulate_power(profile: &SimProfile, d: &KernelDescriptor) -> Result<f64> {
    let (attained, envelope) = profile.envelopes(d)?;
    let utilization = if envelope > 0.0 { (attained / envelope).clamp(0.0, 1.0) } else { 0.0 };
    let tdp = profile.spec.tdp_watts;
    let floor = profile.idle_floor_fraction * tdp;
    Ok(floor + (tdp - floor) * utilization)
}

/// Runs descriptors against a [`SimProfile`].
#[derive(Debug, Clone)]
pub struct SimExecutor {
    pub profile: SimProfile,
    pub runs: usize,
}

impl SimExecutor {
    pub fn new(profile: SimProfile) -> Self {
        SimExecutor { profile, runs: 0 }
    }
}

impl Executor for SimExecutor {
    fn execute(&mut self, kernel: &KernelSource, _plan: &BuildPlan) -> Result<Measurement> {
        self.runs += 1;
        simulate(&self.profile, &kernel.descriptor)
    }
}

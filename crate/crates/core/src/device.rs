//! Hardware descriptions and the theoretical ceilings derived from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Precision;

/// Operations each CUDA core retires per clock, per precision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrecisionRateTable(BTreeMap<Precision, f64>);

impl PrecisionRateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, precision: Precision, ops_per_core_per_clock: f64) -> Self {
        self.0.insert(precision, ops_per_core_per_clock);
        self
    }

    pub fn get(&self, precision: Precision) -> Option<f64> {
        self.0.get(&precision).copied()
    }

    pub fn insert(&mut self, precision: Precision, ops_per_core_per_clock: f64) {
        self.0.insert(precision, ops_per_core_per_clock);
    }

    pub fn iter(&self) -> impl Iterator<Item = (Precision, f64)> + '_ {
        self.0.iter().map(|(p, r)| (*p, *r))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (p, r) in self.iter() {
            if !(r.is_finite() && r > 0.0) {
                return Err(format!("rate for {p} must be positive, got {r}"));
            }
        }
        Ok(())
    }
}

/// Which clock derived figures are computed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockDomain {
    Base,
    #[default]
    Boost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub architecture: String,
    pub sm_count: u32,
    pub cuda_cores: u32,
    pub tmu_count: u32,
    pub base_clock_hz: u64,
    pub boost_clock_hz: u64,
    pub mem_bus_width_bits: u32,
    pub mem_clock_hz: u64,
    /// Data transfers per memory clock.
    pub mem_pump_factor: u32,
    pub vram_bytes: u64,
    pub tdp_watts: f64,
    pub pcie_gen: u8,
    pub pcie_lanes: u8,
    #[serde(default)]
    pub rates: PrecisionRateTable,
}

impl DeviceSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: DeviceSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("device spec serializes to toml")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSpec { device: self.name.clone(), reason };
        let positive = [
            ("sm_count", u64::from(self.sm_count)),
            ("cuda_cores", u64::from(self.cuda_cores)),
            ("tmu_count", u64::from(self.tmu_count)),
            ("base_clock_hz", self.base_clock_hz),
            ("boost_clock_hz", self.boost_clock_hz),
            ("mem_bus_width_bits", u64::from(self.mem_bus_width_bits)),
            ("mem_clock_hz", self.mem_clock_hz),
            ("mem_pump_factor", u64::from(self.mem_pump_factor)),
            ("vram_bytes", self.vram_bytes),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(fail(format!("{field} must be positive")));
            }
        }
        if !self.cuda_cores.is_multiple_of(self.sm_count) {
            return Err(fail(format!("cuda_cores {} not divisible by sm_count {}", self.cuda_cores, self.sm_count)));
        }
        if self.boost_clock_hz < self.base_clock_hz {
            return Err(fail("boost_clock_hz below base_clock_hz".into()));
        }
        if !(self.tdp_watts.is_finite() && self.tdp_watts > 0.0) {
            return Err(fail("tdp_watts must be positive".into()));
        }
        if !(1..=5).contains(&self.pcie_gen) {
            return Err(fail(format!("pcie_gen {} outside 1..5", self.pcie_gen)));
        }
        if !valid_lanes(self.pcie_lanes) {
            return Err(fail(format!("pcie_lanes {} not in {{1,2,4,8,16}}", self.pcie_lanes)));
        }
        self.rates.validate().map_err(fail)
    }

    pub fn clock_hz(&self, clock: ClockDomain) -> u64 {
        match clock {
            ClockDomain::Base => self.base_clock_hz,
            ClockDomain::Boost => self.boost_clock_hz,
        }
    }
}

fn valid_lanes(lanes: u8) -> bool {
    matches!(lanes, 1 | 2 | 4 | 8 | 16)
}

/// Peak ops/s for `precision` at boost clock.
pub fn theoretical_peak(spec: &DeviceSpec, precision: Precision) -> Result<f64> {
    theoretical_peak_at(spec, precision, ClockDomain::Boost)
}

pub fn theoretical_peak_at(spec: &DeviceSpec, precision: Precision, clock: ClockDomain) -> Result<f64> {
    let rate = spec.rates.get(precision).ok_or(Error::UnknownPrecisionRate(precision))?;
    Ok(f64::from(spec.cuda_cores) * spec.clock_hz(clock) as f64 * rate)
}

/// Global memory bandwidth in bytes/s.
pub fn memory_bandwidth(spec: &DeviceSpec) -> f64 {
    f64::from(spec.mem_bus_width_bits) * spec.mem_clock_hz as f64 * f64::from(spec.mem_pump_factor) / 8.0
}

/// Texels/s at the given core clock.
pub fn texture_fill_rate(spec: &DeviceSpec, clock_hz: f64) -> f64 {
    f64::from(spec.tmu_count) * clock_hz
}

/// Per-lane, per-direction PCIe throughput by generation, in bytes/s.
#[derive(Debug, Clone, PartialEq)]
pub struct PcieRates(BTreeMap<u8, f64>);

impl Default for PcieRates {
    /// Gen1/2 use 8b/10b encoding at 2.5/5 GT/s; gen3+ use 128b/130b at
    /// 8/16/32 GT/s.
    fn default() -> Self {
        let line = |gts: f64, payload: f64, frame: f64| gts * 1e9 * payload / frame / 8.0;
        PcieRates(BTreeMap::from([
            (1, line(2.5, 8.0, 10.0)),
            (2, line(5.0, 8.0, 10.0)),
            (3, line(8.0, 128.0, 130.0)),
            (4, line(16.0, 128.0, 130.0)),
            (5, line(32.0, 128.0, 130.0)),
        ]))
    }
}

impl PcieRates {
    pub fn with_lane_rate(mut self, gen: u8, bytes_per_s: f64) -> Self {
        self.0.insert(gen, bytes_per_s);
        self
    }

    pub fn lane_rate(&self, gen: u8) -> Result<f64> {
        self.0.get(&gen).copied().ok_or(Error::UnsupportedPcieGen(gen))
    }

    pub fn bandwidth(&self, gen: u8, lanes: u8) -> Result<f64> {
        let per_lane = self.lane_rate(gen)?;
        if !valid_lanes(lanes) {
            return Err(Error::InvalidPcieLanes(lanes));
        }
        Ok(per_lane * f64::from(lanes))
    }
}

/// Link ceiling using the default generation table.
pub fn pcie_theoretical(gen: u8, lanes: u8) -> Result<f64> {
    PcieRates::default().bandwidth(gen, lanes)
}

/// Every ceiling derivable from a spec.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalProfile {
    pub peak_per_precision: BTreeMap<Precision, f64>,
    pub mem_bandwidth_bps: f64,
    pub texture_fill_rate_texels_s: f64,
    pub pcie_bandwidth_bps: f64,
}

impl TheoreticalProfile {
    pub fn derive(spec: &DeviceSpec, clock: ClockDomain) -> Result<Self> {
        Self::derive_with(spec, clock, &PcieRates::default())
    }

    pub fn derive_with(spec: &DeviceSpec, clock: ClockDomain, pcie: &PcieRates) -> Result<Self> {
        spec.validate()?;
        let peak_per_precision = spec
            .rates
            .iter()
            .map(|(p, _)| theoretical_peak_at(spec, p, clock).map(|v| (p, v)))
            .collect::<Result<_>>()?;
        Ok(TheoreticalProfile {
            peak_per_precision,
            mem_bandwidth_bps: memory_bandwidth(spec),
            texture_fill_rate_texels_s: texture_fill_rate(spec, spec.clock_hz(clock) as f64),
            pcie_bandwidth_bps: pcie.bandwidth(spec.pcie_gen, spec.pcie_lanes)?,
        })
    }

    pub fn peak(&self, precision: Precision) -> Option<f64> {
        self.peak_per_precision.get(&precision).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use approx::assert_relative_eq;

    fn unit_spec() -> DeviceSpec {
        DeviceSpec {
            name: "unit".into(),
            architecture: "test".into(),
            sm_count: 1,
            cuda_cores: 1,
            tmu_count: 1,
            base_clock_hz: 1,
            boost_clock_hz: 1,
            mem_bus_width_bits: 8,
            mem_clock_hz: 1,
            mem_pump_factor: 1,
            vram_bytes: 1,
            tdp_watts: 1.0,
            pcie_gen: 1,
            pcie_lanes: 1,
            rates: PrecisionRateTable::new().with(Precision::Fp32, 1.0),
        }
    }

    #[test]
    fn fp32_rate_solves_back_to_two() {
        // rate = peak / (cores * clock) against the published 12.63 TFLOPS
        let solved: f64 = 12.63e12 / (4480.0 * 1.41e9);
        assert_eq!(solved.round(), 2.0);
        let fp16: f64 = 50.53e12 / (4480.0 * 1.41e9);
        assert_eq!(fp16.round(), 8.0);
        let fp64: f64 = 6.317e12 / (4480.0 * 1.41e9);
        assert_eq!(fp64.round(), 1.0);
    }

    #[test]
    fn cmp170hx_peaks() {
        let spec = bundled::cmp170hx();
        assert_relative_eq!(theoretical_peak(&spec, Precision::Fp32).unwrap(), 12.63e12, max_relative = 0.005);
        assert_relative_eq!(theoretical_peak(&spec, Precision::Fp16).unwrap(), 50.53e12, max_relative = 0.005);
        assert_relative_eq!(theoretical_peak(&spec, Precision::Fp64).unwrap(), 6.317e12, max_relative = 0.005);
    }

    #[test]
    fn identity_peak_and_missing_rate() {
        let spec = unit_spec();
        assert_eq!(theoretical_peak(&spec, Precision::Fp32).unwrap(), 1.0);
        let err = theoretical_peak(&spec, Precision::Int8).unwrap_err();
        assert!(err.to_string().contains("unknown precision rate"));
    }

    #[test]
    fn zero_rate_rejected_at_construction() {
        let mut spec = unit_spec();
        spec.rates.insert(Precision::Fp16, 0.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn bandwidths() {
        assert_relative_eq!(memory_bandwidth(&bundled::cmp170hx()), 1493e9, max_relative = 0.005);
        assert_relative_eq!(memory_bandwidth(&bundled::a100()), 1555e9, max_relative = 0.005);
        assert_eq!(memory_bandwidth(&unit_spec()), 1.0);
    }

    #[test]
    fn fill_rates() {
        let spec = bundled::cmp170hx();
        assert_relative_eq!(texture_fill_rate(&spec, 1140e6), 319.2e9, max_relative = 1e-12);
        assert_relative_eq!(texture_fill_rate(&spec, 1410e6), 394.8e9, max_relative = 1e-12);
        assert_eq!(texture_fill_rate(&unit_spec(), 1.0), 1.0);
    }

    #[test]
    fn pcie_gen1() {
        // 2.5 GT/s per lane, 8b/10b encoding, 8 bits per byte
        let oracle_lane = 2.5e9 * 0.8 / 8.0;
        assert_relative_eq!(pcie_theoretical(1, 4).unwrap(), 4.0 * oracle_lane);
        assert_relative_eq!(pcie_theoretical(1, 4).unwrap(), 1.0e9);
        assert_relative_eq!(pcie_theoretical(1, 16).unwrap(), 4.0e9);
        assert!(matches!(pcie_theoretical(1, 0), Err(Error::InvalidPcieLanes(0))));
        assert!(matches!(pcie_theoretical(9, 4), Err(Error::UnsupportedPcieGen(9))));
    }

    #[test]
    fn spec_validation_errors() {
        let mut s = unit_spec();
        s.sm_count = 3;
        s.cuda_cores = 4;
        assert!(s.validate().is_err());
        let mut s = unit_spec();
        s.base_clock_hz = 2;
        assert!(s.validate().is_err());
        let mut s = unit_spec();
        s.pcie_lanes = 3;
        assert!(s.validate().is_err());
        let mut s = unit_spec();
        s.vram_bytes = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn profile_at_base_clock() {
        let spec = bundled::cmp170hx();
        let base = TheoreticalProfile::derive(&spec, ClockDomain::Base).unwrap();
        assert_relative_eq!(base.texture_fill_rate_texels_s, 319.2e9, max_relative = 1e-12);
        assert!(base.peak(Precision::Int32).is_none());
        assert_relative_eq!(base.pcie_bandwidth_bps, 1.0e9);
    }

    #[test]
    fn toml_round_trip() {
        let spec = bundled::cmp170hx();
        let again = DeviceSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(spec, again);
    }
}

//! Analytical LLM inference models: weight and KV-cache footprint, prefill
//! scaling by SM count, decode scaling by memory bandwidth, attainment and
//! tokens-per-watt.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::device::{memory_bandwidth, DeviceSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmModelSpec {
    pub name: String,
    pub params_total: u64,
    pub params_nonembedding: u64,
    pub layers: u64,
    pub q_heads: u64,
    pub kv_heads: u64,
    pub head_dim: u64,
    pub max_context: u64,
}

impl LlmModelSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: LlmModelSpec = toml::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidModel { model: self.name.clone(), reason };
        for (field, v) in [
            ("params_total", self.params_total),
            ("params_nonembedding", self.params_nonembedding),
            ("layers", self.layers),
            ("q_heads", self.q_heads),
            ("kv_heads", self.kv_heads),
            ("head_dim", self.head_dim),
            ("max_context", self.max_context),
        ] {
            if v == 0 {
                return Err(fail(format!("{field} must be positive")));
            }
        }
        if self.kv_heads > self.q_heads {
            return Err(fail(format!("kv_heads {} exceeds q_heads {}", self.kv_heads, self.q_heads)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantFormat {
    pub name: String,
    pub bits_per_weight: f64,
    pub kv_cache_bytes_per_elem: u32,
}

impl QuantFormat {
    pub fn new(name: impl Into<String>, bits_per_weight: f64, kv_cache_bytes_per_elem: u32) -> Result<Self> {
        let q = QuantFormat { name: name.into(), bits_per_weight, kv_cache_bytes_per_elem };
        q.validate()?;
        Ok(q)
    }

    /// From a block layout: `block_bytes * 8 / block_weights`.
    pub fn from_block(
        name: impl Into<String>,
        block_bytes: u32,
        block_weights: u32,
        kv_cache_bytes_per_elem: u32,
    ) -> Result<Self> {
        let name = name.into();
        if block_weights == 0 {
            return Err(Error::InvalidQuant { name, reason: "block_weights must be positive".into() });
        }
        Self::new(name, f64::from(block_bytes) * 8.0 / f64::from(block_weights), kv_cache_bytes_per_elem)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidQuant { name: self.name.clone(), reason };
        if !(self.bits_per_weight > 0.0 && self.bits_per_weight <= 32.0) {
            return Err(fail(format!("bits_per_weight {} outside (0, 32]", self.bits_per_weight)));
        }
        let exact = match self.name.as_str() {
            "f32" => Some(32.0),
            "f16" => Some(16.0),
            _ => None,
        };
        if let Some(bits) = exact {
            if self.bits_per_weight != bits {
                return Err(fail(format!("must be exactly {bits} bits per weight")));
            }
        }
        if self.kv_cache_bytes_per_elem == 0 {
            return Err(fail("kv_cache_bytes_per_elem must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct QuantEntry {
    name: String,
    block_bytes: u32,
    block_weights: u32,
    #[serde(default = "default_kv_bytes")]
    kv_cache_bytes_per_elem: u32,
}

fn default_kv_bytes() -> u32 {
    2
}

#[derive(Debug, Deserialize)]
struct QuantFile {
    quant: Vec<QuantEntry>,
}

/// Quantization formats by lower-case name.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTable(BTreeMap<String, QuantFormat>);

impl QuantTable {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: QuantFile = toml::from_str(text)?;
        let mut table = BTreeMap::new();
        for e in file.quant {
            let q = QuantFormat::from_block(
                e.name.to_ascii_lowercase(),
                e.block_bytes,
                e.block_weights,
                e.kv_cache_bytes_per_elem,
            )?;
            table.insert(q.name.clone(), q);
        }
        Ok(QuantTable(table))
    }

    pub fn get(&self, name: &str) -> Result<&QuantFormat> {
        self.0.get(&name.to_ascii_lowercase()).ok_or_else(|| Error::UnknownQuant(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuantFormat> {
        self.0.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        }
    }

    /// Advisory attainment band observed on the CMP 170HX.
    pub fn band(self) -> (f64, f64) {
        match self {
            Phase::Prefill => (0.14, 0.45),
            Phase::Decode => (0.39, 0.78),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prefill" | "pp" => Ok(Phase::Prefill),
            "decode" | "tg" => Ok(Phase::Decode),
            other => Err(Error::InvalidModel { model: String::new(), reason: format!("unknown phase `{other}`") }),
        }
    }
}

/// Where an attainment value sits relative to its phase's band.
pub fn band_flag(phase: Phase, attainment: f64) -> &'static str {
    let (lo, hi) = phase.band();
    if attainment < lo {
        "below-band"
    } else if attainment > hi {
        "above-band"
    } else {
        "in-band"
    }
}

/// The quantities one device contributes to a scaling prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub sm_count: u32,
    pub bandwidth_bps: f64,
}

impl ScalingPoint {
    pub fn new(sm_count: u32, bandwidth_bps: f64) -> Result<Self> {
        if sm_count == 0 {
            return Err(Error::Nonpositive("sm_count"));
        }
        if !(bandwidth_bps > 0.0) {
            return Err(Error::Nonpositive("bandwidth"));
        }
        Ok(ScalingPoint { sm_count, bandwidth_bps })
    }

    pub fn from_device(spec: &DeviceSpec) -> Result<Self> {
        spec.validate()?;
        Self::new(spec.sm_count, memory_bandwidth(spec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingBasis {
    pub reference: ScalingPoint,
    pub target: ScalingPoint,
    /// Measured tokens/s on the reference device.
    pub reference_tps: f64,
}

impl ScalingBasis {
    pub fn new(reference: ScalingPoint, target: ScalingPoint, reference_tps: f64) -> Result<Self> {
        if !(reference_tps >= 0.0) {
            return Err(Error::Nonpositive("reference throughput"));
        }
        Ok(ScalingBasis { reference, target, reference_tps })
    }

    /// Takes SM counts from the specs and bandwidth from [`memory_bandwidth`].
    pub fn from_devices(reference: &DeviceSpec, target: &DeviceSpec, reference_tps: f64) -> Result<Self> {
        Self::new(ScalingPoint::from_device(reference)?, ScalingPoint::from_device(target)?, reference_tps)
    }

    pub fn inverse(&self, target_tps: f64) -> Self {
        ScalingBasis { reference: self.target, target: self.reference, reference_tps: target_tps }
    }
}

// The device ratio is formed first so equal devices give the identity exactly.

/// Compute-bound phase: throughput scales with SM count.
pub fn scale_prefill(basis: &ScalingBasis) -> f64 {
    basis.reference_tps * (f64::from(basis.target.sm_count) / f64::from(basis.reference.sm_count))
}

/// Bandwidth-bound phase: throughput scales with memory bandwidth.
pub fn scale_decode(basis: &ScalingBasis) -> f64 {
    basis.reference_tps * (basis.target.bandwidth_bps / basis.reference.bandwidth_bps)
}

pub fn scale(phase: Phase, basis: &ScalingBasis) -> f64 {
    match phase {
        Phase::Prefill => scale_prefill(basis),
        Phase::Decode => scale_decode(basis),
    }
}

/// Weight bytes: `params_total * bits_per_weight / 8`.
pub fn weights_footprint(m: &LlmModelSpec, q: &QuantFormat) -> f64 {
    m.params_total as f64 * q.bits_per_weight / 8.0
}

/// K and V for every layer and KV head: `2 * layers * kv_heads * head_dim * context * elem_bytes`.
pub fn kv_cache_bytes(m: &LlmModelSpec, context: u64, elem_bytes: u32) -> Result<u64> {
    if context > m.max_context {
        return Err(Error::ContextOverflow { context, max: m.max_context });
    }
    Ok(2 * m.layers * m.kv_heads * m.head_dim * context * u64::from(elem_bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VramFit {
    pub fits: bool,
    pub total_bytes: f64,
    /// Negative when the model does not fit.
    pub headroom_bytes: f64,
}

pub fn fits_in_vram(
    m: &LlmModelSpec,
    q: &QuantFormat,
    context: u64,
    spec: &DeviceSpec,
    overhead_fraction: f64,
) -> Result<VramFit> {
    if !(0.0..1.0).contains(&overhead_fraction) {
        return Err(Error::InvalidModel {
            model: m.name.clone(),
            reason: format!("overhead_fraction {overhead_fraction} outside [0, 1)"),
        });
    }
    let vram = spec.vram_bytes as f64;
    let total = weights_footprint(m, q)
        + kv_cache_bytes(m, context, q.kv_cache_bytes_per_elem)? as f64
        + overhead_fraction * vram;
    Ok(VramFit { fits: total <= vram, total_bytes: total, headroom_bytes: vram - total })
}

pub fn attainment(measured_tps: f64, predicted_tps: f64) -> Result<f64> {
    if !(predicted_tps > 0.0) {
        return Err(Error::NonpositivePrediction(predicted_tps));
    }
    Ok(measured_tps / predicted_tps)
}

/// Speedup from disabling FMA as a ratio (`2.31` reads as 231% of the original).
pub fn fma_off_speedup(tps_fma_on: f64, tps_fma_off: f64) -> Result<f64> {
    if !(tps_fma_on > 0.0) {
        return Err(Error::Nonpositive("tps with FMA on"));
    }
    Ok(tps_fma_off / tps_fma_on)
}

/// Tokens per second per watt.
pub fn efficiency(tps: f64, watts: f64) -> Result<f64> {
    if !(watts > 0.0) {
        return Err(Error::Nonpositive("watts"));
    }
    Ok(tps / watts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t_s: f64,
    pub watts: f64,
}

/// Inclusive time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl PowerWindow {
    pub const ALL: PowerWindow = PowerWindow { start_s: f64::NEG_INFINITY, end_s: f64::INFINITY };

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }
}

/// Arithmetic mean of the samples inside `window`.
pub fn mean_power(samples: &[PowerSample], window: PowerWindow) -> Result<f64> {
    let (sum, n) =
        samples.iter().filter(|s| window.contains(s.t_s)).fold((0.0, 0usize), |(sum, n), s| (sum + s.watts, n + 1));
    if n == 0 {
        return Err(Error::NoPowerSamples);
    }
    Ok(sum / n as f64)
}

pub fn efficiency_from_samples(tps: f64, samples: &[PowerSample], window: PowerWindow) -> Result<f64> {
    efficiency(tps, mean_power(samples, window)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub phase: Phase,
    pub predicted_tps: f64,
    pub measured_tps: Option<f64>,
    pub attainment: Option<f64>,
    pub efficiency_tps_per_watt: Option<f64>,
}

impl PredictionResult {
    pub fn new(phase: Phase, predicted_tps: f64) -> Self {
        PredictionResult { phase, predicted_tps, measured_tps: None, attainment: None, efficiency_tps_per_watt: None }
    }

    pub fn with_measured(mut self, measured_tps: f64) -> Result<Self> {
        self.attainment = Some(attainment(measured_tps, self.predicted_tps)?);
        self.measured_tps = Some(measured_tps);
        Ok(self)
    }

    /// Efficiency of the measured rate, or of the predicted one if nothing was measured.
    pub fn with_power(mut self, watts: f64) -> Result<Self> {
        let tps = self.measured_tps.unwrap_or(self.predicted_tps);
        self.efficiency_tps_per_watt = Some(efficiency(tps, watts)?);
        Ok(self)
    }

    pub fn band_flag(&self) -> Option<&'static str> {
        self.attainment.map(|a| band_flag(self.phase, a))
    }
}

/// A stored prediction: one model/quant/phase on one target device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model: String,
    pub quant: String,
    pub phase: Phase,
    pub predicted_tps: f64,
    pub reference_device: String,
    pub reference_tps: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use approx::assert_relative_eq;

    fn basis(ref_sm: u32, ref_bw: f64, tgt_sm: u32, tgt_bw: f64, u: f64) -> ScalingBasis {
        ScalingBasis::new(ScalingPoint::new(ref_sm, ref_bw).unwrap(), ScalingPoint::new(tgt_sm, tgt_bw).unwrap(), u)
            .unwrap()
    }

    #[test]
    fn prefill_examples() {
        assert_relative_eq!(scale_prefill(&basis(108, 1.0, 70, 1.0, 100.0)), 6481.0 / 100.0, max_relative = 1e-4);
        assert_relative_eq!(scale_prefill(&basis(108, 1.0, 70, 1.0, 100.0)), 7000.0 / 108.0, max_relative = 1e-12);
        assert_eq!(scale_prefill(&basis(70, 1.0, 70, 1.0, 42.5)), 42.5);
        assert_eq!(scale_prefill(&basis(108, 1.0, 70, 1.0, 0.0)), 0.0);
    }

    #[test]
    fn decode_examples() {
        assert_relative_eq!(scale_decode(&basis(1, 1555e9, 1, 1493e9, 100.0)), 149300.0 / 1555.0, max_relative = 1e-12);
        assert_eq!(scale_decode(&basis(1, 1493e9, 1, 1493e9, 12.0)), 12.0);
        let one = scale_decode(&basis(1, 1555e9, 1, 1493e9, 100.0));
        let two = scale_decode(&basis(1, 1555e9, 1, 2.0 * 1493e9, 100.0));
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-15);
    }

    #[test]
    fn decode_from_bundled_devices() {
        let b = ScalingBasis::from_devices(&bundled::a100(), &bundled::cmp170hx(), 100.0).unwrap();
        assert_eq!(b.reference.sm_count, 108);
        assert_eq!(b.target.sm_count, 70);
        // the specs' derived bandwidths are 1555.2 and 1492.992 GB/s
        assert_relative_eq!(scale_decode(&b), 96.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_sm_rejected() {
        assert!(ScalingPoint::new(0, 1.0).is_err());
        assert!(ScalingPoint::new(1, 0.0).is_err());
    }

    #[test]
    fn footprint_examples() {
        let m = bundled::qwen2_5_1_5b();
        let q = bundled::quants();
        assert_relative_eq!(weights_footprint(&m, q.get("f16").unwrap()), 3.08e9, max_relative = 1e-12);
        assert_relative_eq!(weights_footprint(&m, q.get("f32").unwrap()), 6.16e9, max_relative = 1e-12);
        assert_relative_eq!(weights_footprint(&m, q.get("q8_0").unwrap()), 1.63625e9, max_relative = 1e-12);
    }

    /// Bytes per block summed from the gguf block struct fields.
    fn block_layout_oracle(name: &str) -> (u32, u32) {
        const F16: u32 = 2;
        match name {
            "q8_0" => (F16 + 32, 32),
            "q6_k" => (128 + 64 + 16 + F16, 256),
            "q4_k_m" => (2 * F16 + 12 + 128, 256),
            "q2_k_m" => (16 + 64 + 2 * F16, 256),
            "f16" => (2, 1),
            "f32" => (4, 1),
            other => panic!("no oracle for {other}"),
        }
    }

    #[test]
    fn quant_table_matches_block_layouts() {
        let table = bundled::quants();
        let mut seen = 0;
        for q in table.iter() {
            let (bytes, weights) = block_layout_oracle(&q.name);
            assert_eq!(q.bits_per_weight, f64::from(bytes) * 8.0 / f64::from(weights), "{}", q.name);
            seen += 1;
        }
        assert_eq!(seen, 6);
        assert_eq!(table.get("q8_0").unwrap().bits_per_weight, 8.5);
        assert_eq!(table.get("Q4_K_M").unwrap().bits_per_weight, 4.5);
        assert!(matches!(table.get("q3_k_s"), Err(Error::UnknownQuant(_))));
    }

    #[test]
    fn quant_validation() {
        assert!(QuantFormat::new("f16", 15.0, 2).is_err());
        assert!(QuantFormat::new("x", 33.0, 2).is_err());
        assert!(QuantFormat::new("x", 0.0, 2).is_err());
        assert!(QuantFormat::new("f32", 32.0, 2).is_ok());
    }

    #[test]
    fn kv_cache_examples() {
        let m = bundled::qwen2_5_1_5b();
        assert_eq!(kv_cache_bytes(&m, 32768, 2).unwrap(), 2 * 28 * 2 * 128 * 32768 * 2);
        assert_eq!(kv_cache_bytes(&m, 32768, 2).unwrap(), 939_524_096);
        assert_eq!(kv_cache_bytes(&m, 0, 2).unwrap(), 0);
        assert_eq!(kv_cache_bytes(&m, 2000, 2).unwrap() * 2, kv_cache_bytes(&m, 4000, 2).unwrap());
        let err = kv_cache_bytes(&m, 32769, 2).unwrap_err();
        assert!(err.to_string().contains("context exceeds model maximum"));
    }

    #[test]
    fn vram_fit_examples() {
        let m = bundled::qwen2_5_1_5b();
        let q = bundled::quants();
        let spec = bundled::cmp170hx();
        let fit = fits_in_vram(&m, q.get("f16").unwrap(), 32768, &spec, 0.05).unwrap();
        assert!(fit.fits);
        assert_relative_eq!(fit.total_bytes, 3.08e9 + 939_524_096.0 + 0.4e9, max_relative = 1e-12);
        assert!((fit.total_bytes / 1e9 - 4.42).abs() < 0.005);

        let huge = LlmModelSpec { params_total: 9_000_000_000, ..m.clone() };
        assert!(!fits_in_vram(&huge, q.get("f16").unwrap(), 0, &spec, 0.0).unwrap().fits);

        let bare = fits_in_vram(&m, q.get("f32").unwrap(), 0, &spec, 0.0).unwrap();
        assert_eq!(bare.total_bytes, weights_footprint(&m, q.get("f32").unwrap()));
        assert!(fits_in_vram(&m, q.get("f32").unwrap(), 0, &spec, 1.0).is_err());
    }

    #[test]
    fn attainment_and_speedup() {
        assert_eq!(attainment(45.0, 100.0).unwrap(), 0.45);
        assert_eq!(attainment(7.0, 7.0).unwrap(), 1.0);
        assert!(attainment(1.0, 0.0).is_err());
        assert_eq!(band_flag(Phase::Decode, 0.5), "in-band");
        assert_eq!(band_flag(Phase::Decode, 0.39), "in-band");
        assert_eq!(band_flag(Phase::Decode, 0.78), "in-band");
        assert_eq!(band_flag(Phase::Decode, 0.2), "below-band");
        assert_eq!(band_flag(Phase::Prefill, 0.5), "above-band");

        assert!((fma_off_speedup(10.0, 23.1).unwrap() * 100.0 - 231.0).abs() < 1e-9);
        assert_eq!(fma_off_speedup(5.0, 5.0).unwrap(), 1.0);
        assert!(fma_off_speedup(0.0, 5.0).is_err());
    }

    #[test]
    fn efficiency_examples() {
        assert_relative_eq!(efficiency(60.0, 200.0).unwrap(), 0.30);
        assert_eq!(efficiency(60.0, 200.0).unwrap(), efficiency(120.0, 400.0).unwrap());
        assert!(efficiency(1.0, 0.0).is_err());

        let samples = [
            PowerSample { t_s: 0.0, watts: 90.0 },
            PowerSample { t_s: 1.0, watts: 200.0 },
            PowerSample { t_s: 2.0, watts: 210.0 },
            PowerSample { t_s: 3.0, watts: 190.0 },
        ];
        assert_eq!(mean_power(&samples[1..], PowerWindow::ALL).unwrap(), 200.0);
        assert_eq!(mean_power(&samples, PowerWindow { start_s: 0.5, end_s: 3.0 }).unwrap(), 200.0);
        assert!(matches!(mean_power(&[], PowerWindow::ALL), Err(Error::NoPowerSamples)));
        assert!(matches!(
            efficiency_from_samples(10.0, &samples, PowerWindow { start_s: 9.0, end_s: 10.0 }),
            Err(Error::NoPowerSamples)
        ));
    }

    #[test]
    fn prediction_result_builder() {
        let r = PredictionResult::new(Phase::Decode, 96.0).with_measured(48.0).unwrap().with_power(200.0).unwrap();
        assert_eq!(r.attainment, Some(0.5));
        assert_eq!(r.efficiency_tps_per_watt, Some(0.24));
        assert_eq!(r.band_flag(), Some("in-band"));
    }
}

//! Restriction fingerprints: measured/theoretical ratios binned to the
//! nearest power of two, plus the per-precision recovery verdict.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FmaMode, Precision};
use crate::GIGA;

/// Deepest bin; anything at or below 1/1024 is effectively disabled.
pub const MAX_BIN: u8 = 10;

/// Nearest `2^-k`, with `k` in `0..=MAX_BIN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RestrictionBin(u8);

impl RestrictionBin {
    pub fn new(k: u8) -> Self {
        RestrictionBin(k.min(MAX_BIN))
    }

    pub fn k(self) -> u8 {
        self.0
    }

    pub fn is_unrestricted(self) -> bool {
        self.0 == 0
    }

    pub fn label(self) -> &'static str {
        if self.is_unrestricted() {
            "unrestricted"
        } else {
            "throttled"
        }
    }

    /// The bin's representative ratio, `2^-k`.
    pub fn fraction(self) -> f64 {
        (-f64::from(self.0)).exp2()
    }
}

impl fmt::Display for RestrictionBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} (1/{})", self.0, 1u32 << self.0)
    }
}

/// `k = round(-log2 ratio)` clamped to `[0, 10]`, half-way cases going to the
/// smaller `k`. Ratios above 1 land in bin 0.
pub fn classify(ratio: f64) -> Result<RestrictionBin> {
    if !(ratio > 0.0) || ratio.is_nan() {
        return Err(Error::NonpositiveRatio(ratio));
    }
    let x = -ratio.log2();
    let k = (x - 0.5).ceil().clamp(0.0, f64::from(MAX_BIN));
    Ok(RestrictionBin(k as u8))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintEntry {
    pub precision: Precision,
    pub fma_mode: FmaMode,
    pub measured_ops_s: f64,
    pub theoretical_ops_s: Option<f64>,
    /// Unclamped measured/theoretical.
    pub ratio: Option<f64>,
    pub bin: Option<RestrictionBin>,
}

impl FingerprintEntry {
    pub fn new(
        precision: Precision,
        fma_mode: FmaMode,
        measured_ops_s: f64,
        theoretical_ops_s: Option<f64>,
    ) -> Result<Self> {
        let (ratio, bin) = match theoretical_ops_s {
            Some(t) => {
                if !(t > 0.0) {
                    return Err(Error::Nonpositive("theoretical throughput"));
                }
                let r = measured_ops_s / t;
                (Some(r), Some(classify(r)?))
            }
            None => (None, None),
        };
        Ok(FingerprintEntry { precision, fma_mode, measured_ops_s, theoretical_ops_s, ratio, bin })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthEntry {
    pub measured_bps: f64,
    pub theoretical_bps: f64,
    pub ratio: f64,
}

impl BandwidthEntry {
    pub fn new(measured_bps: f64, theoretical_bps: f64) -> Self {
        BandwidthEntry { measured_bps, theoretical_bps, ratio: measured_bps / theoretical_bps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub device: String,
    /// Sorted by (precision, mode); at most one entry per key.
    pub entries: Vec<FingerprintEntry>,
    pub bandwidth: Option<BandwidthEntry>,
}

impl Fingerprint {
    pub fn new(device: impl Into<String>) -> Self {
        Fingerprint { device: device.into(), entries: Vec::new(), bandwidth: None }
    }

    pub fn insert(&mut self, entry: FingerprintEntry) {
        let key = (entry.precision, entry.fma_mode);
        match self.entries.binary_search_by_key(&key, |e| (e.precision, e.fma_mode)) {
            Ok(i) => self.entries[i] = entry,
            Err(i) => self.entries.insert(i, entry),
        }
    }

    pub fn entry(&self, precision: Precision, fma_mode: FmaMode) -> Option<&FingerprintEntry> {
        self.entries.iter().find(|e| e.precision == precision && e.fma_mode == fma_mode)
    }

    pub fn bin(&self, precision: Precision, fma_mode: FmaMode) -> Option<RestrictionBin> {
        self.entry(precision, fma_mode).and_then(|e| e.bin)
    }

    pub fn verdict(&self, precision: Precision) -> Verdict {
        let fused = self.entry(precision, FmaMode::Fused);
        let unfused = self.entry(precision, FmaMode::Unfused);
        if fused.or(unfused).is_some_and(|e| e.bin.is_none()) {
            return Verdict::ThroughputOnly;
        }
        match (fused.and_then(|e| e.bin), unfused.and_then(|e| e.bin)) {
            (Some(f), Some(u)) => verdict(f, u),
            (Some(f), None) if f.is_unrestricted() => Verdict::Unrestricted,
            _ => Verdict::Undetermined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Unrestricted,
    RecoverableByUnfusing,
    Unrecoverable,
    /// No theoretical rate configured for the precision.
    ThroughputOnly,
    /// Only one FMA mode was measured on a throttled precision.
    Undetermined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Unrestricted => "unrestricted",
            Verdict::RecoverableByUnfusing => "recoverable-by-unfusing",
            Verdict::Unrecoverable => "unrecoverable",
            Verdict::ThroughputOnly => "throughput-only",
            Verdict::Undetermined => "undetermined",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recovery verdict from the fused and unfused bins of one precision.
pub fn verdict(fused: RestrictionBin, unfused: RestrictionBin) -> Verdict {
    if fused.is_unrestricted() {
        Verdict::Unrestricted
    } else if unfused < fused {
        Verdict::RecoverableByUnfusing
    } else {
        Verdict::Unrecoverable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub precision: Precision,
    pub fma_mode: FmaMode,
    pub measured_ops_s: f64,
    pub theoretical_ops_s: Option<f64>,
    pub ratio: Option<f64>,
    pub bin: Option<RestrictionBin>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFragment {
    pub device: String,
    pub rows: Vec<ReportRow>,
    pub bandwidth: Option<BandwidthEntry>,
}

pub const FINGERPRINT_CSV_HEADER: &str = "precision,mode,measured_gops,theoretical_gops,ratio,bin,verdict";

pub fn restriction_report(f: &Fingerprint) -> ReportFragment {
    let rows = f
        .entries
        .iter()
        .map(|e| ReportRow {
            precision: e.precision,
            fma_mode: e.fma_mode,
            measured_ops_s: e.measured_ops_s,
            theoretical_ops_s: e.theoretical_ops_s,
            ratio: e.ratio,
            bin: e.bin,
            verdict: f.verdict(e.precision),
        })
        .collect();
    ReportFragment { device: f.device.clone(), rows, bandwidth: f.bandwidth.clone() }
}

fn opt(v: Option<String>) -> String {
    v.unwrap_or_default()
}

impl ReportFragment {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(FINGERPRINT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{},{},{},{}\n",
                r.precision,
                r.fma_mode,
                r.measured_ops_s / GIGA,
                opt(r.theoretical_ops_s.map(|t| format!("{:.3}", t / GIGA))),
                opt(r.ratio.map(|x| format!("{x:.6}"))),
                opt(r.bin.map(|b| b.k().to_string())),
                r.verdict,
            ));
        }
        out
    }

    /// Markdown table. The `x bin` column is ratio / 2^-k, showing how far
    /// each measurement sits from its bin's representative.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("### Restriction fingerprint: {}\n\n", self.device);
        out.push_str("| precision | mode | measured (GOPS) | theoretical (GOPS) | ratio | bin | x bin | verdict |\n");
        out.push_str("|---|---|---:|---:|---:|---|---:|---|\n");
        for r in &self.rows {
            let residual = r.ratio.zip(r.bin).map(|(x, b)| format!("{:.3}", x / b.fraction()));
            out.push_str(&format!(
                "| {} | {} | {:.3} | {} | {} | {} | {} | {} |\n",
                r.precision,
                r.fma_mode,
                r.measured_ops_s / GIGA,
                opt(r.theoretical_ops_s.map(|t| format!("{:.3}", t / GIGA))),
                opt(r.ratio.map(|x| format!("{x:.6}"))),
                opt(r.bin.map(|b| b.to_string())),
                opt(residual),
                r.verdict,
            ));
        }
        if let Some(bw) = &self.bandwidth {
            out.push_str(&format!(
                "\nMemory bandwidth: {:.3} GB/s measured of {:.3} GB/s theoretical (ratio {:.6}).\n",
                bw.measured_bps / GIGA,
                bw.theoretical_bps / GIGA,
                bw.ratio
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classify_examples() {
        assert_eq!(classify(0.39 / 12.63).unwrap().k(), 5);
        assert_eq!(classify(1.0).unwrap().k(), 0);
        assert_eq!(classify(1.0).unwrap().label(), "unrestricted");
        assert_eq!(classify(6.2 / 12.63).unwrap().k(), 1);
        assert_eq!(classify(6.2 / 12.63).unwrap().label(), "throttled");
        assert!(matches!(classify(0.0), Err(Error::NonpositiveRatio(_))));
        assert!(matches!(classify(-0.5), Err(Error::NonpositiveRatio(_))));
    }

    #[test]
    fn classify_edges() {
        // above 1 clamps to unrestricted
        assert_eq!(classify(1.7).unwrap().k(), 0);
        // far below the cap clamps to 10
        assert_eq!(classify(1e-9).unwrap().k(), MAX_BIN);
        // exact half-way point between 1/16 and 1/32 goes to the smaller k
        let halfway = (-4.5f64).exp2();
        assert_eq!(classify(halfway).unwrap().k(), 4);
    }

    #[test]
    fn verdict_examples() {
        let b = RestrictionBin::new;
        assert_eq!(verdict(b(5), b(1)), Verdict::RecoverableByUnfusing);
        assert_eq!(verdict(b(6), b(7)), Verdict::Unrecoverable);
        assert_eq!(verdict(b(0), b(0)), Verdict::Unrestricted);
        assert_eq!(verdict(b(3), b(3)), Verdict::Unrecoverable);
    }

    #[test]
    fn verdict_is_total_over_all_bin_pairs() {
        for f in 0..=MAX_BIN {
            for u in 0..=MAX_BIN {
                let v = verdict(RestrictionBin::new(f), RestrictionBin::new(u));
                let expected = if f == 0 {
                    Verdict::Unrestricted
                } else if u < f {
                    Verdict::RecoverableByUnfusing
                } else {
                    Verdict::Unrecoverable
                };
                assert_eq!(v, expected, "f={f} u={u}");
            }
        }
    }

    #[test]
    fn throughput_only_rows() {
        let mut f = Fingerprint::new("dev");
        f.insert(FingerprintEntry::new(Precision::Int32, FmaMode::Fused, 5e12, None).unwrap());
        let report = restriction_report(&f);
        assert_eq!(report.rows[0].verdict, Verdict::ThroughputOnly);
        assert_eq!(report.to_csv().lines().nth(1).unwrap(), "int32,fused,5000.000,,,,throughput-only");
    }

    #[test]
    fn ratio_above_one_is_preserved() {
        let e = FingerprintEntry::new(Precision::Fp16, FmaMode::Fused, 1.05, Some(1.0)).unwrap();
        assert!((e.ratio.unwrap() - 1.05).abs() < 1e-12);
        assert_eq!(e.bin.unwrap().k(), 0);
    }

    proptest! {
        #[test]
        fn classify_is_monotone(a in 1e-6f64..4.0, b in 1e-6f64..4.0) {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            prop_assert!(classify(hi).unwrap() <= classify(lo).unwrap());
        }

        #[test]
        fn bin_representatives_round_trip(k in 0u8..=MAX_BIN) {
            prop_assert_eq!(classify(RestrictionBin::new(k).fraction()).unwrap().k(), k);
        }
    }
}

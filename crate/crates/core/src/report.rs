//! Markdown reports and plot-ready CSV rendered from the results store.
//!
//! Rendering is a pure function of the record list (sorted, no wall-clock
//! values), so an identical store always yields byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::device::{memory_bandwidth, theoretical_peak, DeviceSpec};
use crate::economics::{scenarios_csv, scenarios_markdown, SalesScenario};
use crate::error::{Error, Result};
use crate::fingerprint::{restriction_report, BandwidthEntry, Fingerprint, FingerprintEntry};
use crate::ingest::LlmBenchRow;
use crate::llm::{attainment, band_flag, efficiency, fma_off_speedup, PredictionRecord};
use crate::roofline::{ridge_point, sweep_csv};
use crate::store::{BenchRecord, Payload, ResultStore};
use crate::types::{FmaMode, Measurement, Precision};
use crate::GIGA;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Fingerprint,
    Roofline,
    Llm,
    Economics,
}

impl ReportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Fingerprint => "fingerprint",
            ReportKind::Roofline => "roofline",
            ReportKind::Llm => "llm",
            ReportKind::Economics => "economics",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fingerprint" => Ok(ReportKind::Fingerprint),
            "roofline" => Ok(ReportKind::Roofline),
            "llm" => Ok(ReportKind::Llm),
            "economics" | "econ" => Ok(ReportKind::Economics),
            other => Err(Error::UnrecognizedSchema(format!("unknown report kind `{other}`"))),
        }
    }
}

/// Device specs available for theoretical ceilings, looked up by `name`.
#[derive(Debug, Clone, Default)]
pub struct ReportContext {
    pub devices: Vec<DeviceSpec>,
}

impl ReportContext {
    pub fn with_bundled_devices() -> Self {
        ReportContext { devices: vec![crate::bundled::cmp170hx(), crate::bundled::a100()] }
    }

    fn device(&self, name: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFile {
    pub name: String,
    pub contents: String,
}

/// File-name-safe form of a device name.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn measurements_by_device(records: &[BenchRecord]) -> BTreeMap<&str, Vec<&Measurement>> {
    let mut out: BTreeMap<&str, Vec<&Measurement>> = BTreeMap::new();
    for r in records {
        if let Payload::Measurement(m) = &r.payload {
            out.entry(r.device.as_str()).or_default().push(m);
        }
    }
    out
}

/// Rebuilds a fingerprint from stored measurements: per (precision, mode) the
/// median of the runs at the highest iteration count, and the median
/// bandwidth of the zero-iteration runs.
pub fn fingerprint_from_measurements(spec: &DeviceSpec, ms: &[&Measurement]) -> Result<Fingerprint> {
    let mut fp = Fingerprint::new(&spec.name);
    let mut groups: BTreeMap<(Precision, FmaMode), Vec<&Measurement>> = BTreeMap::new();
    for m in ms.iter().filter(|m| m.descriptor.compute_iters > 0) {
        groups.entry((m.descriptor.precision, m.descriptor.fma_mode)).or_default().push(m);
    }
    for ((precision, mode), group) in groups {
        let top = group.iter().map(|m| m.descriptor.compute_iters).max().unwrap_or(0);
        let measured =
            median(group.iter().filter(|m| m.descriptor.compute_iters == top).map(|m| m.ops_per_sec).collect());
        fp.insert(FingerprintEntry::new(precision, mode, measured, theoretical_peak(spec, precision).ok())?);
    }
    let memory: Vec<f64> = ms.iter().filter(|m| m.descriptor.compute_iters == 0).map(|m| m.bytes_per_sec).collect();
    if !memory.is_empty() {
        fp.bandwidth = Some(BandwidthEntry::new(median(memory), memory_bandwidth(spec)));
    }
    Ok(fp)
}

fn render_fingerprint(records: &[BenchRecord], ctx: &ReportContext) -> Result<Vec<ReportFile>> {
    let by_device = measurements_by_device(records);
    if by_device.is_empty() {
        return Err(Error::MissingInputs(vec!["measurement records".into()]));
    }
    let missing: Vec<String> =
        by_device.keys().filter(|d| ctx.device(d).is_none()).map(|d| format!("device spec for `{d}`")).collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let mut md = String::from("# Restriction fingerprints\n\n");
    let mut files = Vec::new();
    for (device, ms) in &by_device {
        let spec = ctx.device(device).expect("checked above");
        let fragment = restriction_report(&fingerprint_from_measurements(spec, ms)?);
        md.push_str(&fragment.to_markdown());
        md.push('\n');
        files.push(ReportFile { name: format!("fingerprint_{}.csv", slug(device)), contents: fragment.to_csv() });
    }
    files.insert(0, ReportFile { name: "fingerprint.md".into(), contents: md });
    Ok(files)
}

fn render_roofline(records: &[BenchRecord], ctx: &ReportContext) -> Result<Vec<ReportFile>> {
    let by_device = measurements_by_device(records);
    if by_device.is_empty() {
        return Err(Error::MissingInputs(vec!["measurement records".into()]));
    }
    let mut md = String::from("# Roofline sweeps\n");
    let mut files = Vec::new();
    for (device, ms) in &by_device {
        md.push_str(&format!("\n## {device}\n\n"));
        let spec = ctx.device(device);
        if let Some(spec) = spec {
            md.push_str(&format!("Memory roof: {:.3} GB/s\n\n", memory_bandwidth(spec) / GIGA));
        }
        md.push_str("| precision | mode | points | peak (GOPS) | ridge (ops/byte) | best measured (GOPS) | best measured (GB/s) | file |\n");
        md.push_str("|---|---|---:|---:|---:|---:|---:|---|\n");

        let mut groups: BTreeMap<(Precision, FmaMode), BTreeMap<u32, Vec<&Measurement>>> = BTreeMap::new();
        for m in ms {
            let d = &m.descriptor;
            groups.entry((d.precision, d.fma_mode)).or_default().entry(d.compute_iters).or_default().push(m);
        }
        for ((precision, mode), by_iters) in groups {
            // one row per iteration count: the run with the median throughput
            let rows: Vec<Measurement> = by_iters
                .into_values()
                .map(|mut runs| {
                    runs.sort_by(|a, b| {
                        a.ops_per_sec.total_cmp(&b.ops_per_sec).then(a.bytes_per_sec.total_cmp(&b.bytes_per_sec))
                    });
                    runs[runs.len() / 2].clone()
                })
                .collect();
            let name = format!("roofline_{}_{}_{}.csv", slug(device), precision, mode);
            let peak = spec.and_then(|s| theoretical_peak(s, precision).ok());
            let best_ops = rows.iter().map(|m| m.ops_per_sec).fold(0.0, f64::max);
            let best_bw = rows.iter().map(|m| m.bytes_per_sec).fold(0.0, f64::max);
            md.push_str(&format!(
                "| {precision} | {mode} | {} | {} | {} | {:.3} | {:.3} | {name} |\n",
                rows.len(),
                peak.map(|p| format!("{:.3}", p / GIGA)).unwrap_or_default(),
                spec.zip(peak).map(|(s, p)| format!("{:.3}", ridge_point(p, memory_bandwidth(s)))).unwrap_or_default(),
                best_ops / GIGA,
                best_bw / GIGA,
            ));
            files.push(ReportFile { name, contents: sweep_csv(&rows) });
        }
    }
    files.insert(0, ReportFile { name: "roofline.md".into(), contents: md });
    Ok(files)
}

pub const LLM_CSV_HEADER: &str = "model,quant,phase,predicted_tps,measured_tps,attainment,tps_per_watt";

struct LlmRow<'a> {
    device: &'a str,
    prediction: &'a PredictionRecord,
    mode: FmaMode,
    measured: Option<f64>,
    watts: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn render_llm(records: &[BenchRecord]) -> Result<Vec<ReportFile>> {
    let mut predictions: Vec<(&str, &PredictionRecord)> = records
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::Prediction(p) => Some((r.device.as_str(), p)),
            _ => None,
        })
        .collect();
    if predictions.is_empty() {
        return Err(Error::MissingInputs(vec!["prediction records".into()]));
    }
    predictions.sort_by(|a, b| {
        (a.0, &a.1.model, &a.1.quant, a.1.phase)
            .cmp(&(b.0, &b.1.model, &b.1.quant, b.1.phase))
            .then(a.1.predicted_tps.total_cmp(&b.1.predicted_tps))
    });
    predictions.dedup_by(|a, b| (a.0, &a.1.model, &a.1.quant, a.1.phase) == (b.0, &b.1.model, &b.1.quant, b.1.phase));

    let bench: Vec<(&str, &LlmBenchRow)> = records
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::LlmBench(b) => Some((r.device.as_str(), b)),
            _ => None,
        })
        .collect();
    let matching = |device: &str, p: &PredictionRecord, mode: FmaMode| -> Vec<&LlmBenchRow> {
        bench
            .iter()
            .filter(|(d, b)| {
                *d == device
                    && b.model.eq_ignore_ascii_case(&p.model)
                    && b.quant.eq_ignore_ascii_case(&p.quant)
                    && b.test.phase() == Some(p.phase)
                    && b.fma_mode == mode
            })
            .map(|(_, b)| *b)
            .collect()
    };

    let mut rows = Vec::new();
    for (device, p) in &predictions {
        for mode in FmaMode::BOTH {
            let hits = matching(device, p, mode);
            if hits.is_empty() && mode == FmaMode::Unfused {
                continue;
            }
            rows.push(LlmRow {
                device,
                prediction: p,
                mode,
                measured: mean(hits.iter().map(|b| b.tps_mean)),
                watts: mean(hits.iter().filter_map(|b| b.power_avg_watts)),
            });
        }
    }

    let fmt_opt = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_default();
    let mut csv_on = format!("{LLM_CSV_HEADER}\n");
    let mut csv_off = format!("{LLM_CSV_HEADER}\n");
    let mut md = String::from("# LLM throughput predictions\n\n");
    md.push_str(
        "| device | model | quant | phase | fma | predicted t/s | measured t/s | attainment | band | t/s/W |\n",
    );
    md.push_str("|---|---|---|---|---|---:|---:|---:|---|---:|\n");
    for r in &rows {
        let p = r.prediction;
        let att = r.measured.map(|m| attainment(m, p.predicted_tps)).transpose()?;
        let eff = match (r.measured, r.watts) {
            (Some(m), Some(w)) => Some(efficiency(m, w)?),
            _ => None,
        };
        let line = format!(
            "{},{},{},{:.3},{},{},{}\n",
            p.model,
            p.quant,
            p.phase,
            p.predicted_tps,
            fmt_opt(r.measured, 3),
            fmt_opt(att, 4),
            fmt_opt(eff, 4)
        );
        match r.mode {
            FmaMode::Fused => csv_on.push_str(&line),
            FmaMode::Unfused => csv_off.push_str(&line),
        }
        let fma = if r.mode == FmaMode::Fused { "on" } else { "off" };
        md.push_str(&format!(
            "| {} | {} | {} | {} | {fma} | {:.3} | {} | {} | {} | {} |\n",
            r.device,
            p.model,
            p.quant,
            p.phase,
            p.predicted_tps,
            fmt_opt(r.measured, 3),
            att.map(|a| format!("{:.1}%", a * 100.0)).unwrap_or_default(),
            att.map(|a| band_flag(p.phase, a)).unwrap_or_default(),
            fmt_opt(eff, 4),
        ));
    }
    md.push_str("\nBands: prefill 14-45%, decode 39-78% of the scaled prediction (advisory).\n");

    // FMA-off speedup per measured test
    type TestKey<'a> = (&'a str, String, String, String);
    let mut pairs: BTreeMap<TestKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (device, b) in &bench {
        let entry = pairs.entry((*device, b.model.clone(), b.quant.clone(), b.test.to_string())).or_default();
        match b.fma_mode {
            FmaMode::Fused => entry.0.push(b.tps_mean),
            FmaMode::Unfused => entry.1.push(b.tps_mean),
        }
    }
    let speedups: Vec<_> = pairs
        .into_iter()
        .filter_map(|(k, (on, off))| Some((k, mean(on.into_iter())?, mean(off.into_iter())?)))
        .collect();
    if !speedups.is_empty() {
        md.push_str("\n## FMA-off speedup\n\n| device | model | quant | test | fma on t/s | fma off t/s | % of original |\n|---|---|---|---|---:|---:|---:|\n");
        for ((device, model, quant, test), on, off) in speedups {
            md.push_str(&format!(
                "| {device} | {model} | {quant} | {test} | {on:.3} | {off:.3} | {:.1}% |\n",
                fma_off_speedup(on, off)? * 100.0
            ));
        }
    }

    Ok(vec![
        ReportFile { name: "llm.md".into(), contents: md },
        ReportFile { name: "llm.csv".into(), contents: csv_on },
        ReportFile { name: "llm_fma_off.csv".into(), contents: csv_off },
    ])
}

fn render_economics(records: &[BenchRecord]) -> Result<Vec<ReportFile>> {
    // latest record per scenario name, in first-seen order
    let mut scenarios: Vec<SalesScenario> = Vec::new();
    for r in records {
        if let Payload::Scenario(s) = &r.payload {
            match scenarios.iter_mut().find(|x| x.name == s.name) {
                Some(slot) => *slot = s.clone(),
                None => scenarios.push(s.clone()),
            }
        }
    }
    if scenarios.is_empty() {
        return Err(Error::MissingInputs(vec!["scenario records".into()]));
    }
    let md = format!("# Estimated unit sales\n\n{}", scenarios_markdown(&scenarios)?);
    Ok(vec![
        ReportFile { name: "economics.md".into(), contents: md },
        ReportFile { name: "economics.csv".into(), contents: scenarios_csv(&scenarios)? },
    ])
}

pub fn render_report(records: &[BenchRecord], kind: ReportKind, ctx: &ReportContext) -> Result<Vec<ReportFile>> {
    if records.is_empty() {
        let needed = match kind {
            ReportKind::Fingerprint | ReportKind::Roofline => "measurement records",
            ReportKind::Llm => "prediction records",
            ReportKind::Economics => "scenario records",
        };
        return Err(Error::MissingInputs(vec![needed.into()]));
    }
    match kind {
        ReportKind::Fingerprint => render_fingerprint(records, ctx),
        ReportKind::Roofline => render_roofline(records, ctx),
        ReportKind::Llm => render_llm(records),
        ReportKind::Economics => render_economics(records),
    }
}

/// Renders `kind` from the store and writes every file into `out_dir`.
/// Nothing is written if any input is missing.
pub fn emit_report(
    store: &ResultStore,
    kind: ReportKind,
    ctx: &ReportContext,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let files = render_report(&store.read_all()?, kind, ctx)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    files
        .into_iter()
        .map(|f| {
            let path = out_dir.join(&f.name);
            std::fs::write(&path, f.contents).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("NVIDIA CMP 170HX"), "nvidia-cmp-170hx");
        assert_eq!(slug("A100 (40GB)"), "a100-40gb");
    }

    #[test]
    fn empty_store_lists_required_kinds() {
        let err = render_report(&[], ReportKind::Fingerprint, &ReportContext::default()).unwrap_err();
        assert!(err.to_string().contains("measurement records"));
        let err = render_report(&[], ReportKind::Economics, &ReportContext::default()).unwrap_err();
        assert!(err.to_string().contains("scenario records"));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

//! Parsers for external benchmark outputs.
//!
//! Every ingest returns an [`IngestOutcome`]: rows that parsed plus one
//! [`RowError`] per row that did not, so `rows_seen == rows.len() + errors.len()`.
//! Header problems are fatal and reported as [`Error::UnrecognizedSchema`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::PowerSample;
use crate::roofline::operational_intensity;
use crate::types::{Api, FmaMode, KernelDescriptor, Measurement, Precision};
use crate::GIGA;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome<T> {
    pub rows: Vec<T>,
    pub errors: Vec<RowError>,
    pub rows_seen: usize,
}

impl<T> IngestOutcome<T> {
    fn new() -> Self {
        IngestOutcome { rows: Vec::new(), errors: Vec::new(), rows_seen: 0 }
    }

    fn push(&mut self, line: usize, row: std::result::Result<T, String>) {
        self.rows_seen += 1;
        match row {
            Ok(r) => self.rows.push(r),
            Err(message) => self.errors.push(RowError { line, message }),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).comment(Some(b'#')).from_reader(text.as_bytes())
}

fn num<T: FromStr>(field: Option<&str>, name: &str) -> std::result::Result<T, String> {
    let raw = field.ok_or_else(|| format!("missing {name}"))?;
    raw.parse().map_err(|_| format!("{name}: cannot parse `{raw}`"))
}

// ---------------------------------------------------------------- mixbench

/// How to interpret a mixbench-style sweep that carries no precision column.
#[derive(Debug, Clone, Copy)]
pub struct MixbenchOptions {
    pub precision: Precision,
    pub fma_mode: FmaMode,
    pub api: Api,
    pub ingested_at: DateTime<Utc>,
}

impl Default for MixbenchOptions {
    fn default() -> Self {
        MixbenchOptions {
            precision: Precision::Fp32,
            fma_mode: FmaMode::Fused,
            api: Api::CudaLike,
            ingested_at: DateTime::UNIX_EPOCH,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum MixColumn {
    Iters,
    Intensity,
    /// Multiplier to seconds.
    Time(f64),
    Gops,
    Gbps,
}

fn mix_column(header: &str) -> Option<MixColumn> {
    let h = header.trim().to_ascii_lowercase();
    let h = h.strip_prefix("sp ").or_else(|| h.strip_prefix("dp ")).or_else(|| h.strip_prefix("hp ")).unwrap_or(&h);
    Some(match h {
        "compute_iters" | "compute iters" => MixColumn::Iters,
        "flops_per_byte" | "flops/byte" | "iops/byte" | "ops/byte" => MixColumn::Intensity,
        "ex_time_s" => MixColumn::Time(1.0),
        "ex.time" | "ex_time_ms" => MixColumn::Time(1e-3),
        "gops" | "gflops" | "giops" => MixColumn::Gops,
        "gbps" | "gb/sec" | "gb/s" => MixColumn::Gbps,
        _ => return None,
    })
}

/// Column positions of a validated mixbench header.
struct MixLayout {
    iters: usize,
    intensity: usize,
    time: usize,
    time_scale: f64,
    gops: usize,
    gbps: usize,
}

impl MixLayout {
    fn from_headers(headers: &csv::StringRecord) -> Result<Self> {
        let (mut iters, mut intensity, mut time, mut gops, mut gbps) = (None, None, None, None, None);
        for (i, h) in headers.iter().enumerate().filter(|(_, h)| !h.is_empty()) {
            match mix_column(h).ok_or_else(|| Error::UnrecognizedSchema(format!("unknown column `{h}`")))? {
                MixColumn::Iters => iters = Some(i),
                MixColumn::Intensity => intensity = Some(i),
                MixColumn::Time(scale) => time = Some((i, scale)),
                MixColumn::Gops => gops = Some(i),
                MixColumn::Gbps => gbps = Some(i),
            }
        }
        let missing = |label: &str| Error::UnrecognizedSchema(format!("missing column {label}"));
        let (time, time_scale) = time.ok_or_else(|| missing("Ex.time"))?;
        Ok(MixLayout {
            iters: iters.ok_or_else(|| missing("Compute iters"))?,
            intensity: intensity.ok_or_else(|| missing("Flops/byte"))?,
            time,
            time_scale,
            gops: gops.ok_or_else(|| missing("GFLOPS"))?,
            gbps: gbps.ok_or_else(|| missing("GB/sec"))?,
        })
    }
}

/// Intensity mismatch (relative) tolerated between a row and the descriptor formula.
const INTENSITY_TOLERANCE: f64 = 5e-3;

pub fn parse_mixbench_csv(text: &str, opts: &MixbenchOptions) -> Result<IngestOutcome<Measurement>> {
    let mut reader = csv_reader(text);
    let layout = MixLayout::from_headers(reader.headers()?)?;

    let mut out = IngestOutcome::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                out.push(line, Err(e.to_string()));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        out.push(line, mixbench_row(&record, &layout, opts));
    }
    Ok(out)
}

fn mixbench_row(
    record: &csv::StringRecord,
    layout: &MixLayout,
    opts: &MixbenchOptions,
) -> std::result::Result<Measurement, String> {
    let iters: u32 = num(record.get(layout.iters), "compute iters")?;
    let intensity: f64 = num(record.get(layout.intensity), "flops/byte")?;
    let exec_time_s = num::<f64>(record.get(layout.time), "ex.time")? * layout.time_scale;
    let gops: f64 = num(record.get(layout.gops), "GFLOPS")?;
    let gbps: f64 = num(record.get(layout.gbps), "GB/sec")?;
    if !(exec_time_s > 0.0) {
        return Err(format!("ex.time must be positive, got {exec_time_s}"));
    }
    if !(gops >= 0.0 && gbps >= 0.0) {
        return Err("negative throughput".to_string());
    }
    let mut d = KernelDescriptor::new(opts.precision, iters, opts.fma_mode);
    let expected = operational_intensity(&d);
    if ((intensity - expected) / expected).abs() > INTENSITY_TOLERANCE {
        return Err(format!(
            "flops/byte {intensity} does not match {} intensity {expected} at {iters} iterations",
            opts.precision
        ));
    }
    // bytes moved, in whole elements
    let eb = u64::from(d.element_bytes);
    d.buffer_bytes = ((gbps * GIGA * exec_time_s / eb as f64).round() as u64 * eb).max(eb);
    Ok(Measurement {
        descriptor: d,
        ops_per_sec: gops * GIGA,
        bytes_per_sec: gbps * GIGA,
        exec_time_s,
        power_watts: None,
        api: opts.api,
        timestamp: opts.ingested_at,
    })
}

pub fn ingest_mixbench_csv(path: impl AsRef<Path>, opts: &MixbenchOptions) -> Result<IngestOutcome<Measurement>> {
    parse_mixbench_csv(&read(path.as_ref())?, opts)
}

// ------------------------------------------------------------- llama-bench

/// A llama-bench test label: `pp512`, `tg128` or `pp512+tg128`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LlmTest {
    Pp(u32),
    Tg(u32),
    Pg(u32, u32),
}

impl fmt::Display for LlmTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LlmTest::Pp(n) => write!(f, "pp{n}"),
            LlmTest::Tg(n) => write!(f, "tg{n}"),
            LlmTest::Pg(p, n) => write!(f, "pp{p}+tg{n}"),
        }
    }
}

impl FromStr for LlmTest {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        let count = |t: &str| t.parse::<u32>().map_err(|_| format!("unknown test label `{s}`"));
        if let Some((p, n)) = s.split_once('+') {
            let p = p.strip_prefix("pp").ok_or_else(|| format!("unknown test label `{s}`"))?;
            let n = n.strip_prefix("tg").ok_or_else(|| format!("unknown test label `{s}`"))?;
            return Ok(LlmTest::Pg(count(p)?, count(n)?));
        }
        if let Some(rest) = s.strip_prefix("pg") {
            let (p, n) = rest.split_once(',').ok_or_else(|| format!("unknown test label `{s}`"))?;
            return Ok(LlmTest::Pg(count(p)?, count(n)?));
        }
        if let Some(n) = s.strip_prefix("pp") {
            return Ok(LlmTest::Pp(count(n)?));
        }
        if let Some(n) = s.strip_prefix("tg") {
            return Ok(LlmTest::Tg(count(n)?));
        }
        Err(format!("unknown test label `{s}`"))
    }
}

impl Serialize for LlmTest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LlmTest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl LlmTest {
    /// Prompt processing maps to prefill, generation to decode.
    pub fn phase(self) -> Option<crate::llm::Phase> {
        match self {
            LlmTest::Pp(_) => Some(crate::llm::Phase::Prefill),
            LlmTest::Tg(_) => Some(crate::llm::Phase::Decode),
            LlmTest::Pg(..) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmBenchRow {
    pub model: String,
    pub quant: String,
    pub test: LlmTest,
    pub tps_mean: f64,
    pub tps_stddev: f64,
    pub fma_mode: FmaMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_avg_watts: Option<f64>,
}

impl LlmBenchRow {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.tps_mean > 0.0) {
            return Err(format!("avg_ts must be positive, got {}", self.tps_mean));
        }
        if !(self.tps_stddev >= 0.0) {
            return Err(format!("stddev_ts must be non-negative, got {}", self.tps_stddev));
        }
        if let Some(w) = self.power_avg_watts {
            if !(w > 0.0) {
                return Err(format!("power_w must be positive, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlamaFormat {
    Csv,
    Jsonl,
}

impl FromStr for LlamaFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(LlamaFormat::Csv),
            "jsonl" => Ok(LlamaFormat::Jsonl),
            other => Err(Error::UnrecognizedSchema(format!("unknown llama-bench format `{other}`"))),
        }
    }
}

/// One llama-bench row as exported, before validation. Field names follow
/// the pinned v1 schema: `model,quant,test,avg_ts,stddev_ts[,fma][,power_w]`,
/// where `test` may be replaced by llama-bench's own `n_prompt`/`n_gen`.
#[derive(Debug, Deserialize)]
struct RawLlamaRow {
    model: String,
    quant: String,
    #[serde(default)]
    test: Option<String>,
    #[serde(default)]
    n_prompt: Option<u32>,
    #[serde(default)]
    n_gen: Option<u32>,
    avg_ts: f64,
    stddev_ts: f64,
    #[serde(default)]
    fma: Option<String>,
    #[serde(default)]
    power_w: Option<f64>,
}

impl RawLlamaRow {
    fn into_row(self) -> std::result::Result<LlmBenchRow, String> {
        let test = match (self.test.as_deref().filter(|t| !t.is_empty()), self.n_prompt, self.n_gen) {
            (Some(t), _, _) => t.parse()?,
            (None, Some(p), Some(0)) => LlmTest::Pp(p),
            (None, Some(0), Some(n)) => LlmTest::Tg(n),
            (None, Some(p), Some(n)) => LlmTest::Pg(p, n),
            _ => return Err("row has neither test nor n_prompt/n_gen".into()),
        };
        let fma_mode = match self.fma.as_deref().filter(|f| !f.is_empty()) {
            Some(f) => f.parse().map_err(|e: Error| e.to_string())?,
            None => FmaMode::Fused,
        };
        let row = LlmBenchRow {
            model: self.model,
            quant: self.quant.to_ascii_lowercase(),
            test,
            tps_mean: self.avg_ts,
            tps_stddev: self.stddev_ts,
            fma_mode,
            power_avg_watts: self.power_w,
        };
        row.validate()?;
        Ok(row)
    }
}

pub fn parse_llama_bench(text: &str, format: LlamaFormat) -> Result<IngestOutcome<LlmBenchRow>> {
    let mut out = IngestOutcome::new();
    match format {
        LlamaFormat::Csv => {
            let mut reader = csv_reader(text);
            let headers = reader.headers()?.clone();
            let has = |name: &str| headers.iter().any(|h| h == name);
            for required in ["model", "quant", "avg_ts", "stddev_ts"] {
                if !has(required) {
                    return Err(Error::UnrecognizedSchema(format!("missing column {required}")));
                }
            }
            if !has("test") && !(has("n_prompt") && has("n_gen")) {
                return Err(Error::UnrecognizedSchema("missing column test (or n_prompt and n_gen)".into()));
            }
            for record in reader.records() {
                let (line, row) = match record {
                    Ok(r) => {
                        let line = r.position().map_or(0, |p| p.line() as usize);
                        let raw: std::result::Result<RawLlamaRow, _> = r.deserialize(Some(&headers));
                        (line, raw.map_err(|e| e.to_string()).and_then(RawLlamaRow::into_row))
                    }
                    Err(e) => (e.position().map_or(0, |p| p.line() as usize), Err(e.to_string())),
                };
                out.push(line, row);
            }
        }
        LlamaFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row = serde_json::from_str::<RawLlamaRow>(line)
                    .map_err(|e| e.to_string())
                    .and_then(RawLlamaRow::into_row);
                out.push(i + 1, row);
            }
        }
    }
    Ok(out)
}

pub fn ingest_llama_bench(path: impl AsRef<Path>, format: LlamaFormat) -> Result<IngestOutcome<LlmBenchRow>> {
    parse_llama_bench(&read(path.as_ref())?, format)
}

// --------------------------------------------------------------- power log

fn parse_timestamp(raw: &str) -> Option<f64> {
    if let Ok(t) = raw.parse::<f64>() {
        return Some(t);
    }
    // nvidia-smi --query-gpu=timestamp,power.draw --format=csv
    let dt = NaiveDateTime::parse_from_str(raw, "%Y/%m/%d %H:%M:%S%.f").ok()?;
    let utc = dt.and_utc();
    Some(utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9)
}

fn parse_watts(raw: &str) -> Option<f64> {
    raw.trim().trim_end_matches('W').trim().parse().ok()
}

/// Two-column `timestamp,watts` samples. Timestamps are seconds, or
/// nvidia-smi's `YYYY/MM/DD HH:MM:SS.fff`; watts may carry a ` W` suffix.
/// An optional header line is skipped.
pub fn parse_power_log(text: &str, path: &Path) -> Result<Vec<PowerSample>> {
    let mut out: Vec<PowerSample> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_owned(), line: line_no, message };
        let (ts, w) = trimmed.split_once(',').ok_or_else(|| parse_err("expected `timestamp,watts`".into()))?;
        let (Some(t_s), Some(watts)) = (parse_timestamp(ts.trim()), parse_watts(w)) else {
            if out.is_empty() && line_no == 1 {
                continue; // header
            }
            return Err(parse_err(format!("cannot parse sample `{trimmed}`")));
        };
        if out.last().is_some_and(|prev| t_s < prev.t_s) {
            return Err(Error::UnorderedPowerLog { line: line_no });
        }
        out.push(PowerSample { t_s, watts });
    }
    Ok(out)
}

pub fn ingest_power_log(path: impl AsRef<Path>) -> Result<Vec<PowerSample>> {
    let path = path.as_ref();
    parse_power_log(&read(path)?, path)
}

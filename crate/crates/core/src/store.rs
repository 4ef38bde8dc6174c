//! Append-only JSONL results store.
//!
//! One [`BenchRecord`] per line. Writers take an exclusive advisory lock on
//! the file for the duration of an append; readers take a shared one.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::economics::SalesScenario;
use crate::error::{Error, Result};
use crate::ingest::LlmBenchRow;
use crate::llm::PredictionRecord;
use crate::types::Measurement;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the store location.
pub const STORE_ENV: &str = "CMPSCOPE_STORE";
pub const DEFAULT_STORE: &str = "results.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    MixbenchLike,
    OpenclBenchLike,
    LlamaBench,
    Simulated,
    /// Computed by this tool (predictions, sales scenarios).
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    Measurement(Measurement),
    LlmBench(LlmBenchRow),
    Prediction(PredictionRecord),
    Scenario(SalesScenario),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Measurement(_) => "measurement",
            Payload::LlmBench(_) => "llm-bench",
            Payload::Prediction(_) => "prediction",
            Payload::Scenario(_) => "scenario",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub schema_version: u32,
    pub source: Source,
    pub device: String,
    pub ingested_at: DateTime<Utc>,
    pub payload: Payload,
}

impl BenchRecord {
    pub fn new(source: Source, device: impl Into<String>, ingested_at: DateTime<Utc>, payload: Payload) -> Self {
        BenchRecord { schema_version: SCHEMA_VERSION, source, device: device.into(), ingested_at, payload }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultStore {
    path: PathBuf,
}

impl ResultStore {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        ResultStore { path: path.into() }
    }

    /// `$CMPSCOPE_STORE`, or `results.jsonl` in the working directory.
    pub fn from_env() -> Self {
        Self::open(std::env::var_os(STORE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, records: &[BenchRecord]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for r in records {
            buf.push_str(&r.to_json_line()?);
            buf.push('\n');
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let io = |e| Error::io(&self.path, e);
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        file.lock().map_err(io)?;
        let written = file.write_all(buf.as_bytes()).and_then(|_| file.flush());
        file.unlock().map_err(io)?;
        written.map_err(io)
    }

    /// Every record in file order. A missing file is an empty store.
    pub fn read_all(&self) -> Result<Vec<BenchRecord>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        file.lock_shared().map_err(|e| Error::io(&self.path, e))?;
        let records = parse_lines(BufReader::new(&file), &self.path);
        file.unlock().map_err(|e| Error::io(&self.path, e))?;
        records
    }
}

fn parse_lines(reader: impl BufRead, path: &Path) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion(version));
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Api, FmaMode, KernelDescriptor, Precision};

    fn record(i: u32) -> BenchRecord {
        let m = Measurement {
            descriptor: KernelDescriptor::new(Precision::Fp32, i, FmaMode::Fused),
            ops_per_sec: 1.0 / 3.0 * f64::from(i + 1),
            bytes_per_sec: 0.1,
            exec_time_s: 1e-3,
            power_watts: None,
            api: Api::Simulated,
            timestamp: DateTime::UNIX_EPOCH,
        };
        BenchRecord::new(Source::Simulated, "dev", DateTime::UNIX_EPOCH, Payload::Measurement(m))
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path().join("nested/results.jsonl"));
        assert!(store.read_all().unwrap().is_empty());
        store.append(&[record(1), record(2)]).unwrap();
        store.append(&[record(3)]).unwrap();
        assert_eq!(store.read_all().unwrap(), vec![record(1), record(2), record(3)]);
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let good = record(0).to_json_line().unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match ResultStore::open(&path).read_all() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn future_schema_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let line = record(0).to_json_line().unwrap().replace("\"schema_version\":1", "\"schema_version\":7");
        std::fs::write(&path, line).unwrap();
        assert!(matches!(ResultStore::open(&path).read_all(), Err(Error::SchemaVersion(7))));
    }
}

//! Data files shipped with the repository, embedded at compile time.
//!
//! Loader functions accept either a bundled name (`cmp170hx`) or a path to a
//! file on disk.

use std::path::Path;

use crate::economics::ScenarioFile;
use crate::error::{Error, Result};
use crate::llm::{LlmModelSpec, QuantTable};
use crate::sim::SimProfile;
use crate::DeviceSpec;

pub const SPECS: &[(&str, &str)] = &[
    ("cmp170hx", include_str!("../../../specs/cmp170hx.toml")),
    ("a100-40g", include_str!("../../../specs/a100-40g.toml")),
];

pub const PROFILES: &[(&str, &str)] = &[
    ("cmp170hx-truth", include_str!("../../../profiles/cmp170hx-truth.toml")),
    ("a100-truth", include_str!("../../../profiles/a100-truth.toml")),
];

pub const MODELS: &[(&str, &str)] = &[("qwen2.5-1.5b", include_str!("../../../models/qwen2.5-1.5b.toml"))];

pub const QUANTS: &str = include_str!("../../../quants.toml");

pub const SCENARIOS: &[(&str, &str)] = &[("cmp-2022", include_str!("../../../economics/cmp-2022.toml"))];

fn lookup<'a>(table: &'a [(&str, &str)], name: &str) -> Option<&'a str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Reads `name_or_path` from disk if it names an existing file, otherwise
/// looks it up in `table`.
fn resolve(table: &[(&str, &str)], name_or_path: &str, kind: &str) -> Result<String> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        return std::fs::read_to_string(path).map_err(|e| Error::io(path, e));
    }
    lookup(table, name_or_path).map(str::to_owned).ok_or_else(|| {
        let known: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no such {kind} file or bundled name (bundled: {})", known.join(", ")),
            ),
        )
    })
}

pub fn device(name_or_path: &str) -> Result<DeviceSpec> {
    DeviceSpec::from_toml_str(&resolve(SPECS, name_or_path, "device spec")?)
}

pub fn profile(name_or_path: &str) -> Result<SimProfile> {
    SimProfile::from_toml_str(&resolve(PROFILES, name_or_path, "profile")?)
}

pub fn model(name_or_path: &str) -> Result<LlmModelSpec> {
    LlmModelSpec::from_toml_str(&resolve(MODELS, name_or_path, "model")?)
}

pub fn quants() -> QuantTable {
    QuantTable::from_toml_str(QUANTS).expect("bundled quants.toml is valid")
}

pub fn scenarios(name_or_path: &str) -> Result<ScenarioFile> {
    ScenarioFile::from_toml_str(&resolve(SCENARIOS, name_or_path, "scenario")?)
}

pub fn cmp170hx() -> DeviceSpec {
    device("cmp170hx").expect("bundled cmp170hx spec is valid")
}

pub fn a100() -> DeviceSpec {
    device("a100-40g").expect("bundled a100 spec is valid")
}

pub fn cmp170hx_truth() -> SimProfile {
    profile("cmp170hx-truth").expect("bundled cmp170hx truth profile is valid")
}

pub fn qwen2_5_1_5b() -> LlmModelSpec {
    model("qwen2.5-1.5b").expect("bundled qwen model is valid")
}

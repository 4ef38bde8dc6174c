use std::path::Path;

use chrono::{DateTime, Utc};

use cmpscope_core::report::{emit_report, render_report, ReportContext, ReportKind};
use cmpscope_core::{
    bundled, run_fingerprint_campaign, BenchRecord, Payload, Precision, ResultStore, SimExecutor, Source,
};

fn campaign_records() -> Vec<BenchRecord> {
    let spec = bundled::cmp170hx();
    let precisions = [Precision::Fp32, Precision::Fp64, Precision::Fp16].into();
    let mut ex = SimExecutor::new(bundled::cmp170hx_truth());
    let campaign = run_fingerprint_campaign(&mut ex, &spec, &precisions, 1024).unwrap();
    campaign
        .measurements
        .into_iter()
        .map(|m| BenchRecord::new(Source::Simulated, &spec.name, DateTime::<Utc>::UNIX_EPOCH, Payload::Measurement(m)))
        .collect()
}

#[test]
fn identical_stores_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let store = ResultStore::open(dir.path().join("results.jsonl"));
    store.append(&campaign_records()).unwrap();
    let scenarios = bundled::scenarios("cmp-2022").unwrap().scenarios().unwrap();
    let econ: Vec<_> = scenarios
        .into_iter()
        .map(|s| BenchRecord::new(Source::Derived, "", DateTime::<Utc>::UNIX_EPOCH, Payload::Scenario(s)))
        .collect();
    store.append(&econ).unwrap();

    let ctx = ReportContext::with_bundled_devices();
    for kind in [ReportKind::Fingerprint, ReportKind::Roofline, ReportKind::Economics] {
        let a = emit_report(&store, kind, &ctx, dir.path().join("a")).unwrap();
        let b = emit_report(&store, kind, &ctx, dir.path().join("b")).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.file_name(), pb.file_name());
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{}", pa.display());
        }
    }
}

#[test]
fn fingerprint_report_matches_golden() {
    let files =
        render_report(&campaign_records(), ReportKind::Fingerprint, &ReportContext::with_bundled_devices()).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for f in files {
        let path = golden.join(&f.name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &f.contents).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(f.contents, want, "{} drifted; rerun with UPDATE_GOLDEN=1 and review", f.name);
    }
}

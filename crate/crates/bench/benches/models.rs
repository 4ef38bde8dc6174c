use std::collections::BTreeSet;

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use cmpscope_core::roofline::doubling_ladder;
use cmpscope_core::{
    bundled, classify, memory_bandwidth, run_fingerprint_campaign, scenario_totals, simulate, sweep, theoretical_peak,
    FmaMode, KernelDescriptor, Precision, SimExecutor,
};

fn roofline(c: &mut Criterion) {
    let spec = bundled::cmp170hx();
    let peak = theoretical_peak(&spec, Precision::Fp32).unwrap();
    let bw = memory_bandwidth(&spec);
    let template = KernelDescriptor::new(Precision::Fp32, 0, FmaMode::Fused);
    let iters: Vec<u32> = (0..4096).collect();
    c.bench_function("sweep_4096", |b| b.iter(|| sweep(black_box(&template), &iters, peak, bw).unwrap()));
}

fn simulator(c: &mut Criterion) {
    let profile = bundled::cmp170hx_truth().with_noise(0.02, 7);
    let ladder = doubling_ladder(1024);
    c.bench_function("simulate_ladder", |b| {
        b.iter(|| {
            for &i in &ladder {
                black_box(simulate(&profile, &KernelDescriptor::new(Precision::Fp32, i, FmaMode::Unfused)).unwrap());
            }
        })
    });

    let spec = bundled::cmp170hx();
    let precisions: BTreeSet<_> = [Precision::Fp32, Precision::Fp64, Precision::Fp16].into();
    c.bench_function("fingerprint_campaign", |b| {
        b.iter(|| {
            let mut ex = SimExecutor::new(bundled::cmp170hx_truth());
            run_fingerprint_campaign(&mut ex, &spec, &precisions, 1024).unwrap()
        })
    });
}

fn classification(c: &mut Criterion) {
    let ratios: Vec<f64> = (1..=1000).map(|i| f64::from(i) / 1000.0).collect();
    c.bench_function("classify_1000", |b| {
        b.iter(|| ratios.iter().map(|&r| classify(black_box(r)).unwrap().k() as u32).sum::<u32>())
    });
}

fn economics(c: &mut Criterion) {
    let scenarios = bundled::scenarios("cmp-2022").unwrap().scenarios().unwrap();
    c.bench_function("scenario_totals", |b| {
        b.iter(|| scenarios.iter().map(|s| scenario_totals(black_box(s)).unwrap().total).sum::<u64>())
    });
}

criterion_group!(benches, roofline, simulator, classification, economics);
criterion_main!(benches);

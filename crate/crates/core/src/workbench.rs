//! Microbenchmark kernel generation, build plans, and fingerprint campaigns.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{memory_bandwidth, theoretical_peak, DeviceSpec};
use crate::error::{Error, Result};
use crate::fingerprint::{BandwidthEntry, Fingerprint, FingerprintEntry};
use crate::roofline::{operational_intensity, ridge_point};
use crate::types::{FmaMode, KernelDescriptor, Measurement, Precision, Toolchain, DEFAULT_BUFFER_BYTES};

/// Disables implicit contraction of `a * b + c`.
pub const CONTRACT_OFF: &str = "#pragma OPENCL FP_CONTRACT OFF";
/// Rewrites explicit `fma()` calls into a separate multiply and add.
pub const FMA_REWRITE: &str = "#define fma(a, b, c) ((a) * (b) + (c))";
/// nvcc flag that stops multiply-add contraction.
pub const FMAD_DISABLE_FLAG: &str = "-fmad=false";

/// Compute-bound floor for campaign descriptors (c = 1024 at fp32).
pub const MIN_CAMPAIGN_INTENSITY: f64 = 512.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSource {
    pub descriptor: KernelDescriptor,
    pub source_text: String,
    pub entry_point: String,
    pub contraction_guard: bool,
}

impl KernelSource {
    /// `<precision>_<iters>_<mode>.clc`
    pub fn file_name(&self) -> String {
        let d = &self.descriptor;
        format!("{}_{}_{}.clc", d.precision, d.compute_iters, d.fma_mode)
    }

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, &self.source_text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

struct Template {
    extension: Option<&'static str>,
    /// Elements handled per work-item.
    vector_width: u32,
    body: &'static str,
}

// `{ITERS}` is substituted; every loop iteration is one multiply-add
// (2 ops per element) and the store adds one more op per element.
const FP32: Template = Template {
    extension: None,
    vector_width: 1,
    body: "__kernel void bench_fp32(__global float* restrict data, const float seed) {
    const size_t gid = get_global_id(0);
    const float x = data[gid];
    float s = x;
    for (uint i = 0u; i < ITERS; i++) {
        s = fma(s, x, seed);
    }
    data[gid] = s + seed;
}
",
};

const FP64: Template = Template {
    extension: Some("#pragma OPENCL EXTENSION cl_khr_fp64 : enable"),
    vector_width: 1,
    body: "__kernel void bench_fp64(__global double* restrict data, const double seed) {
    const size_t gid = get_global_id(0);
    const double x = data[gid];
    double s = x;
    for (uint i = 0u; i < ITERS; i++) {
        s = fma(s, x, seed);
    }
    data[gid] = s + seed;
}
",
};

const FP16: Template = Template {
    extension: Some("#pragma OPENCL EXTENSION cl_khr_fp16 : enable"),
    vector_width: 2,
    body: "__kernel void bench_fp16(__global half2* restrict data, const float seed) {
    const size_t gid = get_global_id(0);
    const half2 x = data[gid];
    const half2 y = (half2)((half)seed, (half)seed);
    half2 s = x;
    for (uint i = 0u; i < ITERS; i++) {
        s = fma(s, x, y);
    }
    data[gid] = s + y;
}
",
};

const INT32: Template = Template {
    extension: None,
    vector_width: 1,
    body: "__kernel void bench_int32(__global int* restrict data, const int seed) {
    const size_t gid = get_global_id(0);
    const int x = data[gid];
    int s = x;
    for (uint i = 0u; i < ITERS; i++) {
        s = s * x + seed;
    }
    data[gid] = s + seed;
}
",
};

const INT8: Template = Template {
    extension: None,
    vector_width: 4,
    body: "__kernel void bench_int8(__global char4* restrict data, const int seed) {
    const size_t gid = get_global_id(0);
    const int4 x = convert_int4(data[gid]);
    const int4 y = (int4)(seed);
    int4 s = x;
    for (uint i = 0u; i < ITERS; i++) {
        s = s * x + y;
    }
    data[gid] = convert_char4(s + y);
}
",
};

fn template_for(precision: Precision) -> Option<&'static Template> {
    match precision {
        Precision::Fp32 => Some(&FP32),
        Precision::Fp64 => Some(&FP64),
        Precision::Fp16 => Some(&FP16),
        Precision::Int32 => Some(&INT32),
        Precision::Int8 => Some(&INT8),
        Precision::Int16 => None,
    }
}

/// Instantiates the OpenCL C microbenchmark for `d`.
///
/// Fused and unfused sources differ only by the two guard lines
/// ([`CONTRACT_OFF`] and [`FMA_REWRITE`]).
pub fn generate_kernel(d: &KernelDescriptor) -> Result<KernelSource> {
    d.validate()?;
    let template = template_for(d.precision).ok_or(Error::NoTemplate(d.precision))?;
    if d.flops_per_iter != 2 || d.extra_flops != 1 || d.element_bytes != d.precision.element_bytes() {
        return Err(Error::InvalidDescriptor(format!(
            "templates perform one multiply-add per iteration over {}-byte elements plus one trailing op",
            d.precision.element_bytes()
        )));
    }
    let unit = u64::from(d.element_bytes * template.vector_width);
    if !d.buffer_bytes.is_multiple_of(unit) {
        return Err(Error::InvalidDescriptor(format!("buffer_bytes must be a multiple of {unit}")));
    }

    let guard = d.fma_mode == FmaMode::Unfused;
    let mut src = String::new();
    src.push_str(&format!("// {} multiply-add microbenchmark, {} compute iterations\n", d.precision, d.compute_iters));
    src.push_str(&format!(
        "// ops per element: {} ({} x {} + {}), {} bytes per element, {} elements per work-item\n",
        d.ops_per_element(),
        d.flops_per_iter,
        d.compute_iters,
        d.extra_flops,
        d.element_bytes,
        template.vector_width
    ));
    src.push_str(&format!("// work-items: {}\n", d.elements() / u64::from(template.vector_width)));
    if let Some(ext) = template.extension {
        src.push_str(ext);
        src.push('\n');
    }
    if guard {
        src.push_str(CONTRACT_OFF);
        src.push('\n');
        src.push_str(FMA_REWRITE);
        src.push('\n');
    }
    src.push_str(&format!("#define ITERS {}u\n\n", d.compute_iters));
    src.push_str(template.body);

    Ok(KernelSource {
        descriptor: *d,
        source_text: src,
        entry_point: format!("bench_{}", d.precision),
        contraction_guard: guard,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub compiler_flags: Vec<String>,
    pub defines: BTreeMap<String, String>,
    pub target_arch: String,
    /// Unfused builds on toolchains without a contraction flag rely on the
    /// source-level guard instead.
    pub requires_source_guard: bool,
}

pub fn build_plan(d: &KernelDescriptor, toolchain: Toolchain) -> BuildPlan {
    let unfused = d.fma_mode == FmaMode::Unfused;
    let (compiler_flags, target_arch, requires_source_guard) = match toolchain {
        Toolchain::CudaLike => {
            let flags = if unfused { vec![FMAD_DISABLE_FLAG.to_string()] } else { Vec::new() };
            (flags, "sm_80", false)
        }
        Toolchain::OpenclLike => (Vec::new(), "opencl-3.0", unfused),
    };
    BuildPlan { compiler_flags, defines: BTreeMap::new(), target_arch: target_arch.into(), requires_source_guard }
}

/// Something that can run a generated kernel and time it.
pub trait Executor {
    fn execute(&mut self, kernel: &KernelSource, plan: &BuildPlan) -> Result<Measurement>;
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// Lower bound on compute iterations; raised per precision until the
    /// descriptor is compute-bound.
    pub iters: u32,
    pub toolchain: Toolchain,
    pub warmup_runs: usize,
    pub timed_runs: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig { iters: 1024, toolchain: Toolchain::OpenclLike, warmup_runs: 1, timed_runs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub fingerprint: Fingerprint,
    /// Every timed (non-warmup) run, in execution order.
    pub measurements: Vec<Measurement>,
}

/// `min(256 MiB, vram / 4)`, rounded down to a 16-byte multiple.
pub fn default_buffer_bytes(spec: &DeviceSpec) -> u64 {
    let cap = DEFAULT_BUFFER_BYTES.min(spec.vram_bytes / 4);
    (cap / 16 * 16).max(16)
}

/// Smallest iteration count at or above `floor` whose intensity reaches `target`.
pub fn iters_for_intensity(template: &KernelDescriptor, target: f64, floor: u32) -> u32 {
    let needed = (target * f64::from(template.element_bytes) - f64::from(template.extra_flops))
        / f64::from(template.flops_per_iter);
    let mut c = needed.max(0.0).ceil() as u32;
    while operational_intensity(&template.with_iters(c)) < target {
        c += 1;
    }
    c.max(floor)
}

pub fn run_fingerprint_campaign(
    executor: &mut dyn Executor,
    spec: &DeviceSpec,
    precisions: &BTreeSet<Precision>,
    iters: u32,
) -> Result<Campaign> {
    run_campaign_with(executor, spec, precisions, &CampaignConfig { iters, ..CampaignConfig::default() })
}

/// Runs every (precision, FMA mode) compute-bound kernel plus one
/// memory-bound kernel, sequentially, and fingerprints the medians.
pub fn run_campaign_with(
    executor: &mut dyn Executor,
    spec: &DeviceSpec,
    precisions: &BTreeSet<Precision>,
    config: &CampaignConfig,
) -> Result<Campaign> {
    spec.validate()?;
    let bw = memory_bandwidth(spec);
    let buffer = default_buffer_bytes(spec);
    let mut fingerprint = Fingerprint::new(&spec.name);
    let mut measurements = Vec::new();

    for &precision in precisions {
        let peak = theoretical_peak(spec, precision).ok();
        let target = match peak {
            Some(p) => (4.0 * ridge_point(p, bw)).max(MIN_CAMPAIGN_INTENSITY),
            None => MIN_CAMPAIGN_INTENSITY,
        };
        for mode in FmaMode::BOTH {
            let template = KernelDescriptor::new(precision, 0, mode).with_buffer_bytes(buffer);
            let d = template.with_iters(iters_for_intensity(&template, target, config.iters));
            let median = measure(executor, &d, config, &mut measurements)?;
            fingerprint.insert(FingerprintEntry::new(precision, mode, median.ops_per_sec, peak)?);
        }
    }

    let memory = KernelDescriptor::new(Precision::Fp32, 0, FmaMode::Fused).with_buffer_bytes(buffer);
    let median = measure(executor, &memory, config, &mut measurements)?;
    fingerprint.bandwidth = Some(BandwidthEntry::new(median.bytes_per_sec, bw));

    Ok(Campaign { fingerprint, measurements })
}

fn measure(
    executor: &mut dyn Executor,
    d: &KernelDescriptor,
    config: &CampaignConfig,
    log: &mut Vec<Measurement>,
) -> Result<Measurement> {
    let kernel = generate_kernel(d)?;
    let plan = build_plan(d, config.toolchain);
    let wrap = |e: Error| Error::Executor { descriptor: Box::new(*d), message: e.to_string() };
    for _ in 0..config.warmup_runs {
        executor.execute(&kernel, &plan).map_err(wrap)?;
    }
    let mut timed = Vec::with_capacity(config.timed_runs.max(1));
    for _ in 0..config.timed_runs.max(1) {
        timed.push(executor.execute(&kernel, &plan).map_err(wrap)?);
    }
    log.extend(timed.iter().cloned());
    timed.sort_by(|a, b| a.ops_per_sec.total_cmp(&b.ops_per_sec).then(a.bytes_per_sec.total_cmp(&b.bytes_per_sec)));
    Ok(timed.swap_remove(timed.len() / 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::sim::{SimExecutor, SimProfile};

    fn fp32(c: u32, mode: FmaMode) -> KernelDescriptor {
        KernelDescriptor::new(Precision::Fp32, c, mode)
    }

    #[test]
    fn fused_source_has_no_guard() {
        let k = generate_kernel(&fp32(1024, FmaMode::Fused)).unwrap();
        assert!(!k.contraction_guard);
        assert!(!k.source_text.contains(CONTRACT_OFF));
        assert!(!k.source_text.contains(FMA_REWRITE));
        assert!(k.source_text.contains("#define ITERS 1024u"));
        assert!(k.source_text.contains("s = fma(s, x, seed);"));
        assert_eq!(k.entry_point, "bench_fp32");
        assert_eq!(k.file_name(), "fp32_1024_fused.clc");
    }

    #[test]
    fn unfused_adds_exactly_the_two_directives() {
        let fused = generate_kernel(&fp32(1024, FmaMode::Fused)).unwrap();
        let unfused = generate_kernel(&fp32(1024, FmaMode::Unfused)).unwrap();
        assert!(unfused.contraction_guard);
        let f: Vec<&str> = fused.source_text.lines().collect();
        let u: Vec<&str> = unfused.source_text.lines().collect();
        let added: Vec<&str> = u.iter().copied().filter(|l| !f.contains(l)).collect();
        assert_eq!(added, vec![CONTRACT_OFF, FMA_REWRITE]);
        let remaining: Vec<&str> = u.iter().copied().filter(|l| *l != CONTRACT_OFF && *l != FMA_REWRITE).collect();
        assert_eq!(remaining, f);
    }

    #[test]
    fn fp16_uses_half2() {
        let k = generate_kernel(&KernelDescriptor::new(Precision::Fp16, 256, FmaMode::Fused)).unwrap();
        assert!(k.source_text.contains("half2"));
        assert!(k.source_text.contains("cl_khr_fp16"));
    }

    #[test]
    fn int16_has_no_template() {
        let d = KernelDescriptor::new(Precision::Int16, 8, FmaMode::Fused);
        assert!(matches!(generate_kernel(&d), Err(Error::NoTemplate(Precision::Int16))));
    }

    #[test]
    fn generation_is_byte_stable() {
        let d = fp32(77, FmaMode::Unfused);
        assert_eq!(generate_kernel(&d).unwrap(), generate_kernel(&d).unwrap());
    }

    #[test]
    fn flop_annotation_matches_intensity_formula() {
        for p in [Precision::Fp32, Precision::Fp64, Precision::Fp16, Precision::Int32, Precision::Int8] {
            for c in [0, 1, 1024] {
                let d = KernelDescriptor::new(p, c, FmaMode::Fused);
                let k = generate_kernel(&d).unwrap();
                let expected = operational_intensity(&d) * f64::from(d.element_bytes);
                assert!(k.source_text.contains(&format!("ops per element: {} ", expected as u64)));
            }
        }
    }

    #[test]
    fn build_plans() {
        let plan = build_plan(&fp32(1024, FmaMode::Unfused), Toolchain::CudaLike);
        assert_eq!(plan.compiler_flags, vec!["-fmad=false".to_string()]);
        assert!(!plan.requires_source_guard);
        assert!(build_plan(&fp32(1024, FmaMode::Fused), Toolchain::CudaLike).compiler_flags.is_empty());
        let cl = build_plan(&fp32(1024, FmaMode::Unfused), Toolchain::OpenclLike);
        assert!(cl.compiler_flags.is_empty());
        assert!(cl.requires_source_guard);
        assert!(!build_plan(&fp32(1024, FmaMode::Fused), Toolchain::OpenclLike).requires_source_guard);
    }

    #[test]
    fn campaign_intensity_is_compute_bound() {
        let spec = bundled::cmp170hx();
        for p in [Precision::Fp32, Precision::Fp64, Precision::Fp16] {
            let peak = theoretical_peak(&spec, p).unwrap();
            let target = (4.0 * ridge_point(peak, memory_bandwidth(&spec))).max(MIN_CAMPAIGN_INTENSITY);
            let t = KernelDescriptor::new(p, 0, FmaMode::Fused);
            let c = iters_for_intensity(&t, target, 0);
            assert!(operational_intensity(&t.with_iters(c)) >= target);
            assert!(c == 0 || operational_intensity(&t.with_iters(c - 1)) < target);
        }
        assert_eq!(iters_for_intensity(&fp32(0, FmaMode::Fused), 512.25, 0), 1024);
    }

    #[test]
    fn campaign_runs_warmup_plus_five() {
        let mut exec = SimExecutor::new(bundled::cmp170hx_truth());
        let precisions = BTreeSet::from([Precision::Fp32]);
        let c = run_fingerprint_campaign(&mut exec, &bundled::cmp170hx(), &precisions, 1024).unwrap();
        // 2 modes + bandwidth kernel, 6 runs each
        assert_eq!(exec.runs, 18);
        assert_eq!(c.measurements.len(), 15);
    }

    #[test]
    fn arithmetic_neutrality() {
        let spec = bundled::cmp170hx();
        let profile = SimProfile::unrestricted(spec);
        for c in [0, 1, 1024] {
            let f = crate::sim::simulate(&profile, &fp32(c, FmaMode::Fused)).unwrap();
            let u = crate::sim::simulate(&profile, &fp32(c, FmaMode::Unfused)).unwrap();
            assert_eq!(f.descriptor.total_ops(), u.descriptor.total_ops());
            assert_eq!(f.ops_per_sec * f.exec_time_s, u.ops_per_sec * u.exec_time_s);
        }
    }

    struct Failing;
    impl Executor for Failing {
        fn execute(&mut self, _: &KernelSource, _: &BuildPlan) -> Result<Measurement> {
            Err(Error::InvalidProfile("device lost".into()))
        }
    }

    #[test]
    fn executor_failure_carries_descriptor() {
        let err =
            run_fingerprint_campaign(&mut Failing, &bundled::cmp170hx(), &BTreeSet::from([Precision::Fp64]), 1024)
                .unwrap_err();
        match err {
            Error::Executor { descriptor, message } => {
                assert_eq!(descriptor.precision, Precision::Fp64);
                assert_eq!(descriptor.fma_mode, FmaMode::Fused);
                assert!(message.contains("device lost"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

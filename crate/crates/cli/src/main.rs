use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cmpscope_core::device::{ClockDomain, TheoreticalProfile};
use cmpscope_core::ingest::{ingest_llama_bench, ingest_mixbench_csv, ingest_power_log, LlamaFormat, MixbenchOptions};
use cmpscope_core::llm::{
    fits_in_vram, kv_cache_bytes, mean_power, scale, weights_footprint, Phase, PowerWindow, PredictionRecord,
    PredictionResult, ScalingBasis,
};
use cmpscope_core::report::{emit_report, ReportContext, ReportKind};
use cmpscope_core::roofline::{doubling_ladder, sweep_csv};
use cmpscope_core::workbench::{run_campaign_with, CampaignConfig};
use cmpscope_core::{
    build_plan, bundled, generate_kernel, restriction_report, simulate, Api, BenchRecord, FmaMode, KernelDescriptor,
    Payload, Precision, ResultStore, SimExecutor, Source, Toolchain, GIGA, TERA,
};

#[derive(Parser)]
#[command(
    name = "cmpscope",
    version,
    about = "Restricted-GPU performance models, fingerprints and LLM throughput predictions"
)]
struct Cli {
    /// Results store (JSONL).
    #[arg(long, global = true, env = "CMPSCOPE_STORE", default_value = "results.jsonl")]
    store: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Device specifications.
    Spec {
        #[command(subcommand)]
        command: SpecCommand,
    },
    /// Simulated sweeps and benchmark ingestion.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Run a restriction-fingerprint campaign.
    Fingerprint(FingerprintArgs),
    /// LLM throughput prediction and llama-bench ingestion.
    Llm {
        #[command(subcommand)]
        command: LlmCommand,
    },
    /// Unit-sales estimation.
    Econ {
        #[command(subcommand)]
        command: EconCommand,
    },
    /// Microbenchmark kernel sources.
    Kernel {
        #[command(subcommand)]
        command: KernelCommand,
    },
    /// Render a report from the store.
    Report {
        kind: String,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        /// Extra device spec files used for theoretical ceilings.
        #[arg(long = "device-spec")]
        device_specs: Vec<String>,
    },
}

#[derive(Subcommand)]
enum SpecCommand {
    /// Print a spec and every derived ceiling.
    Show {
        device: String,
        /// Derive at base clock instead of boost.
        #[arg(long)]
        base_clock: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for FmaMode {
    fn from(v: OnOff) -> Self {
        match v {
            OnOff::On => FmaMode::Fused,
            OnOff::Off => FmaMode::Unfused,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ToolchainArg {
    Cuda,
    Opencl,
}

impl From<ToolchainArg> for Toolchain {
    fn from(v: ToolchainArg) -> Self {
        match v {
            ToolchainArg::Cuda => Toolchain::CudaLike,
            ToolchainArg::Opencl => Toolchain::OpenclLike,
        }
    }
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Sweep compute iterations on a simulated device.
    Simulate {
        #[arg(long)]
        profile: String,
        /// Comma-separated ascending iteration counts; defaults to 0,1,2,4,...,1024.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<u32>,
        #[arg(long, default_value = "fp32")]
        precision: Precision,
        #[arg(long, value_enum, default_value = "on")]
        fma: OnOff,
        /// Relative multiplicative noise, overriding the profile.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the sweep CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        no_store: bool,
    },
    /// Ingest a mixbench-style CSV sweep.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        device: String,
        #[arg(long, default_value = "fp32")]
        precision: Precision,
        #[arg(long, value_enum, default_value = "on")]
        fma: OnOff,
        /// The file came from the OpenCL benchmark rather than mixbench.
        #[arg(long)]
        opencl: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExecutorKind {
    Sim,
    Real,
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long)]
    device: String,
    #[arg(long, value_enum, default_value = "sim")]
    executor: ExecutorKind,
    /// Truth profile for the simulator; defaults to `<device>-truth`.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "fp32,fp64,fp16")]
    precisions: Vec<Precision>,
    #[arg(long, default_value_t = 1024)]
    iters: u32,
    #[arg(long, value_enum, default_value = "opencl")]
    toolchain: ToolchainArg,
    /// Also write the fingerprint CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LlmCommand {
    /// Scale a reference throughput onto a target device.
    Predict {
        #[arg(long)]
        model: String,
        #[arg(long)]
        quant: String,
        #[arg(long)]
        device: String,
        #[arg(long)]
        ref_device: String,
        #[arg(long)]
        ref_tps: f64,
        #[arg(long)]
        phase: Phase,
        /// Context length used for the VRAM check.
        #[arg(long, default_value_t = 4096)]
        context: u64,
        #[arg(long, default_value_t = 0.05)]
        overhead: f64,
        /// Measured throughput on the target, for attainment.
        #[arg(long)]
        measured: Option<f64>,
        /// Mean board power while measuring.
        #[arg(long)]
        watts: Option<f64>,
        #[arg(long)]
        no_store: bool,
    },
    /// Ingest llama-bench results.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value = "cmp170hx")]
        device: String,
        /// nvidia-smi style power log; its mean fills rows without power.
        #[arg(long)]
        power_log: Option<PathBuf>,
        /// Test interval `start:end`, in seconds from the first power sample.
        #[arg(long)]
        window: Option<String>,
    },
}

#[derive(Subcommand)]
enum EconCommand {
    /// Estimate unit sales for every scenario in a scenario file.
    Estimate {
        scenario: String,
        #[arg(long)]
        no_store: bool,
    },
}

#[derive(Subcommand)]
enum KernelCommand {
    /// Write a kernel source and print its build plan.
    Generate {
        #[arg(long, default_value = "fp32")]
        precision: Precision,
        #[arg(long, default_value_t = 1024)]
        iters: u32,
        #[arg(long, value_enum, default_value = "on")]
        fma: OnOff,
        #[arg(long, value_enum, default_value = "opencl")]
        toolchain: ToolchainArg,
        #[arg(long, default_value = "kernels")]
        out: PathBuf,
    },
}

/// A bundled name or spec path resolves to the spec's display name; anything
/// else is used verbatim.
fn device_label(name: &str) -> String {
    bundled::device(name).map(|d| d.name).unwrap_or_else(|_| name.to_string())
}

fn spec_show(device: &str, base_clock: bool) -> Result<()> {
    let spec = bundled::device(device)?;
    let clock = if base_clock { ClockDomain::Base } else { ClockDomain::Boost };
    let profile = TheoreticalProfile::derive(&spec, clock)?;
    print!("{}", spec.to_toml_string());
    println!("\n# derived at {} clock", if base_clock { "base" } else { "boost" });
    for (p, peak) in &profile.peak_per_precision {
        println!("peak_{p} = {:.4} TFLOPS", peak / TERA);
    }
    println!("memory_bandwidth = {:.3} GB/s", profile.mem_bandwidth_bps / GIGA);
    println!("texture_fill_rate = {:.1} GT/s", profile.texture_fill_rate_texels_s / GIGA);
    println!("pcie_bandwidth = {:.3} GB/s", profile.pcie_bandwidth_bps / GIGA);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench_simulate(
    store: &ResultStore,
    profile: &str,
    sweep: Vec<u32>,
    precision: Precision,
    fma: FmaMode,
    noise: Option<f64>,
    seed: Option<u64>,
    csv: Option<PathBuf>,
    no_store: bool,
) -> Result<()> {
    let mut profile = bundled::profile(profile)?;
    if let Some(n) = noise {
        profile.noise_rel = n;
    }
    if let Some(s) = seed {
        profile.seed = s;
    }
    profile.validate()?;
    let iters = if sweep.is_empty() { doubling_ladder(1024) } else { sweep };
    if iters.windows(2).any(|w| w[0] >= w[1]) {
        return Err(cmpscope_core::Error::SweepNotAscending.into());
    }
    let buffer = cmpscope_core::workbench::default_buffer_bytes(&profile.spec);
    let measurements = iters
        .iter()
        .map(|&c| simulate(&profile, &KernelDescriptor::new(precision, c, fma).with_buffer_bytes(buffer)))
        .collect::<cmpscope_core::Result<Vec<_>>>()?;
    let text = sweep_csv(&measurements);
    print!("{text}");
    if let Some(path) = csv {
        std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if !no_store {
        let now = Utc::now();
        let records: Vec<_> = measurements
            .into_iter()
            .map(|m| BenchRecord::new(Source::Simulated, &profile.spec.name, now, Payload::Measurement(m)))
            .collect();
        store.append(&records)?;
    }
    Ok(())
}

fn bench_ingest(
    store: &ResultStore,
    file: &Path,
    device: &str,
    precision: Precision,
    fma: FmaMode,
    opencl: bool,
) -> Result<bool> {
    let now = Utc::now();
    let opts = MixbenchOptions {
        precision,
        fma_mode: fma,
        api: if opencl { Api::OpenclLike } else { Api::CudaLike },
        ingested_at: now,
    };
    let outcome = ingest_mixbench_csv(file, &opts)?;
    let source = if opencl { Source::OpenclBenchLike } else { Source::MixbenchLike };
    let device = device_label(device);
    let records: Vec<_> =
        outcome.rows.into_iter().map(|m| BenchRecord::new(source, &device, now, Payload::Measurement(m))).collect();
    store.append(&records)?;
    println!("ingested {} of {} rows into {}", records.len(), outcome.rows_seen, store.path().display());
    for e in &outcome.errors {
        eprintln!("{}: {e}", file.display());
    }
    Ok(outcome.errors.is_empty())
}

fn fingerprint(store: &ResultStore, args: FingerprintArgs) -> Result<()> {
    if args.executor == ExecutorKind::Real {
        bail!("no real-device executor is built in; run a device-side harness and ingest its CSV with `bench ingest`");
    }
    let spec = bundled::device(&args.device)?;
    let profile_name = args.profile.unwrap_or_else(|| format!("{}-truth", args.device));
    let profile = bundled::profile(&profile_name)?;
    let mut executor = SimExecutor::new(profile);
    let precisions: BTreeSet<Precision> = args.precisions.into_iter().collect();
    let config = CampaignConfig { iters: args.iters, toolchain: args.toolchain.into(), ..CampaignConfig::default() };
    let campaign = run_campaign_with(&mut executor, &spec, &precisions, &config)?;
    let fragment = restriction_report(&campaign.fingerprint);
    print!("{}", fragment.to_markdown());
    if let Some(path) = args.csv {
        std::fs::write(&path, fragment.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let now = Utc::now();
    let records: Vec<_> = campaign
        .measurements
        .into_iter()
        .map(|m| BenchRecord::new(Source::Simulated, &spec.name, now, Payload::Measurement(m)))
        .collect();
    store.append(&records)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn llm_predict(
    store: &ResultStore,
    model: &str,
    quant: &str,
    device: &str,
    ref_device: &str,
    ref_tps: f64,
    phase: Phase,
    context: u64,
    overhead: f64,
    measured: Option<f64>,
    watts: Option<f64>,
    no_store: bool,
) -> Result<()> {
    let model = bundled::model(model)?;
    let quants = bundled::quants();
    let quant = quants.get(quant)?;
    let target = bundled::device(device)?;
    let reference = bundled::device(ref_device)?;
    let basis = ScalingBasis::from_devices(&reference, &target, ref_tps)?;
    let predicted = scale(phase, &basis);
    let mut result = PredictionResult::new(phase, predicted);
    if let Some(m) = measured {
        result = result.with_measured(m)?;
    }
    if let Some(w) = watts {
        result = result.with_power(w)?;
    }

    println!("model: {} ({})", model.name, quant.name);
    println!("{phase} on {}: {:.3} t/s (from {:.3} t/s on {})", target.name, predicted, ref_tps, reference.name);
    if let (Some(m), Some(a)) = (result.measured_tps, result.attainment) {
        println!("measured: {m:.3} t/s, attainment {:.1}% ({})", a * 100.0, result.band_flag().unwrap_or_default());
    }
    if let Some(e) = result.efficiency_tps_per_watt {
        println!("efficiency: {e:.4} t/s/W");
    }
    let fit = fits_in_vram(&model, quant, context, &target, overhead)?;
    println!(
        "weights {:.3} GB + kv cache {:.3} GB @ {context} ctx + {:.0}% overhead = {:.3} GB of {:.3} GB: {}",
        weights_footprint(&model, quant) / GIGA,
        kv_cache_bytes(&model, context, quant.kv_cache_bytes_per_elem)? as f64 / GIGA,
        overhead * 100.0,
        fit.total_bytes / GIGA,
        target.vram_bytes as f64 / GIGA,
        if fit.fits { "fits" } else { "does not fit" }
    );

    if !no_store {
        let record = PredictionRecord {
            model: model.name.clone(),
            quant: quant.name.clone(),
            phase,
            predicted_tps: predicted,
            reference_device: reference.name.clone(),
            reference_tps: ref_tps,
        };
        store.append(&[BenchRecord::new(Source::Derived, &target.name, Utc::now(), Payload::Prediction(record))])?;
    }
    Ok(())
}

fn parse_window(s: &str) -> Result<PowerWindow> {
    let (a, b) = s.split_once(':').ok_or_else(|| anyhow!("window must be start:end"))?;
    let bound = |x: &str, default: f64| -> Result<f64> {
        if x.is_empty() {
            Ok(default)
        } else {
            x.parse().with_context(|| format!("bad window bound `{x}`"))
        }
    };
    Ok(PowerWindow { start_s: bound(a, f64::NEG_INFINITY)?, end_s: bound(b, f64::INFINITY)? })
}

fn llm_ingest(
    store: &ResultStore,
    file: &Path,
    format: Option<String>,
    device: &str,
    power_log: Option<PathBuf>,
    window: Option<String>,
) -> Result<bool> {
    let format: LlamaFormat = match format {
        Some(f) => f.parse()?,
        None if file.extension().is_some_and(|e| e == "jsonl") => LlamaFormat::Jsonl,
        None => LlamaFormat::Csv,
    };
    let mut outcome = ingest_llama_bench(file, format)?;
    if let Some(log) = power_log {
        let samples = ingest_power_log(&log)?;
        // Window bounds count from the first sample.
        let origin = samples.first().map_or(0.0, |s| s.t_s);
        let window = match window.as_deref().map(parse_window).transpose()? {
            Some(w) => PowerWindow { start_s: origin + w.start_s, end_s: origin + w.end_s },
            None => PowerWindow::ALL,
        };
        let watts = mean_power(&samples, window)?;
        for row in outcome.rows.iter_mut().filter(|r| r.power_avg_watts.is_none()) {
            row.power_avg_watts = Some(watts);
        }
    }
    let now = Utc::now();
    let device = device_label(device);
    let records: Vec<_> = outcome
        .rows
        .into_iter()
        .map(|r| BenchRecord::new(Source::LlamaBench, &device, now, Payload::LlmBench(r)))
        .collect();
    store.append(&records)?;
    println!("ingested {} of {} rows into {}", records.len(), outcome.rows_seen, store.path().display());
    for e in &outcome.errors {
        eprintln!("{}: {e}", file.display());
    }
    Ok(outcome.errors.is_empty())
}

fn econ_estimate(store: &ResultStore, scenario: &str, no_store: bool) -> Result<()> {
    let scenarios = bundled::scenarios(scenario)?.scenarios()?;
    print!("{}", cmpscope_core::economics::scenarios_markdown(&scenarios)?);
    if !no_store {
        let now = Utc::now();
        let records: Vec<_> =
            scenarios.into_iter().map(|s| BenchRecord::new(Source::Derived, "", now, Payload::Scenario(s))).collect();
        store.append(&records)?;
    }
    Ok(())
}

fn kernel_generate(precision: Precision, iters: u32, fma: FmaMode, toolchain: Toolchain, out: &Path) -> Result<()> {
    let d = KernelDescriptor::new(precision, iters, fma);
    let kernel = generate_kernel(&d)?;
    let path = kernel.write_to(out)?;
    let plan = build_plan(&d, toolchain);
    println!("wrote {}", path.display());
    println!("entry point: {}", kernel.entry_point);
    println!("compiler flags: [{}]", plan.compiler_flags.join(" "));
    println!("target arch: {}", plan.target_arch);
    println!("source guard: {}", if kernel.contraction_guard { "present" } else { "absent" });
    Ok(())
}

fn report(store: &ResultStore, kind: &str, out: &Path, device_specs: &[String]) -> Result<()> {
    let kind: ReportKind = kind.parse()?;
    let mut ctx = ReportContext::with_bundled_devices();
    for s in device_specs {
        ctx.devices.push(bundled::device(s)?);
    }
    for path in emit_report(store, kind, &ctx, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

/// Ok(false) means the command completed but some input rows were rejected.
fn run(cli: Cli) -> Result<bool> {
    let store = ResultStore::open(cli.store);
    match cli.command {
        Command::Spec { command: SpecCommand::Show { device, base_clock } } => spec_show(&device, base_clock)?,
        Command::Bench { command } => match command {
            BenchCommand::Simulate { profile, sweep, precision, fma, noise, seed, csv, no_store } => {
                bench_simulate(&store, &profile, sweep, precision, fma.into(), noise, seed, csv, no_store)?
            }
            BenchCommand::Ingest { file, device, precision, fma, opencl } => {
                return bench_ingest(&store, &file, &device, precision, fma.into(), opencl)
            }
        },
        Command::Fingerprint(args) => fingerprint(&store, args)?,
        Command::Llm { command } => match command {
            LlmCommand::Predict {
                model,
                quant,
                device,
                ref_device,
                ref_tps,
                phase,
                context,
                overhead,
                measured,
                watts,
                no_store,
            } => llm_predict(
                &store,
                &model,
                &quant,
                &device,
                &ref_device,
                ref_tps,
                phase,
                context,
                overhead,
                measured,
                watts,
                no_store,
            )?,
            LlmCommand::Ingest { file, format, device, power_log, window } => {
                return llm_ingest(&store, &file, format, &device, power_log, window)
            }
        },
        Command::Econ { command: EconCommand::Estimate { scenario, no_store } } => {
            econ_estimate(&store, &scenario, no_store)?
        }
        Command::Kernel { command: KernelCommand::Generate { precision, iters, fma, toolchain, out } } => {
            kernel_generate(precision, iters, fma.into(), toolchain.into(), &out)?
        }
        Command::Report { kind, out, device_specs } => report(&store, &kind, &out, &device_specs)?,
    }
    Ok(true)
}

fn is_io(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<cmpscope_core::Error>().is_some_and(cmpscope_core::Error::is_io)
    })
}

/// Like `{:#}`, but skips causes whose text the outer message already carries.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(if is_io(&err) { 2 } else { 1 })
        }
    }
}

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrd_core::arch::{build_resnet, count_macs, count_params, ArchDescriptor, CompressionMode};
use lrd_core::bench::{compare_modes, compare_plans, BenchOptions, ModeReport};
use lrd_core::checkpoint::{read_checkpoint, write_checkpoint, TensorMap};
use lrd_core::compress::{compress, verify, CompressOptions, VerifyOptions};
use lrd_core::error::{Error, Result};
use lrd_core::init::random_checkpoint;
use lrd_core::json::{read_json, to_json_string, write_json};
use lrd_core::rank::{plan_ranks, CompressionConfig, RankMethod, RankPlan};
use lrd_core::HooiOptions;

/// Low-rank decomposition toolkit for CNN checkpoints.
#[derive(Debug, Parser)]
#[command(name = "lrd", version)]
pub struct Cli {
    /// Reject unknown fields in JSON inputs instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit a ResNet architecture descriptor.
    Arch(ArchArgs),
    /// Write a seeded random checkpoint for an architecture.
    Init(InitArgs),
    /// Choose per-layer ranks.
    Plan(PlanArgs),
    /// Decompose a checkpoint according to a plan.
    Compress(CompressArgs),
    /// Compare a compressed model against its original.
    Verify(VerifyArgs),
    /// Count parameters and MACs.
    Count(CountArgs),
    /// Time original vs decomposed layers per plan.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ArchArgs {
    /// 18, 34, 50, 101 or 152.
    depth: usize,
    #[arg(long, default_value_t = 224)]
    input_hw: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InitArgs {
    arch: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Pr,
    Vbmf,
}

#[derive(Debug, Args)]
struct PlanArgs {
    arch: PathBuf,
    /// vanilla, mode1..mode5 or custom (with --include/--exclude).
    #[arg(long, default_value = "mode3")]
    mode: String,
    #[arg(long, value_enum, default_value_t = Method::Pr)]
    method: Method,
    /// VBMF weakening factor in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    weakening: f64,
    /// Target compression ratio for conv layers.
    #[arg(long, default_value_t = 3.0)]
    ratio: f64,
    /// Compression ratio for dense layers.
    #[arg(long, default_value_t = 1.3)]
    dense_ratio: f64,
    /// Ranks are rounded to multiples of this.
    #[arg(long, default_value_t = 32)]
    quantum: usize,
    /// Decompose selected layers even when their ranks come out full.
    #[arg(long)]
    keep_full_rank: bool,
    /// Layer-name glob for custom mode (repeatable).
    #[arg(long)]
    include: Vec<String>,
    /// Layer-name glob excluded in custom mode (repeatable).
    #[arg(long)]
    exclude: Vec<String>,
    /// Trained weights (required for VBMF).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompressArgs {
    arch: PathBuf,
    plan: PathBuf,
    #[arg(long, conflicts_with = "random_init", required_unless_present = "random_init")]
    ckpt: Option<PathBuf>,
    /// Use seeded random weights instead of a checkpoint.
    #[arg(long)]
    random_init: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compressed checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Compressed architecture (default: <out>.arch.json).
    #[arg(long)]
    out_arch: Option<PathBuf>,
    /// Per-layer report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, env = "LRD_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value_t = 50)]
    hooi_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    hooi_tol: f64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    orig_arch: PathBuf,
    orig_ckpt: PathBuf,
    comp_arch: PathBuf,
    comp_ckpt: PathBuf,
    /// Spatial size of the random probe inputs (default: each layer's own).
    #[arg(long)]
    input_hw: Option<usize>,
    /// Fail when any relative error exceeds this; report only when omitted.
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "LRD_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CountArgs {
    arch: PathBuf,
    plan: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    arch: PathBuf,
    /// Plans to compare (all built-in modes at default settings when omitted).
    plans: Vec<PathBuf>,
    #[arg(long, default_value_t = lrd_core::bench::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = lrd_core::bench::DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ModeReport JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load<T: serde::Serialize + serde::de::DeserializeOwned>(path: &Path, strict: bool) -> Result<T> {
    let (v, warnings) = read_json(path, strict)?;
    warn_all(&warnings);
    Ok(v)
}

fn load_arch(path: &Path, strict: bool) -> Result<ArchDescriptor> {
    let arch: ArchDescriptor = load(path, strict)?;
    arch.validate().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(arch)
}

fn workers(w: Option<usize>) -> Result<usize> {
    match w {
        Some(0) => Err(Error::Argument("--workers must be >= 1".into())),
        Some(n) => Ok(n),
        None => Ok(lrd_core::par::default_workers()),
    }
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

pub fn run(cli: Cli) -> Result<()> {
    let strict = cli.strict;
    match cli.command {
        Command::Arch(a) => cmd_arch(a),
        Command::Init(a) => cmd_init(a, strict),
        Command::Plan(a) => cmd_plan(a, strict),
        Command::Compress(a) => cmd_compress(a, strict),
        Command::Verify(a) => cmd_verify(a, strict),
        Command::Count(a) => cmd_count(a, strict),
        Command::Bench(a) => cmd_bench(a, strict),
    }
}

fn cmd_arch(a: ArchArgs) -> Result<()> {
    let arch = build_resnet(a.depth, a.input_hw)?;
    match a.out {
        Some(p) => {
            write_json(&p, &arch)?;
            println!(
                "{}: {} conv + {} dense layers -> {}",
                arch.name,
                arch.conv_count(),
                arch.dense_count(),
                p.display()
            );
        }
        None => print!("{}", to_json_string(&arch)?),
    }
    Ok(())
}

fn cmd_init(a: InitArgs, strict: bool) -> Result<()> {
    let arch = load_arch(&a.arch, strict)?;
    let ckpt = random_checkpoint(&arch, a.seed);
    write_checkpoint(&a.out, &ckpt)?;
    println!("{} tensors -> {}", ckpt.len(), a.out.display());
    Ok(())
}

fn parse_mode(a: &PlanArgs) -> Result<CompressionMode> {
    if a.mode.eq_ignore_ascii_case("custom") {
        if a.include.is_empty() {
            return Err(Error::Argument("custom mode needs at least one --include".into()));
        }
        return Ok(CompressionMode::Custom {
            include: a.include.clone(),
            exclude: a.exclude.clone(),
        });
    }
    if !a.include.is_empty() || !a.exclude.is_empty() {
        return Err(Error::Argument("--include/--exclude need --mode custom".into()));
    }
    CompressionMode::parse(&a.mode).ok_or_else(|| {
        Error::Argument(format!(
            "unknown mode {:?} (expected vanilla, mode1..mode5 or custom)",
            a.mode
        ))
    })
}

fn cmd_plan(a: PlanArgs, strict: bool) -> Result<()> {
    let arch = load_arch(&a.arch, strict)?;
    let cfg = CompressionConfig {
        method: match a.method {
            Method::Pr => RankMethod::Pr,
            Method::Vbmf => RankMethod::Vbmf { weakening: a.weakening },
        },
        target_ratio: a.ratio,
        final_dense_ratio: a.dense_ratio,
        rank_quantum: a.quantum,
        mode: parse_mode(&a)?,
        keep_full_rank: a.keep_full_rank,
        ..CompressionConfig::default()
    };
    cfg.validate()?;
    if matches!(cfg.method, RankMethod::Vbmf { .. }) && a.ckpt.is_none() {
        return Err(Error::Config("--method vbmf needs --ckpt with trained weights".into()));
    }
    let weights = a.ckpt.as_deref().map(read_checkpoint).transpose()?;
    let plan = plan_ranks(&arch, &cfg, weights.as_ref())?;
    warn_all(&plan.warnings);
    let selected = plan.entries.values().filter(|e| e.method.is_some()).count();
    println!("arch              {}", plan.arch);
    println!("mode              {}", cfg.mode);
    println!("layers selected   {selected}");
    println!("layers decomposed {}", plan.decomposed_count());
    println!(
        "params            {} -> {}",
        millions(plan.totals.params_before),
        millions(plan.totals.params_after)
    );
    println!(
        "MACs              {} -> {}",
        millions(plan.totals.macs_before),
        millions(plan.totals.macs_after)
    );
    println!("achieved ratio    {:.3}x", plan.achieved_ratio);
    if let Some(p) = a.out {
        write_json(&p, &plan)?;
    }
    Ok(())
}

fn cmd_compress(a: CompressArgs, strict: bool) -> Result<()> {
    let arch = load_arch(&a.arch, strict)?;
    let plan: RankPlan = load(&a.plan, strict)?;
    let ckpt: TensorMap = match &a.ckpt {
        Some(p) => read_checkpoint(p)?,
        None => random_checkpoint(&arch, a.seed),
    };
    let opts = CompressOptions {
        workers: workers(a.workers)?,
        hooi: HooiOptions {
            max_iters: a.hooi_iters,
            tol: a.hooi_tol,
        },
    };
    let out = compress(&arch, &ckpt, &plan, &opts)?;
    let out_arch = a.out_arch.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".arch.json");
        PathBuf::from(p)
    });
    write_checkpoint(&a.out, &out.checkpoint)?;
    write_json(&out_arch, &out.arch)?;
    if let Some(r) = &a.report {
        write_json(r, &out.summary)?;
    }
    let s = &out.summary;
    let width = s.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>12}  {:>12}  {:>12}", "layer", "params", "after", "recon_err");
    for l in s.layers.iter().filter(|l| l.action.is_decomposed()) {
        println!(
            "{:<width$}  {:>12}  {:>12}  {:>12.3e}",
            l.name, l.params_before, l.params_after, l.recon_rel_error
        );
    }
    println!(
        "params {} -> {} (plan {}), layers {} -> {}, max recon_rel_error {:.3e}",
        s.params_before,
        s.params_after,
        s.predicted_params_after,
        s.layer_count_before,
        s.layer_count_after,
        s.max_recon_rel_error
    );
    Ok(())
}

fn cmd_verify(a: VerifyArgs, strict: bool) -> Result<()> {
    let orig_arch = load_arch(&a.orig_arch, strict)?;
    let comp_arch = load_arch(&a.comp_arch, strict)?;
    let orig = read_checkpoint(&a.orig_ckpt)?;
    let comp = read_checkpoint(&a.comp_ckpt)?;
    let opts = VerifyOptions {
        input_hw: a.input_hw,
        batch: a.batch,
        seed: a.seed,
        workers: workers(a.workers)?,
    };
    let rep = verify(&orig_arch, &orig, &comp_arch, &comp, &opts)?;
    if let Some(p) = &a.report {
        write_json(p, &rep)?;
    }
    let width = rep.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:<14}  {:>12}  {:>12}", "layer", "variant", "recon_err", "forward_err");
    for l in &rep.layers {
        println!(
            "{:<width$}  {:<14}  {:>12.3e}  {:>12.3e}",
            l.name, l.variant, l.recon_rel_error, l.forward_rel_error
        );
    }
    println!(
        "worst recon_rel_error {:.3e}, worst forward_rel_error {:.3e}",
        rep.worst_recon_rel_error, rep.worst_forward_rel_error
    );
    match a.rel_tol {
        Some(tol) if rep.worst().is_nan() || rep.worst() > tol => Err(Error::Tolerance(format!(
            "worst relative error {:.3e} exceeds {tol:e}",
            rep.worst()
        ))),
        _ => Ok(()),
    }
}

fn cmd_count(a: CountArgs, strict: bool) -> Result<()> {
    let arch = load_arch(&a.arch, strict)?;
    let plan: Option<RankPlan> = a.plan.as_deref().map(|p| load(p, strict)).transpose()?;
    if let Some(p) = &plan {
        p.check_against(&arch)?;
    }
    let base_p = count_params(&arch, None);
    let base_m = count_macs(&arch, None);
    let after = plan.as_ref().map(|p| (count_params(&arch, Some(p)), count_macs(&arch, Some(p))));
    if a.json {
        let mut v = serde_json::json!({
            "arch": arch.name,
            "params": base_p.total,
            "batch_norm_params": base_p.batch_norm,
            "macs": base_m.total_macs,
            "flops": base_m.total_flops,
        });
        if let Some((p, m)) = &after {
            v["plan"] = serde_json::json!({
                "params": p.total,
                "macs": m.total_macs,
                "flops": m.total_flops,
                "params_ratio": p.total as f64 / base_p.total as f64,
                "macs_ratio": m.total_macs as f64 / base_m.total_macs as f64,
            });
        }
        print!("{}", to_json_string(&v)?);
        return Ok(());
    }
    println!("arch        {}", arch.name);
    println!("params      {} ({})", base_p.total, millions(base_p.total));
    println!("bn params   {} (excluded from ratios)", base_p.batch_norm);
    println!("MACs        {} ({})", base_m.total_macs, millions(base_m.total_macs));
    println!("FLOPs       {}", base_m.total_flops);
    if let Some((p, m)) = after {
        println!(
            "plan params {} ({}), ratio {:.3}",
            p.total,
            millions(p.total),
            p.total as f64 / base_p.total as f64
        );
        println!(
            "plan MACs   {} ({}), ratio {:.3}",
            m.total_macs,
            millions(m.total_macs),
            m.total_macs as f64 / base_m.total_macs as f64
        );
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, strict: bool) -> Result<()> {
    let arch = load_arch(&a.arch, strict)?;
    let opts = BenchOptions {
        reps: a.reps,
        warmup: a.warmup,
        seed: a.seed,
    };
    let report: ModeReport = if a.plans.is_empty() {
        let configs: Vec<CompressionConfig> = CompressionMode::BUILT_IN
            .iter()
            .map(|m| CompressionConfig {
                mode: m.clone(),
                ..CompressionConfig::default()
            })
            .collect();
        compare_modes(&arch, &configs, None, a.batch, opts)?
    } else {
        let mut plans: Vec<(String, RankPlan)> = Vec::new();
        for p in &a.plans {
            let plan: RankPlan = load(p, strict)?;
            let base = plan.config.mode.label();
            let n = plans.iter().filter(|(l, _)| l == &base || l.starts_with(&format!("{base}#"))).count();
            let label = if n == 0 { base } else { format!("{base}#{}", n + 1) };
            plans.push((label, plan));
        }
        compare_plans(&arch, &plans, a.batch, opts)?
    };
    print!("{}", report.to_table());
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(())
}

//! Forward-pass microbenchmarks of original vs decomposed layers, and the
//! per-mode comparison report.
//!
//! Timed sections always run single-threaded, one layer at a time.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{count_macs, count_params, ArchDescriptor, LayerKind, LayerSpec};
use crate::checkpoint::TensorMap;
use crate::conv::forward_layer;
use crate::decompose::{DecomposedLayer, LayerFactors, RanksUsed};
use crate::error::{bail, Error, Result};
use crate::init::random_normal;
use crate::rank::{plan_ranks, CompressionConfig, LayerAction, RankPlan};
use crate::tensor::Tensor;

pub const DEFAULT_REPS: usize = 20;
pub const DEFAULT_WARMUP: usize = 3;
/// Relative checksum tolerance for full-rank chains.
pub const CHECKSUM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            reps: DEFAULT_REPS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            bail!(Argument, "reps must be >= 3, got {}", self.reps);
        }
        if self.warmup < 1 {
            bail!(Argument, "warmup must be >= 1");
        }
        Ok(())
    }
}

/// Median wall time of `reps` calls after `warmup` untimed ones, in ns (≥ 1).
pub fn median_time_ns(mut f: impl FnMut(), reps: usize, warmup: usize) -> u64 {
    for _ in 0..warmup {
        f();
    }
    let mut t: Vec<u64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos() as u64
        })
        .collect();
    t.sort_unstable();
    let n = t.len();
    let m = if n % 2 == 1 { t[n / 2] } else { (t[n / 2 - 1] + t[n / 2]) / 2 };
    m.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub layer_name: String,
    pub original_time_ns: u64,
    pub decomposed_time_ns: u64,
    /// original / decomposed.
    pub speedup: f64,
    pub reps: usize,
    pub input_shape: Vec<usize>,
    /// Sum of the original layer's output elements.
    pub checksum: f64,
    pub decomposed_checksum: f64,
    /// `|Δchecksum|` relative to the original output's L1 mass.
    pub checksum_rel_diff: f64,
    pub full_rank: bool,
    pub macs_ratio: f64,
}

/// Input shape of one forward pass through `layer` at batch `batch`.
pub fn layer_input_shape(layer: &LayerSpec, batch: usize) -> Result<Vec<usize>> {
    Ok(match &layer.kind {
        LayerKind::Conv(c) => vec![batch, c.c_in, layer.in_h, layer.in_w],
        LayerKind::Dense(d) => vec![batch, d.in_features],
        _ => bail!(Argument, "layer {:?} has no forward kernel", layer.name),
    })
}

fn is_full_rank(layer: &LayerSpec, factors: &DecomposedLayer) -> bool {
    match (factors.ranks_used(), &layer.kind) {
        (None, _) => true,
        (Some(RanksUsed::Single(r)), LayerKind::Conv(c)) => r == c.c_in.min(c.c_out),
        (Some(RanksUsed::Single(r)), LayerKind::Dense(d)) => r == d.in_features.min(d.out_features),
        (Some(RanksUsed::Pair { r_in, r_out }), LayerKind::Conv(c)) => r_in == c.c_in && r_out == c.c_out,
        _ => false,
    }
}

fn chain_macs(layer: &LayerSpec, factors: &LayerFactors) -> u64 {
    let action = match factors {
        LayerFactors::Unchanged { .. } => LayerAction::Unchanged,
        LayerFactors::DensePair { b, .. } => {
            let r = b.shape()[0];
            LayerAction::DensePair { raw_rank: r, rank: r }
        }
        LayerFactors::PointwisePair { first, .. } => {
            let r = first.shape()[0];
            LayerAction::PointwisePair { raw_rank: r, rank: r }
        }
        LayerFactors::Tucker2 { core, .. } => {
            let (r_out, r_in) = (core.shape()[0], core.shape()[1]);
            LayerAction::Tucker2 { raw_r_in: r_in, raw_r_out: r_out, r_in, r_out }
        }
    };
    crate::arch::layer_cost(layer, &action).macs
}

/// Times `layer` with weights `w` against its decomposed `chain`.
///
/// For a full-rank chain the output checksums must agree within
/// [`CHECKSUM_TOL`]; otherwise the divergence is only recorded.
pub fn bench_layer(
    layer: &LayerSpec,
    w: &Tensor,
    bias: Option<&Tensor>,
    chain: &DecomposedLayer,
    batch: usize,
    opts: BenchOptions,
) -> Result<BenchResult> {
    opts.validate()?;
    let input_shape = layer_input_shape(layer, batch)?;
    let x = random_normal(input_shape.clone(), opts.seed)?;
    let orig = LayerFactors::Unchanged { w: w.clone() };
    let y0 = forward_layer(layer, &orig, bias, &x, false)?;
    let y1 = forward_layer(layer, &chain.factors, bias, &x, false)?;
    let checksum = y0.sum();
    let decomposed_checksum = y1.sum();
    let mass: f64 = y0.data().iter().map(|v| v.abs()).sum();
    let checksum_rel_diff = if mass > 0.0 {
        (decomposed_checksum - checksum).abs() / mass
    } else {
        (decomposed_checksum - checksum).abs()
    };
    let full_rank = is_full_rank(layer, chain);
    if !checksum.is_finite() || !decomposed_checksum.is_finite() {
        bail!(Numeric, "layer {:?}: non-finite output", layer.name);
    }
    if full_rank && checksum_rel_diff > CHECKSUM_TOL {
        bail!(
            Numeric,
            "layer {:?}: full-rank chain checksum differs by {checksum_rel_diff:.3e}",
            layer.name
        );
    }
    let original_time_ns = median_time_ns(
        || {
            std::hint::black_box(forward_layer(layer, &orig, bias, &x, false).ok());
        },
        opts.reps,
        opts.warmup,
    );
    let decomposed_time_ns = median_time_ns(
        || {
            std::hint::black_box(forward_layer(layer, &chain.factors, bias, &x, false).ok());
        },
        opts.reps,
        opts.warmup,
    );
    let before = crate::arch::layer_cost(layer, &LayerAction::Unchanged).macs;
    Ok(BenchResult {
        layer_name: layer.name.clone(),
        original_time_ns,
        decomposed_time_ns,
        speedup: original_time_ns as f64 / decomposed_time_ns as f64,
        reps: opts.reps,
        input_shape,
        checksum,
        decomposed_checksum,
        checksum_rel_diff,
        full_rank,
        macs_ratio: chain_macs(layer, &chain.factors) as f64 / before as f64,
    })
}

/// Random factor tensors with the shapes `action` implies for `layer`.
pub fn random_factors(layer: &LayerSpec, action: &LayerAction, seed: u64) -> Result<LayerFactors> {
    let rn = |shape: Vec<usize>, k: u64| random_normal(shape, seed.wrapping_mul(31).wrapping_add(k));
    Ok(match (&layer.kind, action) {
        (_, LayerAction::Unchanged) => LayerFactors::Unchanged {
            w: rn(layer.weight_shape().unwrap_or_default(), 0)?,
        },
        (LayerKind::Dense(d), LayerAction::DensePair { rank, .. }) => LayerFactors::DensePair {
            a: rn(vec![d.out_features, *rank], 1)?,
            b: rn(vec![*rank, d.in_features], 2)?,
            bias: if d.has_bias { Some(rn(vec![d.out_features], 3)?) } else { None },
        },
        (LayerKind::Conv(c), LayerAction::PointwisePair { rank, .. }) => LayerFactors::PointwisePair {
            first: rn(vec![*rank, c.c_in, 1, 1], 1)?,
            second: rn(vec![c.c_out, *rank, 1, 1], 2)?,
        },
        (LayerKind::Conv(c), LayerAction::Tucker2 { r_in, r_out, .. }) => LayerFactors::Tucker2 {
            first: rn(vec![*r_in, c.c_in, 1, 1], 1)?,
            core: rn(vec![*r_out, *r_in, c.kernel_h, c.kernel_w], 2)?,
            last: rn(vec![c.c_out, *r_out, 1, 1], 3)?,
        },
        (_, a) => bail!(Mismatch, "action {a:?} does not apply to layer {:?}", layer.name),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    /// Threads used for timed sections.
    pub bench_workers: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: crate::par::default_workers(),
            bench_workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: String,
    pub params_after: u64,
    pub macs_after: u64,
    pub total_time_ns: u64,
    pub speedup_vs_original: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub machine_info: MachineInfo,
    pub input_shape: Vec<usize>,
    /// Ascending by total time; ties broken by mode name.
    pub rows: Vec<ModeRow>,
}

impl ModeReport {
    pub fn row(&self, mode: &str) -> Option<&ModeRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = ["mode", "params", "MACs", "time (ms)", "speedup"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.mode.clone(),
                    r.params_after.to_string(),
                    r.macs_after.to_string(),
                    format!("{:.3}", r.total_time_ns as f64 / 1e6),
                    format!("{:.3}", r.speedup_vs_original),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |cols: &[&str]| {
            for (i, (c, w)) in cols.iter().zip(width).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&header);
        for row in &cells {
            line(&row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

pub const ORIGINAL_ROW: &str = "original";

/// Times every plan on `arch` and ranks them. Each original layer is timed
/// once; decomposed chains use seeded random factors of the planned shapes,
/// since timing does not depend on the weight values.
pub fn compare_plans(
    arch: &ArchDescriptor,
    plans: &[(String, RankPlan)],
    batch: usize,
    opts: BenchOptions,
) -> Result<ModeReport> {
    opts.validate()?;
    if batch == 0 {
        bail!(Argument, "batch must be >= 1");
    }
    for (label, p) in plans {
        if label == ORIGINAL_ROW {
            bail!(Argument, "plan label {ORIGINAL_ROW:?} is reserved");
        }
        p.check_against(arch)?;
    }
    let mut times: HashMap<(String, LayerAction), u64> = HashMap::new();
    let mut time_of = |layer: &LayerSpec, action: &LayerAction, idx: usize| -> Result<u64> {
        let key = (layer.name.clone(), *action);
        if let Some(&t) = times.get(&key) {
            return Ok(t);
        }
        let seed = opts.seed.wrapping_add(idx as u64);
        let factors = random_factors(layer, action, seed)?;
        let bias = match &layer.kind {
            LayerKind::Dense(d) if d.has_bias && !action.is_decomposed() => {
                Some(random_normal(vec![d.out_features], seed)?)
            }
            _ => None,
        };
        let x = random_normal(layer_input_shape(layer, batch)?, seed)?;
        let t = median_time_ns(
            || {
                std::hint::black_box(forward_layer(layer, &factors, bias.as_ref(), &x, false).ok());
            },
            opts.reps,
            opts.warmup,
        );
        times.insert(key, t);
        Ok(t)
    };

    let layers: Vec<&LayerSpec> = arch.compressible().collect();
    let mut original_total = 0u64;
    for (i, l) in layers.iter().enumerate() {
        original_total += time_of(l, &LayerAction::Unchanged, i)?;
    }
    let mut rows = vec![ModeRow {
        mode: ORIGINAL_ROW.into(),
        params_after: count_params(arch, None).total,
        macs_after: count_macs(arch, None).total_macs,
        total_time_ns: original_total,
        speedup_vs_original: 1.0,
    }];
    for (label, plan) in plans {
        let mut total = 0u64;
        for (i, l) in layers.iter().enumerate() {
            total += time_of(l, &plan.entries[&l.name].action, i)?;
        }
        rows.push(ModeRow {
            mode: label.clone(),
            params_after: plan.totals.params_after,
            macs_after: count_macs(arch, Some(plan)).total_macs,
            total_time_ns: total,
            speedup_vs_original: original_total as f64 / total.max(1) as f64,
        });
    }
    rows.sort_by(|a, b| a.total_time_ns.cmp(&b.total_time_ns).then_with(|| a.mode.cmp(&b.mode)));
    let input_shape = vec![batch, 3, arch.input_hw, arch.input_hw];
    Ok(ModeReport {
        machine_info: MachineInfo::current(),
        input_shape,
        rows,
    })
}

/// Plans each config on `arch` and compares them; rows are labelled by mode.
pub fn compare_modes(
    arch: &ArchDescriptor,
    configs: &[CompressionConfig],
    weights: Option<&TensorMap>,
    batch: usize,
    opts: BenchOptions,
) -> Result<ModeReport> {
    let mut plans = Vec::with_capacity(configs.len());
    for cfg in configs {
        let mut label = cfg.mode.label();
        let dupes = plans.iter().filter(|(l, _): &&(String, RankPlan)| l.starts_with(&label)).count();
        if dupes > 0 {
            label = format!("{label}#{}", dupes + 1);
        }
        plans.push((label, plan_ranks(arch, cfg, weights).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", cfg.mode)),
            other => other,
        })?));
    }
    compare_plans(arch, &plans, batch, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_resnet, ConvSpec, LayerRole};
    use crate::decompose::{decompose_spatial_tucker2, HooiOptions};

    fn conv_layer(c_in: usize, c_out: usize, k: usize, hw: usize) -> LayerSpec {
        LayerSpec {
            name: "probe".into(),
            kind: LayerKind::Conv(ConvSpec { c_in, c_out, kernel_h: k, kernel_w: k, stride: 1, padding: k / 2 }),
            block: 1,
            role: Some(LayerRole::Spatial),
            in_h: hw,
            in_w: hw,
            out_h: hw,
            out_w: hw,
            source: None,
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        let mut n = 0u64;
        let t = median_time_ns(|| n += 1, 5, 2);
        assert!(t >= 1);
        assert_eq!(n, 7);
    }

    #[test]
    fn full_rank_chain_checksum_matches() {
        let l = conv_layer(8, 8, 3, 6);
        let w = random_normal(vec![8, 8, 3, 3], 1).unwrap();
        let d = decompose_spatial_tucker2(&w, 8, 8, HooiOptions::default()).unwrap();
        let r = bench_layer(&l, &w, None, &d, 1, BenchOptions { reps: 3, warmup: 1, seed: 0 }).unwrap();
        assert!(r.full_rank);
        assert!(r.checksum_rel_diff <= CHECKSUM_TOL);
        assert!(r.speedup > 0.0 && r.original_time_ns > 0);
    }

    #[test]
    fn bad_options_rejected() {
        let l = conv_layer(2, 2, 3, 4);
        let w = random_normal(vec![2, 2, 3, 3], 1).unwrap();
        let d = DecomposedLayer::unchanged(w.clone());
        let o = BenchOptions { reps: 2, warmup: 1, seed: 0 };
        assert!(bench_layer(&l, &w, None, &d, 1, o).is_err());
    }

    #[test]
    fn identity_plan_has_unit_speedup() {
        let arch = build_resnet(18, 32).unwrap();
        let plan = RankPlan::identity(&arch).unwrap();
        let opts = BenchOptions { reps: 3, warmup: 1, seed: 0 };
        let rep = compare_plans(&arch, &[("noop".into(), plan)], 1, opts).unwrap();
        assert_eq!(rep.rows.len(), 2);
        let s = rep.row("noop").unwrap().speedup_vs_original;
        assert!((0.9..=1.1).contains(&s));
    }

    #[test]
    fn report_round_trip_and_table() {
        let arch = build_resnet(18, 32).unwrap();
        let cfgs = [
            CompressionConfig { mode: crate::arch::CompressionMode::Vanilla, ..Default::default() },
            CompressionConfig::default(),
        ];
        let rep = compare_modes(&arch, &cfgs, None, 1, BenchOptions { reps: 3, warmup: 1, seed: 0 }).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.row("mode3").unwrap().macs_after > rep.row("vanilla").unwrap().macs_after);
        for w in rep.rows.windows(2) {
            assert!(w[0].total_time_ns <= w[1].total_time_ns);
        }
        let s = serde_json::to_string(&rep).unwrap();
        let back: ModeReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rep);
        let table = rep.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.starts_with("mode"));
    }
}

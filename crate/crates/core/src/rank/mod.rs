//! Per-layer rank selection: parameter reduction (PR) or VBMF with a
//! weakening factor, followed by rank quantization.

mod pr;
mod vbmf;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::arch::{
    layer_cost, select_layers, ArchDescriptor, CompressionMode, LayerKind, LayerRole, LayerSpec,
};
use crate::checkpoint::TensorMap;
use crate::error::{bail, Error, Result};
use crate::par;
use crate::tensor::unfold;

pub use pr::{
    apply_weakening, pr_rank_dense, pr_ranks_tucker2, quantize_rank, round_half_up,
    tucker2_budget_root,
};
pub use vbmf::{estimate_from_singular_values, vbmf_estimate, vbmf_rank, VbmfEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RankMethod {
    /// Parameter reduction: ranks follow from the target ratio alone.
    Pr,
    /// VBMF rank estimate relaxed towards full rank by `weakening ∈ [0, 1]`.
    Vbmf { weakening: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Pr,
    Vbmf,
}

/// Compression settings. The epoch and learning-rate fields are carried as
/// metadata for the surrounding training workflow and never read here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub method: RankMethod,
    pub target_ratio: f64,
    pub final_dense_ratio: f64,
    pub rank_quantum: usize,
    pub mode: CompressionMode,
    pub n1_epochs: u32,
    pub n2_epochs: u32,
    pub lr_max: f64,
    /// Decompose selected layers even when every rank ends up at full rank.
    #[serde(default)]
    pub keep_full_rank: bool,
}

impl Default for CompressionConfig {
    /// PR, Mode3, 3× target, 1.3× on the final dense layer, ranks in multiples of 32.
    fn default() -> Self {
        Self {
            method: RankMethod::Pr,
            target_ratio: 3.0,
            final_dense_ratio: 1.3,
            rank_quantum: 32,
            mode: CompressionMode::Mode3,
            n1_epochs: 45,
            n2_epochs: 45,
            lr_max: 0.02,
            keep_full_rank: false,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_ratio.is_finite() && self.target_ratio > 1.0) {
            bail!(Config, "target ratio must be > 1, got {}", self.target_ratio);
        }
        if !(self.final_dense_ratio.is_finite() && self.final_dense_ratio >= 1.0) {
            bail!(
                Config,
                "final dense ratio must be >= 1, got {}",
                self.final_dense_ratio
            );
        }
        if self.rank_quantum == 0 {
            bail!(Config, "rank quantum must be >= 1");
        }
        if let RankMethod::Vbmf { weakening } = self.method {
            if !(0.0..=1.0).contains(&weakening) {
                bail!(Config, "weakening factor must lie in [0, 1], got {weakening}");
            }
        }
        if let CompressionMode::Custom { include, .. } = &self.mode {
            if include.is_empty() {
                bail!(Config, "custom mode needs at least one include pattern");
            }
        }
        Ok(())
    }
}

/// How one layer is rewritten. `raw_*` ranks are before quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerAction {
    Unchanged,
    DensePair {
        raw_rank: usize,
        rank: usize,
    },
    PointwisePair {
        raw_rank: usize,
        rank: usize,
    },
    Tucker2 {
        raw_r_in: usize,
        raw_r_out: usize,
        r_in: usize,
        r_out: usize,
    },
}

impl LayerAction {
    pub fn is_decomposed(&self) -> bool {
        !matches!(self, LayerAction::Unchanged)
    }

    /// Checks that the action fits the layer kind and that ranks are in range.
    pub fn check_fits(&self, layer: &LayerSpec) -> Result<()> {
        let bad = |why: String| Err(Error::Mismatch(format!("layer {:?}: {why}", layer.name)));
        match (&layer.kind, self) {
            (LayerKind::Conv(_) | LayerKind::Dense(_), LayerAction::Unchanged) => Ok(()),
            (LayerKind::Dense(d), LayerAction::DensePair { rank, .. }) => {
                let max = d.in_features.min(d.out_features);
                if *rank == 0 || *rank > max {
                    return bad(format!("rank {rank} outside 1..={max}"));
                }
                Ok(())
            }
            (LayerKind::Conv(c), LayerAction::PointwisePair { rank, .. }) if c.is_pointwise() => {
                let max = c.c_in.min(c.c_out);
                if *rank == 0 || *rank > max {
                    return bad(format!("rank {rank} outside 1..={max}"));
                }
                Ok(())
            }
            (LayerKind::Conv(c), LayerAction::Tucker2 { r_in, r_out, .. })
                if c.kernel_h >= 2 && c.kernel_w >= 2 =>
            {
                if *r_in == 0 || *r_in > c.c_in || *r_out == 0 || *r_out > c.c_out {
                    return bad(format!(
                        "ranks ({r_in}, {r_out}) outside 1..={} / 1..={}",
                        c.c_in, c.c_out
                    ));
                }
                Ok(())
            }
            (_, action) => bad(format!("action {action:?} does not apply to this layer")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub action: LayerAction,
    pub method: Option<MethodTag>,
    pub params_before: u64,
    pub params_after: u64,
    pub macs_before: u64,
    pub macs_after: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTotals {
    pub params_before: u64,
    pub params_after: u64,
    pub macs_before: u64,
    pub macs_after: u64,
}

/// Per-layer ranks for one architecture under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPlan {
    pub arch: String,
    pub config: CompressionConfig,
    /// Every conv/dense layer of the architecture, in network order.
    pub entries: IndexMap<String, PlanEntry>,
    pub totals: PlanTotals,
    /// Parameters before / after.
    pub achieved_ratio: f64,
    pub warnings: Vec<String>,
}

impl RankPlan {
    fn from_actions(
        arch: &ArchDescriptor,
        config: CompressionConfig,
        actions: impl IntoIterator<Item = (String, LayerAction, Option<MethodTag>)>,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let mut entries = IndexMap::new();
        let mut totals = PlanTotals::default();
        for (name, action, method) in actions {
            let layer = arch
                .layer(&name)
                .ok_or_else(|| Error::Internal(format!("plan layer {name:?} missing from arch")))?;
            action.check_fits(layer)?;
            let before = layer_cost(layer, &LayerAction::Unchanged);
            let after = layer_cost(layer, &action);
            totals.params_before += before.params;
            totals.params_after += after.params;
            totals.macs_before += before.macs;
            totals.macs_after += after.macs;
            entries.insert(
                name,
                PlanEntry {
                    action,
                    method,
                    params_before: before.params,
                    params_after: after.params,
                    macs_before: before.macs,
                    macs_after: after.macs,
                },
            );
        }
        let achieved_ratio = if totals.params_after > 0 {
            totals.params_before as f64 / totals.params_after as f64
        } else {
            0.0
        };
        Ok(Self {
            arch: arch.name.clone(),
            config,
            entries,
            totals,
            achieved_ratio,
            warnings,
        })
    }

    /// A plan that leaves every layer untouched.
    pub fn identity(arch: &ArchDescriptor) -> Result<Self> {
        let actions = arch
            .compressible()
            .map(|l| (l.name.clone(), LayerAction::Unchanged, None))
            .collect::<Vec<_>>();
        Self::from_actions(arch, CompressionConfig::default(), actions, Vec::new())
    }

    pub fn decomposed_count(&self) -> usize {
        self.entries.values().filter(|e| e.action.is_decomposed()).count()
    }

    /// Checks that the plan was made for `arch`: same layer set and costs that
    /// agree with the closed-form formulas.
    pub fn check_against(&self, arch: &ArchDescriptor) -> Result<()> {
        for name in self.entries.keys() {
            match arch.layer(name) {
                Some(l) if l.is_compressible() => {}
                _ => bail!(Mismatch, "plan references unknown layer {name:?}"),
            }
        }
        for layer in arch.compressible() {
            let Some(entry) = self.entries.get(&layer.name) else {
                bail!(Mismatch, "plan has no entry for layer {:?}", layer.name);
            };
            entry.action.check_fits(layer)?;
            let after = layer_cost(layer, &entry.action);
            let before = layer_cost(layer, &LayerAction::Unchanged);
            if (before.params, before.macs, after.params, after.macs)
                != (entry.params_before, entry.macs_before, entry.params_after, entry.macs_after)
            {
                bail!(
                    Mismatch,
                    "plan costs for {:?} do not match the architecture",
                    layer.name
                );
            }
        }
        Ok(())
    }
}

fn full_ranks(action: &LayerAction, layer: &LayerSpec) -> bool {
    match (action, &layer.kind) {
        (LayerAction::DensePair { rank, .. }, LayerKind::Dense(d)) => {
            *rank == d.in_features.min(d.out_features)
        }
        (LayerAction::PointwisePair { rank, .. }, LayerKind::Conv(c)) => *rank == c.c_in.min(c.c_out),
        (LayerAction::Tucker2 { r_in, r_out, .. }, LayerKind::Conv(c)) => {
            *r_in == c.c_in && *r_out == c.c_out
        }
        _ => false,
    }
}

/// The decomposition of `layer` that keeps every rank at its maximum
/// (lossless up to rounding); `None` for layers without weights.
pub fn full_rank_action(layer: &LayerSpec) -> Option<LayerAction> {
    Some(match &layer.kind {
        LayerKind::Dense(d) => {
            let r = d.in_features.min(d.out_features);
            LayerAction::DensePair { raw_rank: r, rank: r }
        }
        LayerKind::Conv(c) if c.is_pointwise() => {
            let r = c.c_in.min(c.c_out);
            LayerAction::PointwisePair { raw_rank: r, rank: r }
        }
        LayerKind::Conv(c) => LayerAction::Tucker2 {
            raw_r_in: c.c_in,
            raw_r_out: c.c_out,
            r_in: c.c_in,
            r_out: c.c_out,
        },
        _ => return None,
    })
}

fn layer_weight<'a>(weights: Option<&'a TensorMap>, layer: &LayerSpec) -> Result<&'a crate::tensor::Tensor> {
    let weights = weights.ok_or_else(|| Error::Config("VBMF rank selection needs a checkpoint".into()))?;
    let key = layer.weight_key();
    let w = weights
        .get(&key)
        .ok_or_else(|| Error::Mismatch(format!("checkpoint has no tensor {key:?}")))?;
    let expected = layer.weight_shape().unwrap_or_default();
    if w.shape() != expected.as_slice() {
        bail!(
            Mismatch,
            "tensor {key:?} has shape {:?}, layer expects {expected:?}",
            w.shape()
        );
    }
    Ok(w)
}

fn plan_layer(
    layer: &LayerSpec,
    cfg: &CompressionConfig,
    weights: Option<&TensorMap>,
) -> Result<(LayerAction, MethodTag)> {
    let q = cfg.rank_quantum;
    let final_dense = layer.role == Some(LayerRole::FinalDense);
    // The final dense layer always follows its own (milder) ratio.
    let method = if final_dense { RankMethod::Pr } else { cfg.method };
    let ratio = if final_dense || matches!(layer.kind, LayerKind::Dense(_)) {
        cfg.final_dense_ratio
    } else {
        cfg.target_ratio
    };
    let tag = match method {
        RankMethod::Pr => MethodTag::Pr,
        RankMethod::Vbmf { .. } => MethodTag::Vbmf,
    };
    let matrix_rank = |out: usize, inp: usize| -> Result<usize> {
        let r_max = out.min(inp);
        Ok(match method {
            RankMethod::Pr => pr_rank_dense(out, inp, ratio),
            RankMethod::Vbmf { weakening } => {
                let w = layer_weight(weights, layer)?.clone().reshape(vec![out, inp])?;
                apply_weakening(vbmf_rank(&w)?, r_max, weakening)
            }
        })
    };
    let action = match &layer.kind {
        LayerKind::Dense(d) => {
            let raw = matrix_rank(d.out_features, d.in_features)?;
            LayerAction::DensePair {
                raw_rank: raw,
                rank: quantize_rank(raw, q, d.out_features.min(d.in_features)),
            }
        }
        LayerKind::Conv(c) if c.is_pointwise() => {
            let raw = matrix_rank(c.c_out, c.c_in)?;
            LayerAction::PointwisePair {
                raw_rank: raw,
                rank: quantize_rank(raw, q, c.c_out.min(c.c_in)),
            }
        }
        LayerKind::Conv(c) => {
            let (raw_r_in, raw_r_out) = match method {
                RankMethod::Pr => pr::pr_ranks_tucker2_area(c.c_out, c.c_in, c.kernel_area(), ratio),
                RankMethod::Vbmf { weakening } => {
                    let w = layer_weight(weights, layer)?;
                    let r_out = vbmf_rank(&unfold(w, 0)?)?;
                    let r_in = vbmf_rank(&unfold(w, 1)?)?;
                    (
                        apply_weakening(r_in, c.c_in, weakening),
                        apply_weakening(r_out, c.c_out, weakening),
                    )
                }
            };
            LayerAction::Tucker2 {
                raw_r_in,
                raw_r_out,
                r_in: quantize_rank(raw_r_in, q, c.c_in),
                r_out: quantize_rank(raw_r_out, q, c.c_out),
            }
        }
        _ => return Err(Error::Internal(format!("layer {:?} is not compressible", layer.name))),
    };
    Ok((action, tag))
}

/// Chooses ranks for every layer selected by `cfg.mode`.
///
/// Order is fixed: select → rank (PR or weakened VBMF) → quantize. A layer
/// whose quantized ranks are all full is left unchanged unless
/// `cfg.keep_full_rank` is set.
pub fn plan_ranks(
    arch: &ArchDescriptor,
    cfg: &CompressionConfig,
    weights: Option<&TensorMap>,
) -> Result<RankPlan> {
    cfg.validate()?;
    if matches!(cfg.method, RankMethod::Vbmf { .. }) && weights.is_none() {
        bail!(Config, "VBMF rank selection needs a checkpoint with trained weights");
    }
    let selection = select_layers(arch, &cfg.mode);
    let layers: Vec<&LayerSpec> = arch.compressible().collect();
    let decided = par::map_collect(&layers, |layer| -> Result<(LayerAction, Option<MethodTag>)> {
        if !selection.contains(&layer.name) {
            return Ok((LayerAction::Unchanged, None));
        }
        let (action, tag) = plan_layer(layer, cfg, weights)?;
        if full_ranks(&action, layer) && !cfg.keep_full_rank {
            return Ok((LayerAction::Unchanged, Some(tag)));
        }
        Ok((action, Some(tag)))
    });
    let mut actions = Vec::with_capacity(layers.len());
    for (layer, d) in layers.iter().zip(decided) {
        let (action, tag) = d?;
        actions.push((layer.name.clone(), action, tag));
    }
    RankPlan::from_actions(arch, cfg.clone(), actions, selection.warnings)
}

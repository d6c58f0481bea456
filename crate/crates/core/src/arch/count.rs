use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ArchDescriptor, LayerKind, LayerSpec};
use crate::rank::{LayerAction, RankPlan};

/// Parameters and multiply-accumulates of one layer (batch 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Conv and dense parameters; this is what compression ratios use.
    pub total: u64,
    /// BatchNorm affine parameters (2 per channel), reported separately.
    pub batch_norm: u64,
    pub per_layer: IndexMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacCount {
    pub total_macs: u64,
    pub total_flops: u64,
    pub per_layer: IndexMap<String, u64>,
}

/// Closed-form cost of `layer` after applying `action`.
///
/// Factored chains place their leading 1×1 conv at the input resolution and
/// every later stage at the output resolution.
pub fn layer_cost(layer: &LayerSpec, action: &LayerAction) -> LayerCost {
    let in_px = (layer.in_h * layer.in_w) as u64;
    let out_px = (layer.out_h * layer.out_w) as u64;
    match (&layer.kind, action) {
        (LayerKind::Conv(c), LayerAction::Unchanged) => {
            let p = (c.c_out * c.c_in * c.kernel_area()) as u64;
            LayerCost { params: p, macs: p * out_px }
        }
        (LayerKind::Dense(d), LayerAction::Unchanged) => {
            let w = (d.in_features * d.out_features) as u64;
            let bias = if d.has_bias { d.out_features as u64 } else { 0 };
            LayerCost { params: w + bias, macs: w }
        }
        (LayerKind::Dense(d), LayerAction::DensePair { rank, .. }) => {
            let r = *rank as u64;
            let w = r * (d.in_features + d.out_features) as u64;
            let bias = if d.has_bias { d.out_features as u64 } else { 0 };
            LayerCost { params: w + bias, macs: w }
        }
        (LayerKind::Conv(c), LayerAction::PointwisePair { rank, .. }) => {
            let r = *rank as u64;
            let (ci, co) = (c.c_in as u64, c.c_out as u64);
            LayerCost {
                params: r * (ci + co),
                macs: r * ci * in_px + co * r * out_px,
            }
        }
        (LayerKind::Conv(c), LayerAction::Tucker2 { r_in, r_out, .. }) => {
            let (ri, ro) = (*r_in as u64, *r_out as u64);
            let (ci, co, area) = (c.c_in as u64, c.c_out as u64, c.kernel_area() as u64);
            LayerCost {
                params: ci * ri + ri * ro * area + ro * co,
                macs: ci * ri * in_px + (ri * ro * area + ro * co) * out_px,
            }
        }
        // Mismatched kind/action pairs are rejected when a plan is built; a
        // non-parametric layer has no cost.
        _ => LayerCost::default(),
    }
}

fn action_for<'a>(plan: Option<&'a RankPlan>, name: &str) -> &'a LayerAction {
    plan.and_then(|p| p.entries.get(name))
        .map(|e| &e.action)
        .unwrap_or(&LayerAction::Unchanged)
}

/// Parameter count of `arch`, substituting factored formulas for layers the
/// plan decomposes.
pub fn count_params(arch: &ArchDescriptor, plan: Option<&RankPlan>) -> ParamCount {
    let mut per_layer = IndexMap::new();
    let mut batch_norm = 0;
    for l in &arch.layers {
        match l.kind {
            LayerKind::BatchNorm { channels } => batch_norm += 2 * channels as u64,
            LayerKind::Conv(_) | LayerKind::Dense(_) => {
                per_layer.insert(l.name.clone(), layer_cost(l, action_for(plan, &l.name)).params);
            }
            LayerKind::Pool { .. } => {}
        }
    }
    ParamCount {
        total: per_layer.values().sum(),
        batch_norm,
        per_layer,
    }
}

/// MAC count of one forward pass at the descriptor's reference resolution.
pub fn count_macs(arch: &ArchDescriptor, plan: Option<&RankPlan>) -> MacCount {
    let per_layer: IndexMap<String, u64> = arch
        .compressible()
        .map(|l| (l.name.clone(), layer_cost(l, action_for(plan, &l.name)).macs))
        .collect();
    let total_macs = per_layer.values().sum();
    MacCount {
        total_macs,
        total_flops: 2 * total_macs,
        per_layer,
    }
}

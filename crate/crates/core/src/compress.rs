//! The compression pipeline (checkpoint + plan → decomposed checkpoint +
//! expanded architecture) and the matching verification pass.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::arch::{count_params, ArchDescriptor, ConvSpec, DenseSpec, LayerKind, LayerRole, LayerSpec};
use crate::checkpoint::{narrow_to_f32, TensorMap};
use crate::conv::forward_layer;
use crate::decompose::{decompose_layer, reconstruct, DecomposedLayer, HooiOptions, LayerFactors, RanksUsed};
use crate::error::{bail, Error, Result};
use crate::init::random_normal;
use crate::par;
use crate::rank::{LayerAction, RankPlan};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressOptions {
    pub workers: usize,
    pub hooi: HooiOptions,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            workers: par::default_workers(),
            hooi: HooiOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub action: LayerAction,
    pub ranks_used: Option<RanksUsed>,
    pub recon_rel_error: f64,
    pub params_before: u64,
    pub params_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressSummary {
    pub arch: String,
    pub layers: Vec<LayerReport>,
    pub params_before: u64,
    pub params_after: u64,
    /// What the plan predicted for `params_after`.
    pub predicted_params_after: u64,
    pub max_recon_rel_error: f64,
    pub layer_count_before: usize,
    pub layer_count_after: usize,
}

#[derive(Debug, Clone)]
pub struct CompressOutput {
    pub arch: ArchDescriptor,
    pub checkpoint: TensorMap,
    pub summary: CompressSummary,
}

fn weight<'a>(ckpt: &'a TensorMap, layer: &LayerSpec) -> Result<&'a Tensor> {
    let key = layer.weight_key();
    let w = ckpt
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
    if !w.all_finite() {
        bail!(Data, "tensor {key:?} contains non-finite values");
    }
    Ok(w)
}

fn bias<'a>(ckpt: &'a TensorMap, layer: &LayerSpec) -> Result<Option<&'a Tensor>> {
    match &layer.kind {
        LayerKind::Dense(d) if d.has_bias => {
            let key = layer.bias_key();
            let b = ckpt
                .get(&key)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint has no tensor {key:?}")))?;
            if b.shape() != [d.out_features] {
                bail!(Mismatch, "tensor {key:?} has shape {:?}, expected [{}]", b.shape(), d.out_features);
            }
            Ok(Some(b))
        }
        _ => Ok(None),
    }
}

fn stage(
    layer: &LayerSpec,
    suffix: &str,
    kind: LayerKind,
    role: Option<LayerRole>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
) -> LayerSpec {
    LayerSpec {
        name: format!("{}.{suffix}", layer.name),
        kind,
        block: layer.block,
        role,
        in_h: in_hw.0,
        in_w: in_hw.1,
        out_h: out_hw.0,
        out_w: out_hw.1,
        source: Some(layer.name.clone()),
    }
}

/// Layer specs that replace `layer` once `factors` are applied.
pub fn expand_layer(layer: &LayerSpec, factors: &LayerFactors) -> Result<Vec<LayerSpec>> {
    let inp = (layer.in_h, layer.in_w);
    let out = (layer.out_h, layer.out_w);
    Ok(match (&layer.kind, factors) {
        (_, LayerFactors::Unchanged { .. }) => vec![layer.clone()],
        (LayerKind::Dense(d), LayerFactors::DensePair { b, .. }) => {
            let r = b.shape()[0];
            let first = DenseSpec { in_features: d.in_features, out_features: r, has_bias: false };
            let second = DenseSpec { in_features: r, out_features: d.out_features, has_bias: d.has_bias };
            vec![
                stage(layer, "first", LayerKind::Dense(first), layer.role, inp, out),
                stage(layer, "second", LayerKind::Dense(second), layer.role, inp, out),
            ]
        }
        (LayerKind::Conv(c), LayerFactors::PointwisePair { first, .. }) => {
            let r = first.shape()[0];
            vec![
                stage(layer, "first", LayerKind::Conv(ConvSpec::pointwise(c.c_in, r, 1, 0)), layer.role, inp, inp),
                stage(
                    layer,
                    "second",
                    LayerKind::Conv(ConvSpec::pointwise(r, c.c_out, c.stride, c.padding)),
                    layer.role,
                    inp,
                    out,
                ),
            ]
        }
        (LayerKind::Conv(c), LayerFactors::Tucker2 { core, .. }) => {
            let (r_out, r_in) = (core.shape()[0], core.shape()[1]);
            let pw = Some(LayerRole::Pointwise);
            vec![
                stage(layer, "first", LayerKind::Conv(ConvSpec::pointwise(c.c_in, r_in, 1, 0)), pw, inp, inp),
                stage(
                    layer,
                    "core",
                    LayerKind::Conv(ConvSpec { c_in: r_in, c_out: r_out, ..*c }),
                    layer.role,
                    inp,
                    out,
                ),
                stage(layer, "last", LayerKind::Conv(ConvSpec::pointwise(r_out, c.c_out, 1, 0)), pw, out, out),
            ]
        }
        _ => bail!(Mismatch, "factors do not match the kind of layer {:?}", layer.name),
    })
}

/// Decomposes every layer the plan marks, in parallel over layers.
///
/// Results do not depend on `opts.workers`.
pub fn compress(
    arch: &ArchDescriptor,
    ckpt: &TensorMap,
    plan: &RankPlan,
    opts: &CompressOptions,
) -> Result<CompressOutput> {
    plan.check_against(arch)?;
    let layers: Vec<&LayerSpec> = arch.compressible().collect();
    for l in &layers {
        weight(ckpt, l)?;
        bias(ckpt, l)?;
    }
    let todo: Vec<&LayerSpec> = layers
        .iter()
        .copied()
        .filter(|l| plan.entries[&l.name].action.is_decomposed())
        .collect();
    let results = par::with_workers(opts.workers, || {
        par::map_collect(&todo, |l| -> Result<DecomposedLayer> {
            decompose_layer(l, weight(ckpt, l)?, bias(ckpt, l)?, &plan.entries[&l.name].action, opts.hooi)
        })
    });
    let mut done: IndexMap<&str, DecomposedLayer> = IndexMap::new();
    for (l, r) in todo.iter().zip(results) {
        done.insert(&l.name, r?);
    }

    let mut out_layers = Vec::with_capacity(arch.layers.len() + 2 * done.len());
    for l in &arch.layers {
        match done.get(l.name.as_str()) {
            Some(d) => out_layers.extend(expand_layer(l, &d.factors)?),
            None => out_layers.push(l.clone()),
        }
    }
    let out_arch = ArchDescriptor {
        name: format!("{}-lrd", arch.name),
        input_hw: arch.input_hw,
        layers: out_layers,
    };
    out_arch.validate()?;

    let weight_owner: IndexMap<String, &str> = done.keys().map(|n| (format!("{n}.weight"), *n)).collect();
    let bias_owner: IndexMap<String, &str> = done.keys().map(|n| (format!("{n}.bias"), *n)).collect();
    let mut out_ckpt = TensorMap::new();
    for (key, t) in ckpt {
        if let Some(name) = weight_owner.get(key) {
            for (suffix, w) in done[*name].stages() {
                out_ckpt.insert(format!("{name}.{suffix}.weight"), narrow_to_f32(w));
            }
        } else if let Some(name) = bias_owner.get(key) {
            out_ckpt.insert(format!("{name}.second.bias"), t.clone());
        } else {
            out_ckpt.insert(key.clone(), t.clone());
        }
    }

    let reports: Vec<LayerReport> = layers
        .iter()
        .map(|l| {
            let e = &plan.entries[&l.name];
            let d = done.get(l.name.as_str());
            LayerReport {
                name: l.name.clone(),
                action: e.action,
                ranks_used: d.and_then(DecomposedLayer::ranks_used),
                recon_rel_error: d.map_or(0.0, |d| d.recon_rel_error),
                params_before: e.params_before,
                params_after: d.map_or(e.params_before, |d| d.param_count() as u64),
            }
        })
        .collect();
    let params_after = count_params(&out_arch, None).total;
    let summary = CompressSummary {
        arch: arch.name.clone(),
        params_before: count_params(arch, None).total,
        params_after,
        predicted_params_after: plan.totals.params_after,
        max_recon_rel_error: reports.iter().map(|r| r.recon_rel_error).fold(0.0, f64::max),
        layer_count_before: arch.layers.len(),
        layer_count_after: out_arch.layers.len(),
        layers: reports,
    };
    if summary.params_after != summary.predicted_params_after {
        bail!(
            Internal,
            "compressed model has {} parameters, plan predicted {}",
            summary.params_after,
            summary.predicted_params_after
        );
    }
    Ok(CompressOutput {
        arch: out_arch,
        checkpoint: out_ckpt,
        summary,
    })
}

/// Reassembles the factors of original layer `orig` from the compressed
/// architecture and checkpoint.
pub fn collect_factors(
    orig: &LayerSpec,
    stages: &[&LayerSpec],
    ckpt: &TensorMap,
) -> Result<(LayerFactors, Option<Tensor>)> {
    let names: Vec<&str> = stages
        .iter()
        .map(|s| s.name.strip_prefix(orig.name.as_str()).unwrap_or(&s.name))
        .collect();
    let w = |i: usize| weight(ckpt, stages[i]).cloned();
    let mismatch = || {
        Error::Mismatch(format!(
            "layer {:?}: compressed stages {:?} do not form a known chain",
            orig.name,
            stages.iter().map(|s| &s.name).collect::<Vec<_>>()
        ))
    };
    let factors = match (&orig.kind, names.as_slice()) {
        (_, [""]) => {
            if stages[0].kind != orig.kind {
                return Err(mismatch());
            }
            LayerFactors::Unchanged { w: w(0)? }
        }
        (LayerKind::Dense(_), [".first", ".second"]) => LayerFactors::DensePair {
            a: w(1)?,
            b: w(0)?,
            bias: bias(ckpt, stages[1])?.cloned(),
        },
        (LayerKind::Conv(c), [".first", ".second"]) if c.is_pointwise() => {
            LayerFactors::PointwisePair { first: w(0)?, second: w(1)? }
        }
        (LayerKind::Conv(_), [".first", ".core", ".last"]) => LayerFactors::Tucker2 {
            first: w(0)?,
            core: w(1)?,
            last: w(2)?,
        },
        _ => return Err(mismatch()),
    };
    let expected = orig.weight_shape().unwrap_or_default();
    let rebuilt = reconstruct(&factors)?;
    if rebuilt.shape() != expected.as_slice() {
        return Err(mismatch());
    }
    let b = match &factors {
        LayerFactors::Unchanged { .. } => bias(ckpt, stages[0])?.cloned(),
        _ => None,
    };
    Ok((factors, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Spatial size of the random probe inputs; each layer's own input size when `None`.
    pub input_hw: Option<usize>,
    pub batch: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            input_hw: None,
            batch: 1,
            seed: 0,
            workers: par::default_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub name: String,
    pub variant: String,
    pub recon_rel_error: f64,
    pub forward_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub layers: Vec<LayerCheck>,
    pub worst_recon_rel_error: f64,
    pub worst_forward_rel_error: f64,
}

impl VerifyReport {
    pub fn worst(&self) -> f64 {
        self.worst_recon_rel_error.max(self.worst_forward_rel_error)
    }
}

fn variant_name(f: &LayerFactors) -> &'static str {
    match f {
        LayerFactors::Unchanged { .. } => "unchanged",
        LayerFactors::DensePair { .. } => "dense_pair",
        LayerFactors::PointwisePair { .. } => "pointwise_pair",
        LayerFactors::Tucker2 { .. } => "tucker2",
    }
}

/// Compares a compressed model against its original layer by layer:
/// weight reconstruction error and forward-pass deviation on seeded random inputs.
pub fn verify(
    orig_arch: &ArchDescriptor,
    orig_ckpt: &TensorMap,
    comp_arch: &ArchDescriptor,
    comp_ckpt: &TensorMap,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    if opts.batch == 0 {
        bail!(Argument, "batch must be >= 1");
    }
    let mut groups: IndexMap<&str, Vec<&LayerSpec>> = IndexMap::new();
    for l in comp_arch.compressible() {
        groups.entry(l.origin()).or_default().push(l);
    }
    for origin in groups.keys() {
        if !orig_arch.layer(origin).is_some_and(LayerSpec::is_compressible) {
            bail!(Mismatch, "compressed layer group {origin:?} has no original layer");
        }
    }
    let originals: Vec<(usize, &LayerSpec)> = orig_arch.compressible().enumerate().collect();
    let checks = par::with_workers(opts.workers, || {
        par::map_collect(&originals, |&(idx, orig)| -> Result<LayerCheck> {
            let stages = groups
                .get(orig.name.as_str())
                .ok_or_else(|| Error::Mismatch(format!("layer {:?} missing from compressed model", orig.name)))?;
            let w = weight(orig_ckpt, orig)?;
            let b = bias(orig_ckpt, orig)?;
            let (factors, comp_bias) = collect_factors(orig, stages, comp_ckpt)?;
            let recon = reconstruct(&factors)?.relative_error(w)?;
            let shape = match &orig.kind {
                LayerKind::Dense(d) => vec![opts.batch, d.in_features],
                LayerKind::Conv(c) => {
                    let (h, wd) = opts.input_hw.map_or((orig.in_h, orig.in_w), |s| (s, s));
                    vec![opts.batch, c.c_in, h, wd]
                }
                _ => unreachable!("compressible layers are conv or dense"),
            };
            let x = random_normal(shape, opts.seed.wrapping_add(idx as u64))?;
            let reference = forward_layer(orig, &LayerFactors::Unchanged { w: w.clone() }, b, &x, false)?;
            let y = forward_layer(orig, &factors, comp_bias.as_ref(), &x, false)?;
            Ok(LayerCheck {
                name: orig.name.clone(),
                variant: variant_name(&factors).into(),
                recon_rel_error: recon,
                forward_rel_error: y.relative_error(&reference)?,
            })
        })
    });
    let layers = checks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        worst_recon_rel_error: layers.iter().map(|c| c.recon_rel_error).fold(0.0, f64::max),
        worst_forward_rel_error: layers.iter().map(|c| c.forward_rel_error).fold(0.0, f64::max),
        layers,
    })
}

//! The three decomposition templates: dense → dense pair, 1×1 conv → 1×1
//! pair, k×k conv → Tucker-2 chain (1×1, k×k core, 1×1).

use serde::{Deserialize, Serialize};

use crate::arch::{LayerKind, LayerSpec};
use crate::error::{bail, Error, Result};
use crate::linalg::{leading_left_singular_vectors, matmul_fast, truncated_svd};
use crate::rank::LayerAction;
use crate::tensor::{mode_mult, mode_mult_with, unfold, Tensor};

/// HOOI stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HooiOptions {
    pub max_iters: usize,
    /// Stop once an iteration improves the relative error by less than this.
    pub tol: f64,
}

impl Default for HooiOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

/// Factor tensors of one decomposed layer, laid out as conv/dense weights.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerFactors {
    Unchanged {
        w: Tensor,
    },
    /// `w ≈ a·b`; input passes through `b` first. Bias belongs to `a`.
    DensePair {
        a: Tensor,
        b: Tensor,
        bias: Option<Tensor>,
    },
    /// `first`: `[r, C_in, 1, 1]`, `second`: `[C_out, r, 1, 1]`.
    PointwisePair {
        first: Tensor,
        second: Tensor,
    },
    /// `first`: `[R_in, C_in, 1, 1]`, `core`: `[R_out, R_in, kH, kW]`, `last`: `[C_out, R_out, 1, 1]`.
    Tucker2 {
        first: Tensor,
        core: Tensor,
        last: Tensor,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RanksUsed {
    Single(usize),
    Pair { r_in: usize, r_out: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedLayer {
    pub factors: LayerFactors,
    /// `‖W − W̃‖_F / ‖W‖_F`.
    pub recon_rel_error: f64,
}

impl DecomposedLayer {
    fn finish(factors: LayerFactors, original: &Tensor) -> Result<Self> {
        let recon_rel_error = reconstruct(&factors)?.relative_error(original)?;
        Ok(Self {
            factors,
            recon_rel_error,
        })
    }

    pub fn unchanged(w: Tensor) -> Self {
        Self {
            factors: LayerFactors::Unchanged { w },
            recon_rel_error: 0.0,
        }
    }

    pub fn ranks_used(&self) -> Option<RanksUsed> {
        match &self.factors {
            LayerFactors::Unchanged { .. } => None,
            LayerFactors::DensePair { b, .. } => Some(RanksUsed::Single(b.shape()[0])),
            LayerFactors::PointwisePair { first, .. } => Some(RanksUsed::Single(first.shape()[0])),
            LayerFactors::Tucker2 { core, .. } => Some(RanksUsed::Pair {
                r_in: core.shape()[1],
                r_out: core.shape()[0],
            }),
        }
    }

    /// Number of weights (and bias entries) across all factors.
    pub fn param_count(&self) -> usize {
        match &self.factors {
            LayerFactors::Unchanged { w } => w.len(),
            LayerFactors::DensePair { a, b, bias } => {
                a.len() + b.len() + bias.as_ref().map_or(0, Tensor::len)
            }
            LayerFactors::PointwisePair { first, second } => first.len() + second.len(),
            LayerFactors::Tucker2 { first, core, last } => first.len() + core.len() + last.len(),
        }
    }

    /// Stage weights in execution order with their name suffixes.
    pub fn stages(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.factors {
            LayerFactors::Unchanged { w } => vec![("", w)],
            LayerFactors::DensePair { a, b, .. } => vec![("first", b), ("second", a)],
            LayerFactors::PointwisePair { first, second } => {
                vec![("first", first), ("second", second)]
            }
            LayerFactors::Tucker2 { first, core, last } => {
                vec![("first", first), ("core", core), ("last", last)]
            }
        }
    }

    pub fn recompute_error(&self, original: &Tensor) -> Result<f64> {
        reconstruct(&self.factors)?.relative_error(original)
    }
}

fn check_finite(w: &Tensor) -> Result<()> {
    if !w.all_finite() {
        bail!(Data, "weight tensor contains non-finite values");
    }
    Ok(())
}

/// Splits a dense `[m×n]` weight into `a: [m×r]`, `b: [r×n]` by truncated SVD.
pub fn decompose_dense(w: &Tensor, bias: Option<&Tensor>, r: usize) -> Result<DecomposedLayer> {
    if !w.is_matrix() {
        bail!(Argument, "dense weight must be 2-d, got {:?}", w.shape());
    }
    check_finite(w)?;
    if let Some(b) = bias {
        if b.shape() != [w.shape()[0]] {
            bail!(Argument, "bias shape {:?} does not match {} outputs", b.shape(), w.shape()[0]);
        }
    }
    let (a, b) = truncated_svd(w, r)?;
    DecomposedLayer::finish(
        LayerFactors::DensePair {
            a,
            b,
            bias: bias.cloned(),
        },
        w,
    )
}

/// Splits a `[C_out, C_in, 1, 1]` conv into two 1×1 convs through `r` channels.
pub fn decompose_pointwise(w: &Tensor, r: usize) -> Result<DecomposedLayer> {
    let s = w.shape();
    if s.len() != 4 || s[2] != 1 || s[3] != 1 {
        bail!(Argument, "pointwise decomposition needs a 1x1 kernel, got {s:?}");
    }
    check_finite(w)?;
    let (c_out, c_in) = (s[0], s[1]);
    let (left, right) = truncated_svd(&w.clone().reshape(vec![c_out, c_in])?, r)?;
    DecomposedLayer::finish(
        LayerFactors::PointwisePair {
            first: right.reshape(vec![r, c_in, 1, 1])?,
            second: left.reshape(vec![c_out, r, 1, 1])?,
        },
        w,
    )
}

/// Tucker-2 factors with the HOOI error after initialization and after each sweep.
#[derive(Debug, Clone)]
pub struct Tucker2Factors {
    /// `[C_out × r_out]`, orthonormal columns.
    pub u: Tensor,
    /// `[C_in × r_in]`, orthonormal columns.
    pub v: Tensor,
    /// `[r_out, r_in, kH, kW]`.
    pub core: Tensor,
    pub error_history: Vec<f64>,
}

fn core_error(w_norm2: f64, core: &Tensor) -> f64 {
    if w_norm2 == 0.0 {
        return 0.0;
    }
    let g2 = core.frobenius_norm().powi(2);
    ((w_norm2 - g2).max(0.0) / w_norm2).sqrt()
}

/// HOSVD-initialized HOOI on the two channel modes of a 4-d kernel.
pub fn hooi_tucker2(w: &Tensor, r_in: usize, r_out: usize, opts: HooiOptions) -> Result<Tucker2Factors> {
    let s = w.shape();
    if s.len() != 4 {
        bail!(Argument, "Tucker-2 needs a 4-d kernel, got {s:?}");
    }
    if r_out == 0 || r_out > s[0] || r_in == 0 || r_in > s[1] {
        bail!(
            Argument,
            "Tucker-2 ranks ({r_in}, {r_out}) out of range for C_in={}, C_out={}",
            s[1],
            s[0]
        );
    }
    check_finite(w)?;
    let mm = |t: &Tensor, m: &Tensor, mode| mode_mult_with(t, m, mode, matmul_fast);
    let w_norm2 = w.frobenius_norm().powi(2);
    let mut u = leading_left_singular_vectors(&unfold(w, 0)?, r_out)?;
    let mut v = leading_left_singular_vectors(&unfold(w, 1)?, r_in)?;
    let project = |u: &Tensor, v: &Tensor| -> Result<Tensor> {
        mm(&mm(w, &u.transpose()?, 0)?, &v.transpose()?, 1)
    };
    let mut core = project(&u, &v)?;
    let mut history = vec![core_error(w_norm2, &core)];
    // Full ranks are already exact; nothing to refine.
    let full = r_out == s[0] && r_in == s[1];
    for _ in 0..if full { 0 } else { opts.max_iters } {
        let y = mm(w, &v.transpose()?, 1)?;
        let u_next = leading_left_singular_vectors(&unfold(&y, 0)?, r_out)?;
        let z = mm(w, &u_next.transpose()?, 0)?;
        let v_next = leading_left_singular_vectors(&unfold(&z, 1)?, r_in)?;
        let core_next = mm(&z, &v_next.transpose()?, 1)?;
        let err = core_error(w_norm2, &core_next);
        let prev = *history.last().expect("history starts non-empty");
        u = u_next;
        v = v_next;
        core = core_next;
        history.push(err);
        if prev - err < opts.tol {
            break;
        }
    }
    Ok(Tucker2Factors {
        u,
        v,
        core,
        error_history: history,
    })
}

/// Tucker-2 decomposition of a `[C_out, C_in, kH, kW]` kernel (`kH, kW ≥ 2`)
/// emitted as a 1×1 → kH×kW → 1×1 conv chain.
pub fn decompose_spatial_tucker2(
    w: &Tensor,
    r_in: usize,
    r_out: usize,
    opts: HooiOptions,
) -> Result<DecomposedLayer> {
    let s = w.shape();
    if s.len() != 4 || s[2] < 2 || s[3] < 2 {
        bail!(Argument, "spatial Tucker-2 needs a kernel of at least 2x2, got {s:?}");
    }
    let f = hooi_tucker2(w, r_in, r_out, opts)?;
    let (c_out, c_in) = (s[0], s[1]);
    let first = f.v.transpose()?.reshape(vec![r_in, c_in, 1, 1])?;
    let last = f.u.reshape(vec![c_out, r_out, 1, 1])?;
    DecomposedLayer::finish(
        LayerFactors::Tucker2 {
            first,
            core: f.core,
            last,
        },
        w,
    )
}

/// Rebuilds the full weight tensor `W̃` from its factors.
pub fn reconstruct(factors: &LayerFactors) -> Result<Tensor> {
    match factors {
        LayerFactors::Unchanged { w } => Ok(w.clone()),
        LayerFactors::DensePair { a, b, .. } => crate::linalg::gemm(a, b),
        LayerFactors::PointwisePair { first, second } => {
            let (r, c_in) = (first.shape()[0], first.shape()[1]);
            let c_out = second.shape()[0];
            let a = second.clone().reshape(vec![c_out, r])?;
            let b = first.clone().reshape(vec![r, c_in])?;
            crate::linalg::gemm(&a, &b)?.reshape(vec![c_out, c_in, 1, 1])
        }
        LayerFactors::Tucker2 { first, core, last } => {
            let (r_in, c_in) = (first.shape()[0], first.shape()[1]);
            let (c_out, r_out) = (last.shape()[0], last.shape()[1]);
            let u = last.clone().reshape(vec![c_out, r_out])?;
            let vt = first.clone().reshape(vec![r_in, c_in])?;
            mode_mult(&mode_mult(core, &u, 0)?, &vt.transpose()?, 1)
        }
    }
}

/// Applies a planned action to one layer's weights.
pub fn decompose_layer(
    layer: &LayerSpec,
    w: &Tensor,
    bias: Option<&Tensor>,
    action: &LayerAction,
    hooi: HooiOptions,
) -> Result<DecomposedLayer> {
    let expected = layer.weight_shape().ok_or_else(|| {
        Error::Argument(format!("layer {:?} has no weights to decompose", layer.name))
    })?;
    if w.shape() != expected.as_slice() {
        bail!(
            Mismatch,
            "layer {:?}: weight shape {:?}, expected {expected:?}",
            layer.name,
            w.shape()
        );
    }
    let with_name = |e: Error| match e {
        Error::Argument(m) => Error::Argument(format!("layer {:?}: {m}", layer.name)),
        Error::Data(m) => Error::Data(format!("layer {:?}: {m}", layer.name)),
        other => other,
    };
    match (&layer.kind, action) {
        (_, LayerAction::Unchanged) => Ok(DecomposedLayer::unchanged(w.clone())),
        (LayerKind::Dense(_), LayerAction::DensePair { rank, .. }) => {
            decompose_dense(w, bias, *rank).map_err(with_name)
        }
        (LayerKind::Conv(_), LayerAction::PointwisePair { rank, .. }) => {
            decompose_pointwise(w, *rank).map_err(with_name)
        }
        (LayerKind::Conv(_), LayerAction::Tucker2 { r_in, r_out, .. }) => {
            decompose_spatial_tucker2(w, *r_in, *r_out, hooi).map_err(with_name)
        }
        (_, a) => bail!(Mismatch, "action {a:?} does not apply to layer {:?}", layer.name),
    }
}

//! Empirical variational Bayesian matrix factorization (EVBMF) rank
//! estimation via the global analytic solution.
//!
//! The noise variance σ² is found by minimizing the EVB free energy over a
//! bounded interval; singular values above the resulting threshold count
//! towards the rank.

use crate::error::{bail, Result};
use crate::linalg::singular_values;
use crate::tensor::Tensor;

/// τ̄ = 2.5129·√α.
const TAU_BAR_COEF: f64 = 2.5129;
const GOLDEN_MAX_ITER: usize = 200;
const GOLDEN_TOL: f64 = 1e-12;
const BRACKET_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbmfEstimate {
    pub rank: usize,
    pub sigma2: f64,
    /// Search interval for σ².
    pub lower: f64,
    pub upper: f64,
    /// Singular values strictly above this count towards the rank.
    pub threshold: f64,
}

/// Shape constants of an `L×M` problem (`L ≤ M`).
#[derive(Debug, Clone, Copy)]
struct Shape {
    l: f64,
    m: f64,
    alpha: f64,
    x_bar: f64,
}

impl Shape {
    fn new(l: usize, m: usize) -> Self {
        let alpha = l as f64 / m as f64;
        let tau_bar = TAU_BAR_COEF * alpha.sqrt();
        Self {
            l: l as f64,
            m: m as f64,
            alpha,
            x_bar: (1.0 + tau_bar) * (1.0 + alpha / tau_bar),
        }
    }
}

fn tau(x: f64, alpha: f64) -> f64 {
    let d = x - (1.0 + alpha);
    0.5 * (d + (d * d - 4.0 * alpha).max(0.0).sqrt())
}

/// EVB free energy up to an additive constant independent of σ².
///
/// The `−ln s_h²` terms are dropped, which keeps the objective finite when
/// some singular values are exactly zero.
fn free_energy(sigma2: f64, s: &[f64], shape: &Shape) -> f64 {
    let mut f = s.len() as f64 * sigma2.ln();
    for &sv in s {
        let x = sv * sv / (shape.m * sigma2);
        if x > shape.x_bar {
            let t = tau(x, shape.alpha);
            f += x - t + (t + 1.0).ln() + shape.alpha * (t / shape.alpha + 1.0).ln();
        } else {
            f += x;
        }
    }
    f
}

/// σ² search interval `[lower, upper]` for singular values `s` (descending, length L).
fn sigma2_bounds(s: &[f64], shape: &Shape) -> (f64, f64) {
    let total: f64 = s.iter().map(|v| v * v).sum();
    let upper = total / (shape.l * shape.m);
    // zero-based index of s_{h+1} with h = ceil(L / (1 + α)) − 1
    let idx = ((shape.l / (1.0 + shape.alpha)).ceil() as usize)
        .saturating_sub(1)
        .min(s.len() - 1);
    let tail = &s[idx..];
    let tail_mean = tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
    let lower = (s[idx] * s[idx] / (shape.m * shape.x_bar)).max(tail_mean / shape.m);
    (lower, upper)
}

/// Golden-section search of `f` over `[a, b]`, preceded by a coarse scan that
/// brackets the lowest sampled point.
fn minimize_bracketed(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let step = (b - a) / (BRACKET_POINTS - 1) as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..BRACKET_POINTS {
        let v = f(a + step * i as f64);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut lo = a + step * best.saturating_sub(1) as f64;
    let mut hi = (a + step * (best + 1) as f64).min(b);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_MAX_ITER {
        if hi - lo <= GOLDEN_TOL * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    [(c, fc), (d, fd), (mid, f(mid))]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(x, _)| x)
        .unwrap_or(mid)
}

/// EVBMF estimate from the singular values of an `L×M` matrix (`L ≤ M`),
/// sorted non-increasing.
pub fn estimate_from_singular_values(s: &[f64], l: usize, m: usize) -> Result<VbmfEstimate> {
    if l == 0 || l > m {
        bail!(Argument, "vbmf needs 1 <= L <= M, got L={l} M={m}");
    }
    if s.len() != l {
        bail!(Argument, "expected {l} singular values, got {}", s.len());
    }
    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
        bail!(Argument, "singular values must be finite and non-negative");
    }
    let shape = Shape::new(l, m);
    let (lower, upper) = sigma2_bounds(s, &shape);
    if upper <= 0.0 {
        return Ok(VbmfEstimate {
            rank: 0,
            sigma2: 0.0,
            lower,
            upper,
            threshold: 0.0,
        });
    }
    let sigma2 = if lower > 0.0 && lower < upper {
        // log-space search; σ² spans orders of magnitude
        let t = minimize_bracketed(|t| free_energy(t.exp(), s, &shape), lower.ln(), upper.ln());
        t.exp().clamp(lower, upper)
    } else {
        upper
    };
    let threshold = (shape.m * sigma2 * shape.x_bar).sqrt();
    let rank = s.iter().filter(|&&v| v > threshold).count();
    Ok(VbmfEstimate {
        rank,
        sigma2,
        lower,
        upper,
        threshold,
    })
}

/// Full EVBMF estimate for a matrix; wide/tall orientation is handled internally.
pub fn vbmf_estimate(w: &Tensor) -> Result<VbmfEstimate> {
    if !w.is_matrix() {
        bail!(Argument, "vbmf needs a matrix, got shape {:?}", w.shape());
    }
    if !w.all_finite() {
        bail!(Argument, "vbmf input contains non-finite values");
    }
    let (r, c) = (w.shape()[0], w.shape()[1]);
    let s = singular_values(w)?;
    estimate_from_singular_values(&s, r.min(c), r.max(c))
}

/// EVBMF-estimated rank of a matrix (0 for an all-zero matrix).
pub fn vbmf_rank(w: &Tensor) -> Result<usize> {
    Ok(vbmf_estimate(w)?.rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_has_rank_zero() {
        let z = Tensor::zeros(vec![8, 12]).unwrap();
        assert_eq!(vbmf_rank(&z).unwrap(), 0);
    }

    #[test]
    fn tau_solves_its_quadratic() {
        // τ² − (x − 1 − α)τ + α = 0
        for &(x, a) in &[(5.0, 0.5), (10.0, 1.0), (3.9, 0.2)] {
            let t = tau(x, a);
            assert!((t * t - (x - 1.0 - a) * t + a).abs() < 1e-10);
        }
    }

    #[test]
    fn bounds_are_ordered_for_noise() {
        let s: Vec<f64> = (0..16).map(|i| 10.0 - 0.5 * i as f64).collect();
        let shape = Shape::new(16, 40);
        let (lo, hi) = sigma2_bounds(&s, &shape);
        assert!(lo > 0.0 && lo < hi);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(estimate_from_singular_values(&[1.0, 0.5], 3, 2).is_err());
        assert!(estimate_from_singular_values(&[1.0], 2, 4).is_err());
    }

    #[test]
    fn deterministic() {
        let t = Tensor::from_fn(vec![10, 20], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).unwrap();
        assert_eq!(vbmf_estimate(&t).unwrap(), vbmf_estimate(&t).unwrap());
    }
}

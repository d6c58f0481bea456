//! Parameter-reduction rank rules, weakening and rank quantization.

/// Rounds half-up to a non-negative integer.
pub fn round_half_up(x: f64) -> usize {
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        (x + 0.5).floor() as usize
    }
}

/// Rank `r` such that a dense (or 1×1 conv) layer of shape `m×n` factored as
/// `[m×r]·[r×n]` holds `1/c` of the original parameters.
pub fn pr_rank_dense(m: usize, n: usize, c: f64) -> usize {
    let exact = (m * n) as f64 / (c * (m + n) as f64);
    round_half_up(exact).clamp(1, m.min(n))
}

/// Positive root of the Tucker-2 parameter budget with `r_out = ρ·r_in`:
/// `area·ρ·r² + (c_in + ρ·c_out)·r = c_out·c_in·area / c`.
pub fn tucker2_budget_root(c_out: usize, c_in: usize, area: usize, c: f64) -> f64 {
    let rho = c_out as f64 / c_in as f64;
    let a = area as f64 * rho;
    let b = c_in as f64 + rho * c_out as f64;
    let rhs = (c_out * c_in * area) as f64 / c;
    (-b + (b * b + 4.0 * a * rhs).sqrt()) / (2.0 * a)
}

/// `(r_in, r_out)` for a `k×k` conv compressed by `c` with ranks proportional
/// to the channel counts.
pub fn pr_ranks_tucker2(c_out: usize, c_in: usize, k: usize, c: f64) -> (usize, usize) {
    pr_ranks_tucker2_area(c_out, c_in, k * k, c)
}

pub(crate) fn pr_ranks_tucker2_area(c_out: usize, c_in: usize, area: usize, c: f64) -> (usize, usize) {
    let root = tucker2_budget_root(c_out, c_in, area, c);
    let rho = c_out as f64 / c_in as f64;
    (
        round_half_up(root).clamp(1, c_in),
        round_half_up(rho * root).clamp(1, c_out),
    )
}

/// Moves a VBMF rank toward full rank by `w ∈ [0, 1]`.
pub fn apply_weakening(r_vbmf: usize, r_max: usize, w: f64) -> usize {
    let r_vbmf = r_vbmf.min(r_max);
    let w = w.clamp(0.0, 1.0);
    let raw = round_half_up(r_vbmf as f64 + w * (r_max - r_vbmf) as f64);
    raw.clamp(r_vbmf.max(1).min(r_max), r_max)
}

/// Rounds `r` to the nearest multiple of `q` (ties up), then clamps into
/// `[min(q, r_max), r_max]`.
pub fn quantize_rank(r: usize, q: usize, r_max: usize) -> usize {
    let q = q.max(1);
    let nearest = (2 * r + q) / (2 * q) * q;
    nearest.clamp(q.min(r_max), r_max)
}

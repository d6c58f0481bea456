//! Dense linear algebra kernels: GEMM, SVD, truncated SVD and the leading
//! singular subspaces needed by HOSVD/HOOI and VBMF.
//!
//! The full SVD runs on `nalgebra`; symmetric eigen-decompositions and the
//! products inside the Gram shortcuts run on `faer`. This module owns
//! ordering, sign conventions and the Gram-matrix shortcuts.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use nalgebra::DMatrix;

use crate::error::{bail, Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Convergence threshold handed to the bidiagonal QR iteration.
pub const SVD_TOLERANCE: f64 = 1e-12;

const ROW_GROUP: usize = 4;
const COL_BLOCK: usize = 256;
const DEPTH_BLOCK: usize = 128;
const PAR_ROWS: usize = 16;

/// Output factors of [`svd`]. `u` is `m×k`, `vt` is `k×n`, `k = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub vt: Tensor,
}

fn check_matrix(a: &Tensor, what: &str) -> Result<(usize, usize)> {
    if !a.is_matrix() {
        bail!(Argument, "{what} needs a 2-d matrix, got shape {:?}", a.shape());
    }
    Ok((a.shape()[0], a.shape()[1]))
}

/// Dense matrix product with a fixed per-element summation order.
///
/// Every output element is accumulated over the inner dimension in ascending
/// order, so results are bit-identical to a naive triple loop and do not
/// depend on the number of worker threads.
pub fn gemm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    gemm_impl(a, b, true)
}

/// Single-threaded [`gemm`]; produces bit-identical output.
pub fn gemm_sequential(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    gemm_impl(a, b, false)
}

fn gemm_impl(a: &Tensor, b: &Tensor, parallel: bool) -> Result<Tensor> {
    let (m, k) = check_matrix(a, "gemm")?;
    let (k2, n) = check_matrix(b, "gemm")?;
    if k != k2 {
        bail!(
            Argument,
            "gemm shape mismatch: [{m}x{k}] x [{k2}x{n}]"
        );
    }
    let mut c = vec![0.0; m * n];
    gemm_into(a.data(), b.data(), &mut c, m, k, n, parallel);
    Ok(Tensor::from_parts_unchecked(vec![m, n], c))
}

/// `c (m×n) += a (m×k) · b (k×n)` on raw row-major slices.
pub(crate) fn gemm_into(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    parallel: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let chunk_rows = PAR_ROWS.min(m);
    let run = |chunk: usize, c_chunk: &mut [f64]| {
        let row0 = chunk * chunk_rows;
        let rows = c_chunk.len() / n;
        gemm_block(&a[row0 * k..(row0 + rows) * k], b, c_chunk, rows, k, n);
    };
    if parallel && m > chunk_rows {
        par::for_each_chunk_mut(c, chunk_rows * n, run);
    } else {
        c.chunks_mut(chunk_rows * n)
            .enumerate()
            .for_each(|(i, ch)| run(i, ch));
    }
}

fn gemm_block(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for p0 in (0..k).step_by(DEPTH_BLOCK) {
            let p1 = (p0 + DEPTH_BLOCK).min(k);
            let mut i = 0;
            while i + ROW_GROUP <= m {
                let (c0, rest) = c[i * n..].split_at_mut(n);
                let (c1, rest) = rest.split_at_mut(n);
                let (c2, rest) = rest.split_at_mut(n);
                let c3 = &mut rest[..n];
                let (c0, c1, c2, c3) = (
                    &mut c0[j0..j1],
                    &mut c1[j0..j1],
                    &mut c2[j0..j1],
                    &mut c3[j0..j1],
                );
                for p in p0..p1 {
                    let a0 = a[i * k + p];
                    let a1 = a[(i + 1) * k + p];
                    let a2 = a[(i + 2) * k + p];
                    let a3 = a[(i + 3) * k + p];
                    let brow = &b[p * n + j0..p * n + j1];
                    for (j, &bv) in brow.iter().enumerate() {
                        c0[j] += a0 * bv;
                        c1[j] += a1 * bv;
                        c2[j] += a2 * bv;
                        c3[j] += a3 * bv;
                    }
                }
                i += ROW_GROUP;
            }
            for ii in i..m {
                let crow = &mut c[ii * n + j0..ii * n + j1];
                for p in p0..p1 {
                    let av = a[ii * k + p];
                    let brow = &b[p * n + j0..p * n + j1];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
    }
}

fn to_dmatrix(a: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.shape()[0], a.shape()[1], a.data())
}

/// Flips column `j` of `u` (row-major m×k) and row `j` of `vt` (k×n) so the
/// largest-magnitude entry of the column (first on ties) is non-negative.
fn normalize_signs(u: &mut [f64], m: usize, k: usize, vt: &mut [f64], n: usize) {
    for j in 0..k {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..m {
            let v = u[i * k + j];
            if v.abs() > best {
                best = v.abs();
                sign = if v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            for i in 0..m {
                u[i * k + j] = -u[i * k + j];
            }
            for x in &mut vt[j * n..(j + 1) * n] {
                *x = -*x;
            }
        }
    }
}

/// Thin SVD `a = u · diag(s) · vt` with `s` non-increasing.
pub fn svd(a: &Tensor) -> Result<SvdResult> {
    let (m, n) = check_matrix(a, "svd")?;
    if !a.all_finite() {
        bail!(Argument, "svd input contains non-finite values");
    }
    let k = m.min(n);
    // Bidiagonalization is much faster on tall inputs; factor the transpose otherwise.
    let tall = m >= n;
    let mat = if tall {
        to_dmatrix(a)
    } else {
        to_dmatrix(a).transpose()
    };
    let max_iter = 100 * k.max(1);
    let dec = mat
        .try_svd(true, true, SVD_TOLERANCE, max_iter)
        .ok_or_else(|| Error::Numeric(format!("svd of {m}x{n} did not converge")))?;
    let (u_t, vt_t) = match (dec.u, dec.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Internal("svd factors missing".into())),
    };
    let (u_mat, vt_mat) = if tall {
        (u_t, vt_t)
    } else {
        (vt_t.transpose(), u_t.transpose())
    };
    let sv = dec.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]).then(x.cmp(&y)));

    let mut u = vec![0.0; m * k];
    let mut vt = vec![0.0; k * n];
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        s.push(sv[src].max(0.0));
        for i in 0..m {
            u[i * k + dst] = u_mat[(i, src)];
        }
        for j in 0..n {
            vt[dst * n + j] = vt_mat[(src, j)];
        }
    }
    normalize_signs(&mut u, m, k, &mut vt, n);
    Ok(SvdResult {
        u: Tensor::from_parts_unchecked(vec![m, k], u),
        s,
        vt: Tensor::from_parts_unchecked(vec![k, n], vt),
    })
}

fn as_faer(a: &Tensor) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(a.data(), a.shape()[0], a.shape()[1])
}

fn from_faer(m: &Mat<f64>) -> Tensor {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        out.extend((0..c).map(|j| m[(i, j)]));
    }
    Tensor::from_parts_unchecked(vec![r, c], out)
}

/// Single-threaded SIMD matrix product.
///
/// Deterministic for a given input, but the summation order differs from
/// [`gemm`]; used where speed matters more than matching the naive loop.
pub(crate) fn matmul_fast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = check_matrix(a, "matmul")?;
    let (k2, n) = check_matrix(b, "matmul")?;
    if k != k2 {
        bail!(Argument, "matmul shape mismatch: [{m}x{k}] x [{k2}x{n}]");
    }
    let mut c = Mat::<f64>::zeros(m, n);
    matmul(c.as_mut(), Accum::Replace, as_faer(a), as_faer(b), 1.0, Par::Seq);
    Ok(from_faer(&c))
}

/// `a · aᵀ`.
pub fn gram(a: &Tensor) -> Result<Tensor> {
    let (m, _) = check_matrix(a, "gram")?;
    let fa = as_faer(a);
    let mut c = Mat::<f64>::zeros(m, m);
    matmul(c.as_mut(), Accum::Replace, fa, fa.transpose(), 1.0, Par::Seq);
    // exact symmetry
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(from_faer(&c))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues non-increasing.
/// Returns eigenvalues and the eigenvectors as columns of an `n×n` tensor.
pub fn symmetric_eigen(g: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (n, n2) = check_matrix(g, "symmetric_eigen")?;
    if n != n2 {
        bail!(Argument, "symmetric_eigen needs a square matrix, got {n}x{n2}");
    }
    if !g.all_finite() {
        bail!(Argument, "symmetric_eigen input contains non-finite values");
    }
    let eig = as_faer(g)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigen-decomposition of {n}x{n} failed: {e:?}")))?;
    let vals = eig.S().column_vector();
    let vecs_in = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| vals[i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + dst] = vecs_in[(i, src)];
        }
    }
    Ok((values, Tensor::from_parts_unchecked(vec![n, n], vecs)))
}

/// Orthonormal basis (`m×r`) of the dominant `r`-dimensional column space of `a`.
///
/// Computed from the eigenvectors of `a·aᵀ`, which is far cheaper than a full
/// SVD for the wide unfoldings that Tucker decomposition produces.
pub fn leading_left_singular_vectors(a: &Tensor, r: usize) -> Result<Tensor> {
    let (m, _) = check_matrix(a, "leading_left_singular_vectors")?;
    if r == 0 || r > m {
        bail!(Argument, "rank {r} out of range 1..={m}");
    }
    let (_, vecs) = symmetric_eigen(&gram(a)?)?;
    let mut out = vec![0.0; m * r];
    for i in 0..m {
        out[i * r..(i + 1) * r].copy_from_slice(&vecs.data()[i * m..i * m + r]);
    }
    let mut dummy: [f64; 0] = [];
    normalize_signs(&mut out, m, r, &mut dummy, 0);
    Ok(Tensor::from_parts_unchecked(vec![m, r], out))
}

/// Singular values (non-increasing, length `min(m, n)`) from the smaller Gram matrix.
pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    let (m, n) = check_matrix(a, "singular_values")?;
    let small = if m <= n { a.clone() } else { a.transpose()? };
    let (ev, _) = symmetric_eigen(&gram(&small)?)?;
    Ok(ev.into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Best rank-`r` factorization `a ≈ left · right` with the singular values
/// split evenly: `left = U_r·diag(√s_r)` (`m×r`), `right = diag(√s_r)·V_rᵀ` (`r×n`).
pub fn truncated_svd(a: &Tensor, r: usize) -> Result<(Tensor, Tensor)> {
    let (m, n) = check_matrix(a, "truncated_svd")?;
    let k = m.min(n);
    if r == 0 || r > k {
        bail!(Argument, "rank {r} out of range 1..={k}");
    }
    if !a.all_finite() {
        bail!(Argument, "truncated_svd input contains non-finite values");
    }
    if m < n {
        let (l, rt) = truncated_svd_tall(&a.transpose()?, r)?;
        return Ok((rt.transpose()?, l.transpose()?));
    }
    truncated_svd_tall(a, r)
}

/// Tall case (`m ≥ n`): right singular vectors from `aᵀa`, then `u_i·s_i = a·v_i`.
fn truncated_svd_tall(a: &Tensor, r: usize) -> Result<(Tensor, Tensor)> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let (_, v) = symmetric_eigen(&gram(&a.transpose()?)?)?;
    // v_r: n×r, columns are the leading right singular vectors
    let mut vr = vec![0.0; n * r];
    for i in 0..n {
        vr[i * r..(i + 1) * r].copy_from_slice(&v.data()[i * n..i * n + r]);
    }
    let vr = Tensor::from_parts_unchecked(vec![n, r], vr);
    let av = matmul_fast(a, &vr)?; // m×r, column i = s_i·u_i
    let mut left = av.into_data();
    let mut right = vr.transpose()?.into_data(); // r×n
    for j in 0..r {
        let s = (0..m).map(|i| left[i * r + j].powi(2)).sum::<f64>().sqrt();
        let root = s.sqrt();
        let inv = if root > 0.0 { 1.0 / root } else { 0.0 };
        for i in 0..m {
            left[i * r + j] *= inv;
        }
        for x in &mut right[j * n..(j + 1) * n] {
            *x *= root;
        }
    }
    normalize_signs(&mut left, m, r, &mut right, n);
    Ok((
        Tensor::from_parts_unchecked(vec![m, r], left),
        Tensor::from_parts_unchecked(vec![r, n], right),
    ))
}

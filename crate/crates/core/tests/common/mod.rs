//! Oracles shared by the integration tests. Nothing here calls into the
//! library's numerics.
#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major `rows×cols` standard-normal matrix.
pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

pub fn frob2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Cyclic Jacobi eigenvalues of a symmetric `n×n` matrix, non-increasing.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 * frob2(&a).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values of a row-major `m×n` matrix via Jacobi on the smaller Gram matrix.
pub fn singular_values(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let (g, k) = if m <= n {
        (matmul(a, &transpose(a, m, n), m, n, m), m)
    } else {
        (matmul(&transpose(a, m, n), a, n, m, n), n)
    };
    jacobi_eigenvalues(&g, k)
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect()
}

/// `k` orthonormal columns in R^n (row-major `n×k`), by Gram–Schmidt.
pub fn orthonormal_columns(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = frob2(&v).sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; n * k];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            out[i * k + j] = c[i];
        }
    }
    out
}

/// `U·diag(s)·Vᵀ + σ·N` with random orthonormal `U`, `V`.
pub fn planted(m: usize, n: usize, s: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let k = s.len();
    let u = orthonormal_columns(m, k, &mut r);
    let v = orthonormal_columns(n, k, &mut r);
    let mut us = u.clone();
    for i in 0..m {
        for j in 0..k {
            us[i * k + j] *= s[j];
        }
    }
    let mut w = matmul(&us, &transpose(&v, n, k), m, k, n);
    for x in &mut w {
        let e: f64 = r.sample(StandardNormal);
        *x += sigma * e;
    }
    w
}

/// Direct 7-loop convolution of `x: [N, C, H, W]` with `w: [O, C, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [o, c2, kh, kw] = ws;
    assert_eq!(c, c2);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (yy * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w[((oc * c + ic) * kh + i) * kw + j]
                                    * x[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    y[((b * o + oc) * oh + yy) * ow + xx] = acc;
                }
            }
        }
    }
    (y, [n, o, oh, ow])
}

//! Dense row-major tensors and the reshaping primitives used by Tucker
//! decomposition (mode-n unfolding, folding and mode-n products).

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::linalg::gemm;

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        bail!(Argument, "tensor shape must have at least one dimension");
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            bail!(Argument, "tensor dimensions must be positive, got {shape:?}");
        }
        n = match n.checked_mul(d) {
            Some(v) => v,
            None => bail!(Argument, "tensor shape {shape:?} overflows"),
        };
    }
    Ok(n)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if n != data.len() {
            bail!(
                Argument,
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `‖self − other‖_F / ‖other‖_F`; zero reference gives the absolute norm.
    pub fn relative_error(&self, reference: &Tensor) -> Result<f64> {
        if self.shape != reference.shape {
            bail!(
                Argument,
                "shape mismatch {:?} vs {:?}",
                self.shape,
                reference.shape
            );
        }
        let diff: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = reference.frobenius_norm();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if !self.is_matrix() {
            bail!(Argument, "transpose needs a matrix, got {:?}", self.shape);
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts_unchecked(vec![n, m], out))
    }

    pub fn scale(mut self, k: f64) -> Tensor {
        self.data.iter_mut().for_each(|v| *v *= k);
        self
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Mode-`mode` matricization: rows index `shape[mode]`, columns run over the
/// remaining modes in ascending original order (row-major).
pub fn unfold(t: &Tensor, mode: usize) -> Result<Tensor> {
    let nd = t.ndim();
    if mode >= nd {
        bail!(Argument, "mode {mode} out of range for {nd}-d tensor");
    }
    let shape = t.shape();
    let rows = shape[mode];
    let cols = t.len() / rows;
    if mode == 0 {
        return Ok(Tensor::from_parts_unchecked(
            vec![rows, cols],
            t.data.clone(),
        ));
    }
    // outer = modes before `mode`, inner = modes after it
    let outer: usize = shape[..mode].iter().product();
    let inner: usize = shape[mode + 1..].iter().product();
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for r in 0..rows {
            let src = &t.data[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            let dst = r * cols + o * inner;
            out[dst..dst + inner].copy_from_slice(src);
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![rows, cols], out))
}

/// Inverse of [`unfold`].
pub fn fold(m: &Tensor, mode: usize, shape: &[usize]) -> Result<Tensor> {
    let numel = checked_numel(shape)?;
    if mode >= shape.len() {
        bail!(Argument, "mode {mode} out of range for shape {shape:?}");
    }
    let rows = shape[mode];
    if !m.is_matrix() || m.shape[0] != rows || m.len() != numel {
        bail!(
            Argument,
            "cannot fold {:?} into {shape:?} along mode {mode}",
            m.shape
        );
    }
    let cols = numel / rows;
    let outer: usize = shape[..mode].iter().product();
    let inner: usize = shape[mode + 1..].iter().product();
    let mut out = vec![0.0; numel];
    for o in 0..outer {
        for r in 0..rows {
            let src = r * cols + o * inner;
            let dst = (o * rows + r) * inner;
            out[dst..dst + inner].copy_from_slice(&m.data[src..src + inner]);
        }
    }
    Ok(Tensor::from_parts_unchecked(shape.to_vec(), out))
}

/// Mode-n product `t ×ₙ m`: replaces dimension `mode` of `t` by `m.rows`.
pub fn mode_mult(t: &Tensor, m: &Tensor, mode: usize) -> Result<Tensor> {
    mode_mult_with(t, m, mode, gemm)
}

pub(crate) fn mode_mult_with(
    t: &Tensor,
    m: &Tensor,
    mode: usize,
    product: fn(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    if !m.is_matrix() {
        bail!(Argument, "mode product needs a matrix, got {:?}", m.shape);
    }
    if mode >= t.ndim() {
        bail!(Argument, "mode {mode} out of range for {}-d tensor", t.ndim());
    }
    if m.shape[1] != t.shape[mode] {
        bail!(
            Argument,
            "mode-{mode} product: matrix has {} columns, tensor dim is {}",
            m.shape[1],
            t.shape[mode]
        );
    }
    let product = product(m, &unfold(t, mode)?)?;
    let mut shape = t.shape.clone();
    shape[mode] = m.shape[0];
    fold(&product, mode, &shape)
}

/// Element at a multi-index; used by tests and small oracles.
pub fn at(t: &Tensor, index: &[usize]) -> f64 {
    let s = strides(t.shape());
    t.data[index.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(shape: Vec<usize>) -> Tensor {
        Tensor::from_fn(shape, |i| i as f64).unwrap()
    }

    #[test]
    fn construction_validates_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn unfold_shapes() {
        let t = seq(vec![2, 3, 4]);
        assert_eq!(unfold(&t, 0).unwrap().shape(), &[2, 12]);
        assert_eq!(unfold(&t, 1).unwrap().shape(), &[3, 8]);
        assert_eq!(unfold(&t, 2).unwrap().shape(), &[4, 6]);
        assert!(unfold(&t, 3).is_err());
    }

    #[test]
    fn unfold_column_order() {
        let t = seq(vec![2, 3, 4]);
        let u = unfold(&t, 1).unwrap();
        // column index = i0 * 4 + i2
        for i0 in 0..2 {
            for i1 in 0..3 {
                for i2 in 0..4 {
                    assert_eq!(u.get2(i1, i0 * 4 + i2), at(&t, &[i0, i1, i2]));
                }
            }
        }
    }

    #[test]
    fn mode_mult_identity_is_noop() {
        let t = seq(vec![3, 4, 2]);
        for mode in 0..3 {
            let id = Tensor::identity(t.shape()[mode]).unwrap();
            assert_eq!(mode_mult(&t, &id, mode).unwrap(), t);
        }
    }

    #[test]
    fn mode_mult_matrix_special_case() {
        let t = seq(vec![2, 3]);
        let m = Tensor::from_fn(vec![5, 2], |i| (i as f64) - 3.0).unwrap();
        let r = mode_mult(&t, &m, 0).unwrap();
        assert_eq!(r.shape(), &[5, 3]);
        assert_eq!(r, gemm(&m, &t).unwrap());
    }

    #[test]
    fn mode_mult_dimension_mismatch() {
        let t = seq(vec![2, 3]);
        let m = Tensor::zeros(vec![4, 4]).unwrap();
        assert!(mode_mult(&t, &m, 0).is_err());
    }

    proptest! {
        #[test]
        fn fold_inverts_unfold(dims in prop::collection::vec(1usize..5, 1..5), seed in 0u64..1000) {
            let t = Tensor::from_fn(dims.clone(), |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 7.0).unwrap();
            for mode in 0..dims.len() {
                let back = fold(&unfold(&t, mode).unwrap(), mode, &dims).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }
    }
}

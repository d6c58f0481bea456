//! Forward passes: im2col + GEMM convolution, dense layers, and decomposed
//! layer chains.

use crate::arch::{ConvSpec, LayerKind, LayerSpec};
use crate::decompose::LayerFactors;
use crate::error::{bail, Result};
use crate::linalg::{gemm_into, gemm_sequential, gemm};
use crate::par;
use crate::tensor::Tensor;

fn check_conv(spec: &ConvSpec, w: &Tensor, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    if w.shape() != spec.weight_shape().as_slice() {
        bail!(
            Argument,
            "conv weight shape {:?} does not match spec {:?}",
            w.shape(),
            spec.weight_shape()
        );
    }
    let s = x.shape();
    if s.len() != 4 || s[1] != spec.c_in {
        bail!(
            Argument,
            "conv input must be [N, {}, H, W], got {s:?}",
            spec.c_in
        );
    }
    let (oh, ow) = spec.output_hw(s[2], s[3])?;
    Ok((s[0], s[2], s[3], oh, ow))
}

/// Unrolls one image `[C, H, W]` into `[C·kH·kW, oh·ow]` columns.
fn im2col(spec: &ConvSpec, img: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (kh, kw, st, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let cols = oh * ow;
    let mut out = vec![0.0; spec.c_in * kh * kw * cols];
    for c in 0..spec.c_in {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut out[((c * kh + i) * kw + j) * cols..][..cols];
                for y in 0..oh {
                    let iy = (y * st + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[y * ow..(y + 1) * ow];
                    for (xo, d) in dst.iter_mut().enumerate() {
                        let ix = (xo * st + j) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_impl(spec: &ConvSpec, w: &Tensor, x: &Tensor, parallel: bool) -> Result<Tensor> {
    let (n, h, wd, oh, ow) = check_conv(spec, w, x)?;
    let k = spec.c_in * spec.kernel_area();
    let cols = oh * ow;
    let in_sz = spec.c_in * h * wd;
    let out_sz = spec.c_out * cols;
    let direct = spec.is_pointwise() && spec.stride == 1 && spec.padding == 0;
    let one = |b: usize, dst: &mut [f64]| {
        let img = &x.data()[b * in_sz..(b + 1) * in_sz];
        if direct {
            gemm_into(w.data(), img, dst, spec.c_out, k, cols, parallel);
        } else {
            let colbuf = im2col(spec, img, h, wd, oh, ow);
            gemm_into(w.data(), &colbuf, dst, spec.c_out, k, cols, parallel);
        }
    };
    let mut out = vec![0.0; n * out_sz];
    if parallel && n > 1 {
        par::for_each_chunk_mut(&mut out, out_sz, one);
    } else {
        out.chunks_mut(out_sz).enumerate().for_each(|(b, d)| one(b, d));
    }
    Tensor::new(vec![n, spec.c_out, oh, ow], out)
}

/// 2-d convolution of `x: [N, C_in, H, W]` (no bias).
pub fn conv_forward(spec: &ConvSpec, w: &Tensor, x: &Tensor) -> Result<Tensor> {
    conv_impl(spec, w, x, true)
}

/// Single-threaded [`conv_forward`]; bit-identical output.
pub fn conv_forward_sequential(spec: &ConvSpec, w: &Tensor, x: &Tensor) -> Result<Tensor> {
    conv_impl(spec, w, x, false)
}

/// `y = x·wᵀ + bias` for `x: [N, in]`, `w: [out, in]`.
pub fn dense_forward(w: &Tensor, bias: Option<&Tensor>, x: &Tensor, parallel: bool) -> Result<Tensor> {
    if !w.is_matrix() || !x.is_matrix() || x.shape()[1] != w.shape()[1] {
        bail!(
            Argument,
            "dense input {:?} does not fit weight {:?}",
            x.shape(),
            w.shape()
        );
    }
    let wt = w.transpose()?;
    let mut y = if parallel { gemm(x, &wt)? } else { gemm_sequential(x, &wt)? };
    if let Some(b) = bias {
        let out = w.shape()[0];
        if b.len() != out {
            bail!(Argument, "bias has {} entries, layer has {out} outputs", b.len());
        }
        for row in y.data_mut().chunks_mut(out) {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    Ok(y)
}

/// Forward pass of a layer, decomposed or not.
///
/// Decomposed chains put the original stride and padding on the spatial core
/// (Tucker-2) or on the second 1×1 conv; every other stage is stride 1, pad 0.
pub fn forward_layer(
    layer: &LayerSpec,
    factors: &LayerFactors,
    bias: Option<&Tensor>,
    x: &Tensor,
    parallel: bool,
) -> Result<Tensor> {
    let conv = |spec: &ConvSpec, w: &Tensor, x: &Tensor| conv_impl(spec, w, x, parallel);
    match (&layer.kind, factors) {
        (LayerKind::Dense(_), LayerFactors::Unchanged { w }) => dense_forward(w, bias, x, parallel),
        (LayerKind::Dense(_), LayerFactors::DensePair { a, b, bias: fb }) => {
            let h = dense_forward(b, None, x, parallel)?;
            dense_forward(a, fb.as_ref().or(bias), &h, parallel)
        }
        (LayerKind::Conv(c), LayerFactors::Unchanged { w }) => conv(c, w, x),
        (LayerKind::Conv(c), LayerFactors::PointwisePair { first, second }) => {
            let r = first.shape()[0];
            let s1 = ConvSpec::pointwise(c.c_in, r, 1, 0);
            let s2 = ConvSpec::pointwise(r, c.c_out, c.stride, c.padding);
            conv(&s2, second, &conv(&s1, first, x)?)
        }
        (LayerKind::Conv(c), LayerFactors::Tucker2 { first, core, last }) => {
            let (r_out, r_in) = (core.shape()[0], core.shape()[1]);
            let s1 = ConvSpec::pointwise(c.c_in, r_in, 1, 0);
            let s2 = ConvSpec {
                c_in: r_in,
                c_out: r_out,
                ..*c
            };
            let s3 = ConvSpec::pointwise(r_out, c.c_out, 1, 0);
            conv(&s3, last, &conv(&s2, core, &conv(&s1, first, x)?)?)
        }
        _ => bail!(
            Mismatch,
            "factors do not match the kind of layer {:?}",
            layer.name
        ),
    }
}

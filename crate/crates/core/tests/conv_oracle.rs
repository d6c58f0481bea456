mod common;

use common::*;
use lrd_core::arch::ConvSpec;
use lrd_core::conv::{conv_forward, conv_forward_sequential};
use lrd_core::Tensor;
use rand::Rng;

#[test]
fn fifty_random_convolutions_match_direct_loops() {
    let mut r = rng(4242);
    for case in 0..50 {
        let k = [1, 2, 3, 5, 7][r.random_range(0..5)];
        let stride = r.random_range(1..=3);
        let padding = r.random_range(0..=k / 2 + 1);
        let c_in = r.random_range(1..=9);
        let c_out = r.random_range(1..=9);
        let n = r.random_range(1..=3);
        let h = r.random_range(k.max(1)..=k + 12);
        let w = r.random_range(k.max(1)..=k + 12);
        let spec = ConvSpec { c_in, c_out, kernel_h: k, kernel_w: k, stride, padding };
        let wt = normal(c_out, c_in * k * k, &mut r);
        let x = normal(n, c_in * h * w, &mut r);
        let (want, shape) = naive_conv(&x, [n, c_in, h, w], &wt, [c_out, c_in, k, k], stride, padding);

        let wt = Tensor::new(spec.weight_shape(), wt).unwrap();
        let x = Tensor::new(vec![n, c_in, h, w], x).unwrap();
        let got = conv_forward(&spec, &wt, &x).unwrap();
        assert_eq!(got.shape(), shape, "case {case}");
        let scale = want.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let diff = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12 * scale * (c_in * k * k) as f64, "case {case}: {diff}");
        assert_eq!(got, conv_forward_sequential(&spec, &wt, &x).unwrap(), "case {case}");
    }
}

#[test]
fn kernel_larger_than_padded_input_is_rejected() {
    let spec = ConvSpec { c_in: 1, c_out: 1, kernel_h: 5, kernel_w: 5, stride: 1, padding: 0 };
    let w = Tensor::zeros(spec.weight_shape()).unwrap();
    let x = Tensor::zeros(vec![1, 1, 3, 3]).unwrap();
    assert!(conv_forward(&spec, &w, &x).is_err());
}

mod common;

use std::collections::BTreeSet;

use common::*;
use lrd_core::arch::LayerKind;
use lrd_core::compress::{compress, verify, CompressOptions, VerifyOptions};
use lrd_core::conv::forward_layer;
use lrd_core::decompose::{decompose_layer, hooi_tucker2, reconstruct};
use lrd_core::init::{random_checkpoint, random_normal};
use lrd_core::rank::{full_rank_action, LayerAction};
use lrd_core::{build_resnet, plan_ranks, CompressionConfig, CompressionMode, HooiOptions, LayerFactors, Tensor};

#[test]
fn hooi_error_never_increases() {
    for seed in 0..10u64 {
        let w = Tensor::new(vec![16, 16, 3, 3], normal(16, 144, &mut rng(seed))).unwrap();
        let (r_in, r_out) = (4 + seed as usize % 5, 3 + seed as usize % 7);
        let f = hooi_tucker2(&w, r_in, r_out, HooiOptions { max_iters: 60, tol: 0.0 }).unwrap();
        assert!(f.error_history.len() > 2);
        for pair in f.error_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "seed {seed}: {:?}", f.error_history);
        }
    }
}

#[test]
fn hooi_core_error_matches_reconstruction() {
    let w = Tensor::new(vec![12, 10, 3, 3], normal(12, 90, &mut rng(5))).unwrap();
    let f = hooi_tucker2(&w, 4, 5, HooiOptions::default()).unwrap();
    let first = f.v.transpose().unwrap().reshape(vec![4, 10, 1, 1]).unwrap();
    let last = f.u.clone().reshape(vec![12, 5, 1, 1]).unwrap();
    let back = reconstruct(&LayerFactors::Tucker2 { first, core: f.core, last }).unwrap();
    let direct = back.relative_error(&w).unwrap();
    assert!((direct - f.error_history.last().unwrap()).abs() < 1e-9);
}

#[test]
fn full_rank_every_resnet18_shape() {
    let arch = build_resnet(18, 32).unwrap();
    let ckpt = random_checkpoint(&arch, 9);
    let mut seen = BTreeSet::new();
    for layer in arch.compressible() {
        let key = format!("{:?}", layer.kind);
        if !seen.insert(key) {
            continue;
        }
        let w = &ckpt[&layer.weight_key()];
        let bias = ckpt.get(&layer.bias_key());
        let action = full_rank_action(layer).unwrap();
        assert!(action.is_decomposed());
        let d = decompose_layer(layer, w, bias, &action, HooiOptions::default()).unwrap();
        assert!(d.recon_rel_error <= 1e-6, "{}: {}", layer.name, d.recon_rel_error);
        let shape = match &layer.kind {
            LayerKind::Dense(dn) => vec![2, dn.in_features],
            LayerKind::Conv(c) => vec![1, c.c_in, layer.in_h, layer.in_w],
            _ => unreachable!(),
        };
        let x = random_normal(shape, 3).unwrap();
        let y0 = forward_layer(layer, &LayerFactors::Unchanged { w: w.clone() }, bias, &x, true).unwrap();
        let y1 = forward_layer(layer, &d.factors, bias, &x, true).unwrap();
        assert!(y1.relative_error(&y0).unwrap() <= 1e-5, "{}", layer.name);
    }
    assert!(seen.len() >= 8);
}

#[test]
fn unchanged_action_is_identity() {
    let arch = build_resnet(18, 32).unwrap();
    let layer = arch.layer("fc").unwrap();
    let w = Tensor::new(vec![1000, 512], normal(1000, 512, &mut rng(1))).unwrap();
    let d = decompose_layer(layer, &w, None, &LayerAction::Unchanged, HooiOptions::default()).unwrap();
    assert_eq!(d.recon_rel_error, 0.0);
    assert_eq!(reconstruct(&d.factors).unwrap(), w);
}

#[test]
fn compressed_model_round_trips_through_verify() {
    let arch = build_resnet(18, 32).unwrap();
    let ckpt = random_checkpoint(&arch, 2);
    let cfg = CompressionConfig {
        mode: CompressionMode::Mode1,
        ..Default::default()
    };
    let plan = plan_ranks(&arch, &cfg, None).unwrap();
    let opts = CompressOptions {
        hooi: HooiOptions { max_iters: 3, tol: 1e-6 },
        ..Default::default()
    };
    let out = compress(&arch, &ckpt, &plan, &opts).unwrap();
    let rep = verify(&arch, &ckpt, &out.arch, &out.checkpoint, &VerifyOptions::default()).unwrap();
    for (l, c) in out.summary.layers.iter().zip(&rep.layers) {
        assert_eq!(l.name, c.name);
        // stored factors are f32, so the reported error is only close
        assert!((l.recon_rel_error - c.recon_rel_error).abs() <= 1e-5, "{}", l.name);
    }
}

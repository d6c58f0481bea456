//! Seeded random weights for exercising the pipeline without a trained model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::arch::{ArchDescriptor, LayerKind};
use crate::checkpoint::TensorMap;
use crate::tensor::Tensor;

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Kaiming-normal conv weights, uniform `±1/√in` dense weights and biases,
/// BatchNorm `gamma = 1`, `beta = 0`. Values are pre-rounded to f32 so a
/// checkpoint round trip is lossless.
pub fn random_checkpoint(arch: &ArchDescriptor, seed: u64) -> TensorMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TensorMap::new();
    for l in &arch.layers {
        match &l.kind {
            LayerKind::Conv(c) => {
                let fan_in = (c.c_in * c.kernel_area()) as f64;
                let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let w = Tensor::from_fn(c.weight_shape(), |_| f32_round(rng.sample(dist)))
                    .expect("conv shapes are validated");
                out.insert(l.weight_key(), w);
            }
            LayerKind::Dense(d) => {
                let bound = 1.0 / (d.in_features as f64).sqrt();
                let w = Tensor::from_fn(d.weight_shape(), |_| {
                    f32_round(rng.random_range(-bound..bound))
                })
                .expect("dense shapes are validated");
                out.insert(l.weight_key(), w);
                if d.has_bias {
                    let b = Tensor::from_fn(vec![d.out_features], |_| {
                        f32_round(rng.random_range(-bound..bound))
                    })
                    .expect("positive width");
                    out.insert(l.bias_key(), b);
                }
            }
            LayerKind::BatchNorm { channels } => {
                let ones = Tensor::from_fn(vec![*channels], |_| 1.0).expect("positive width");
                let zeros = Tensor::zeros(vec![*channels]).expect("positive width");
                out.insert(format!("{}.gamma", l.name), ones);
                out.insert(format!("{}.beta", l.name), zeros);
            }
            LayerKind::Pool { .. } => {}
        }
    }
    out
}

/// Standard-normal tensor from a seed.
pub fn random_normal(shape: Vec<usize>, seed: u64) -> crate::error::Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

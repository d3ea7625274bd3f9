#![allow(dead_code)]

pub mod fixture;
pub mod oracle;
pub mod planted;

use std::collections::BTreeMap;

use rand::Rng;
use ssa_core::pipeline::{ClassifierWeights, Stage};
use ssa_core::tensor::Tensor;

pub fn random_tensor<R: Rng>(rng: &mut R, dims: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let n = dims.iter().product();
    Tensor::new(
        dims.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Random features for `stages` (stage 5 always included) plus weights.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    stages: &[Stage],
    classes: usize,
    h: usize,
    w: usize,
    max_channels: usize,
) -> (BTreeMap<Stage, Tensor<f32>>, ClassifierWeights<f32>) {
    let mut feats = BTreeMap::new();
    for &s in stages.iter().chain([Stage::S5].iter()) {
        let c = rng.gen_range(1..=max_channels);
        feats
            .entry(s)
            .or_insert_with(|| random_tensor(rng, &[c, h, w], -1.0, 2.0));
    }
    let k = feats[&Stage::S5].dims()[0];
    let weights = ClassifierWeights::new(random_tensor(rng, &[classes, k], -1.0, 1.0)).unwrap();
    (feats, weights)
}

/// `max|got - want| / max|want|`.
pub fn max_rel_err(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (g, w)| m.max((*g as f64 - w).abs()));
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

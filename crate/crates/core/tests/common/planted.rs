//! Synthetic planted-object localization benchmark.
//!
//! Every object pixel shares one feature direction and every background
//! pixel another, with i.i.d. Gaussian noise on top. On stage 5 a small
//! discriminative patch inside the object also carries a third direction,
//! and the classifier only weights that one, so the seed CAM fires on the
//! patch rather than the whole object.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use ssa_core::evaluation::BoundingBox;
use ssa_core::pipeline::{ClassifierWeights, Stage};
use ssa_core::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct PlantedParams {
    pub size: usize,
    pub channels: usize,
    pub sigma: f64,
    pub min_obj: usize,
    pub max_obj: usize,
    pub patch: usize,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self {
            size: 12,
            channels: 16,
            sigma: 0.3,
            min_obj: 4,
            max_obj: 8,
            patch: 2,
        }
    }
}

pub struct PlantedInstance {
    pub features: BTreeMap<Stage, Tensor<f32>>,
    pub weights: ClassifierWeights<f32>,
    pub gt_box: BoundingBox,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Remove the component of `v` along each (unit) vector in `basis`, renormalize.
fn orthogonalize(mut v: Vec<f64>, basis: &[&[f64]]) -> Vec<f64> {
    for b in basis {
        let d: f64 = v.iter().zip(*b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(*b) {
            *x -= d * y;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn planted_instance<R: Rng>(rng: &mut R, p: &PlantedParams) -> PlantedInstance {
    let s = p.size;
    let oh = rng.gen_range(p.min_obj..=p.max_obj);
    let ow = rng.gen_range(p.min_obj..=p.max_obj);
    let y0 = rng.gen_range(0..=s - oh);
    let x0 = rng.gen_range(0..=s - ow);
    let py = rng.gen_range(y0..=y0 + oh - p.patch);
    let px = rng.gen_range(x0..=x0 + ow - p.patch);
    let in_obj = |y: usize, x: usize| y >= y0 && y < y0 + oh && x >= x0 && x < x0 + ow;
    let in_patch = |y: usize, x: usize| y >= py && y < py + p.patch && x >= px && x < px + p.patch;
    let noise = Normal::new(0.0, p.sigma).unwrap();

    let mut features = BTreeMap::new();
    let mut disc_dir = Vec::new();
    for stage in [Stage::S4, Stage::S5] {
        let obj = unit_vector(rng, p.channels);
        let bg = orthogonalize(unit_vector(rng, p.channels), &[&obj]);
        let disc = orthogonalize(unit_vector(rng, p.channels), &[&obj, &bg]);
        let mut data = vec![0.0f32; p.channels * s * s];
        for y in 0..s {
            for x in 0..s {
                for c in 0..p.channels {
                    let mut v = if in_obj(y, x) { obj[c] } else { bg[c] };
                    if stage == Stage::S5 && in_patch(y, x) {
                        v += disc[c];
                    }
                    v += noise.sample(rng);
                    data[c * s * s + y * s + x] = v as f32;
                }
            }
        }
        features.insert(stage, Tensor::new(vec![p.channels, s, s], data).unwrap());
        if stage == Stage::S5 {
            disc_dir = disc;
        }
    }
    let weights = ClassifierWeights::new(
        Tensor::new(
            vec![1, p.channels],
            disc_dir.iter().map(|&v| v as f32).collect(),
        )
        .unwrap(),
    )
    .unwrap();
    PlantedInstance {
        features,
        weights,
        gt_box: BoundingBox::new(x0, y0, x0 + ow, y0 + oh).unwrap(),
    }
}

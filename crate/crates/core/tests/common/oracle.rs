//! Straight-line scalar reference for the whole pipeline, written from the
//! formulas with nested `f64` loops and no library kernels.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use ssa_core::pipeline::{ClassifierWeights, Stage};
use ssa_core::tensor::Tensor;

type Mat = Vec<Vec<f64>>;

/// `[c][p]` with `p = i * W + j`.
fn flatten(f: &Tensor<f32>) -> Mat {
    let d = f.dims();
    let (c, hw) = (d[0], d[1] * d[2]);
    (0..c)
        .map(|ch| (0..hw).map(|p| f.data()[ch * hw + p] as f64).collect())
        .collect()
}

fn normalize_rows(m: &Mat) -> Mat {
    m.iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter()
                .map(|v| if s > 0.0 { v / s } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn affinity(f: &Tensor<f32>, n_sa: usize) -> Mat {
    let x = flatten(f);
    let (c, hw) = (x.len(), x[0].len());
    let mut g = vec![vec![0.0; hw]; c];
    let mut live = vec![false; hw];
    for p in 0..hw {
        let mut n2 = 0.0;
        for ch in 0..c {
            n2 += x[ch][p] * x[ch][p];
        }
        if n2 > 0.0 {
            live[p] = true;
            for ch in 0..c {
                g[ch][p] = x[ch][p] / n2.sqrt();
            }
        }
    }
    let mut s = vec![vec![0.0; hw]; hw];
    for a in 0..hw {
        for b in 0..hw {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += g[ch][a] * g[ch][b];
            }
            if a == b && live[a] {
                dot = 0.0;
            }
            s[a][b] = dot.tanh() * dot;
        }
    }
    let mut s = normalize_rows(&s);
    for _ in 1..n_sa {
        let mut next = vec![vec![0.0; hw]; hw];
        for a in 0..hw {
            for b in 0..hw {
                let mut dot = 0.0;
                for k in 0..hw {
                    dot += s[k][a] * s[k][b];
                }
                if a == b {
                    dot -= 1.0;
                }
                next[a][b] = dot.max(0.0);
            }
        }
        s = normalize_rows(&next);
    }
    s
}

pub fn seed(f5: &Tensor<f32>, w: &ClassifierWeights<f32>) -> Mat {
    let x = flatten(f5);
    let (k, hw) = (x.len(), x[0].len());
    let n = w.classes();
    let wd = w.tensor().data();
    let mut out = vec![vec![0.0; hw]; n];
    for m in 0..n {
        for p in 0..hw {
            for ch in 0..k {
                out[m][p] += wd[m * k + ch] as f64 * x[ch][p];
            }
        }
    }
    out
}

pub fn expand(c: &Mat, s: &Mat) -> Mat {
    let hw = s.len();
    c.iter()
        .map(|row| {
            (0..hw)
                .map(|a| (0..hw).map(|b| s[a][b] * row[b]).sum())
                .collect()
        })
        .collect()
}

/// Full pipeline; returns the fused CAM flattened class-major.
pub fn run(
    feats: &BTreeMap<Stage, Tensor<f32>>,
    w: &ClassifierWeights<f32>,
    stages: &[Stage],
    n_sa: usize,
    cross_guidance: bool,
) -> Vec<f64> {
    let c = seed(&feats[&Stage::S5], w);
    let mut cps: Vec<Mat> = stages
        .iter()
        .map(|s| expand(&c, &affinity(&feats[s], n_sa)))
        .collect();
    if cross_guidance {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        let (a, b) = (cps[0].clone(), cps[1].clone());
        for m in 0..a.len() {
            for p in 0..a[m].len() {
                cps[0][m][p] = a[m][p] * clamp(b[m][p]);
                cps[1][m][p] = b[m][p] * clamp(a[m][p]);
            }
        }
    }
    let mut out = cps[0].clone();
    for cp in &cps[1..] {
        for m in 0..out.len() {
            for p in 0..out[m].len() {
                out[m][p] += cp[m][p];
            }
        }
    }
    out.into_iter().flatten().collect()
}

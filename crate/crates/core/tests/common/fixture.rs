//! On-disk fixtures for CLI tests: SSAT tensors plus a JSON manifest.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use ssa_core::io::save_tensor;
use ssa_core::tensor::Tensor;

pub fn tensor(dims: &[usize], f: impl Fn(usize) -> f32) -> Tensor<f32> {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(f).collect()).unwrap()
}

pub fn write(dir: &Path, name: &str, t: &Tensor<f32>) -> String {
    save_tensor(t, dir.join(name)).unwrap();
    name.to_string()
}

pub fn write_manifest(dir: &Path, samples: Vec<Value>) -> PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&json!({ "samples": samples })).unwrap(),
    )
    .unwrap();
    path
}

/// Stage-5 map used by the golden heatmap: `((c*16 + p) * 7 % 23) / 4`.
pub fn golden_stage5() -> Tensor<f32> {
    tensor(&[3, 4, 4], |i| ((i * 7) % 23) as f32 / 4.0)
}

pub fn stage4() -> Tensor<f32> {
    tensor(&[5, 4, 4], |i| ((i * 5) % 13) as f32 / 3.0 - 1.0)
}

pub fn stage3() -> Tensor<f32> {
    tensor(&[2, 4, 4], |i| ((i * 3) % 11) as f32 / 2.0 - 0.5)
}

/// Class 0 is one-hot on channel 1.
pub fn weights() -> Tensor<f32> {
    Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.5, -1.0, 0.25]).unwrap()
}

/// One sample with stages 3-5, weights, boxes and a mask.
pub fn single_sample(dir: &Path) -> PathBuf {
    let s5 = write(dir, "s5.ssat", &golden_stage5());
    let s4 = write(dir, "s4.ssat", &stage4());
    let s3 = write(dir, "s3.ssat", &stage3());
    let w = write(dir, "w.ssat", &weights());
    let mask = write(
        dir,
        "mask.ssat",
        &tensor(&[4, 4], |i| if i % 4 < 2 { 1.0 } else { 0.0 }),
    );
    write_manifest(
        dir,
        vec![json!({
            "id": "fx", "stage3": s3, "stage4": s4, "stage5": s5, "weights": w,
            "gt_class": 0, "predicted_classes": [0, 1], "gt_boxes": [[0, 0, 2, 4]],
            "gt_mask": mask, "image_height": 8, "image_width": 8
        })],
    )
}

/// Four samples whose seed-CAM boxes give Top-1/Top-5/GT-known errors of
/// 75 / 50 / 50. Every CAM has the top row on, bottom row off.
pub fn loc_hand_count(dir: &Path, all_correct: bool) -> PathBuf {
    let s5 = write(
        dir,
        "hc_s5.ssat",
        &Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
    );
    let w = write(
        dir,
        "hc_w.ssat",
        &Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(),
    );
    let hit = json!([[0, 0, 2, 1]]);
    let rows: Vec<(usize, Vec<usize>, Value)> = if all_correct {
        (0..4).map(|_| (0, vec![0, 1], hit.clone())).collect()
    } else {
        vec![
            (0, vec![0, 1], hit.clone()),
            (1, vec![0, 1], hit.clone()),
            (0, vec![0], json!([[0, 1, 2, 2]])),
            (0, vec![0], json!([[1, 1, 2, 2]])),
        ]
    };
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (gt, preds, boxes))| {
            json!({
                "id": format!("hc{i}"), "stage5": s5, "weights": w, "gt_class": gt,
                "predicted_classes": preds, "gt_boxes": boxes
            })
        })
        .collect();
    write_manifest(dir, samples)
}

/// Mask samples: `(stage-5 map H x W, gt labels)`, one class, identity weights.
pub fn mask_samples(dir: &Path, samples: &[(usize, usize, Vec<f32>, Vec<f32>)]) -> PathBuf {
    let w = write(
        dir,
        "m_w.ssat",
        &Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
    );
    let recs = samples
        .iter()
        .enumerate()
        .map(|(i, (h, wd, map, gt))| {
            let s5 = write(dir, &format!("m{i}_s5.ssat"), &Tensor::new(vec![1, *h, *wd], map.clone()).unwrap());
            let m = write(dir, &format!("m{i}_gt.ssat"), &Tensor::new(vec![*h, *wd], gt.clone()).unwrap());
            json!({ "id": format!("m{i}"), "stage5": s5, "weights": w, "gt_class": 0, "gt_mask": m })
        })
        .collect();
    write_manifest(dir, recs)
}

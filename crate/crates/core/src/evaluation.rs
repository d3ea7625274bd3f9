//! Localization and segmentation metrics for CAMs: threshold masks, largest
//! connected component boxes, Top-1/Top-5/GT-known error, threshold-swept
//! foreground IoU and confusion-matrix mIoU.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Result, SsaError};
use crate::pipeline::Cam;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Label value excluded from every mask metric.
pub const IGNORE_LABEL: u32 = 255;
/// IoU needed for a box to count as a correct localization.
pub const IOU_HIT: f64 = 0.5;
pub const DEFAULT_BOX_TAU: f64 = 0.2;

/// Pixel box, half-open: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(SsaError::ShapeMismatch(format!(
                "degenerate box ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }
}

/// Intersection over union of two boxes.
pub fn iou_box(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let ih = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = (iw * ih) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(SsaError::ShapeMismatch(format!(
                "mask {}x{} needs {} bits, got {}",
                height,
                width,
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

fn map_hw<T: Scalar>(m: &Tensor<T>) -> Result<(usize, usize)> {
    match *m.dims() {
        [h, w] => Ok((h, w)),
        _ => Err(SsaError::ShapeMismatch(format!(
            "expected an H x W map, got {:?}",
            m.dims()
        ))),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(SsaError::InvalidConfig(format!(
            "threshold {tau} outside [0, 1]"
        )))
    }
}

/// Pixels whose min-max normalized value is at least `tau`.
pub fn threshold_mask<T: Scalar>(m: &Tensor<T>, tau: f64) -> Result<BinaryMask> {
    let (h, w) = map_hw(m)?;
    let norm = m.minmax_normalize();
    let bits = norm.data().iter().map(|v| v.to_acc() >= tau).collect();
    BinaryMask::new(h, w, bits)
}

/// Tight box around the largest connected component. Among equal-area
/// components the one reached first in raster order wins.
pub fn largest_component_bbox(mask: &BinaryMask, conn: Connectivity) -> Result<BoundingBox> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut best: Option<(usize, BoundingBox)> = None;
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for start in 0..h * w {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut area, mut x0, mut y0, mut x1, mut y1) = (0usize, w, h, 0usize, 0usize);
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for &(dy, dx) in offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask.bits[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if best.is_none_or(|(a, _)| area > a) {
            best = Some((area, BoundingBox { x0, y0, x1, y1 }));
        }
    }
    best.map(|(_, b)| b).ok_or(SsaError::EmptyMask)
}

/// One image for box-based localization scoring.
#[derive(Debug, Clone)]
pub struct LocSample<T> {
    pub cam: Cam<T>,
    pub gt_boxes: Vec<BoundingBox>,
    pub gt_class: usize,
    /// Classifier output, best first, at most five entries.
    pub predicted_classes: Vec<usize>,
    /// Image size `(height, width)` the boxes are expressed in. When it
    /// differs from the CAM size the class map is resized bilinearly first.
    pub image_size: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLocResult {
    pub best_iou: f64,
    pub gt_known: bool,
    pub top1: bool,
    pub top5: bool,
    pub predicted_box: Option<BoundingBox>,
}

/// Error percentages, `100 * (1 - correct / total)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocErrors {
    pub top1: f64,
    pub top5: f64,
    pub gt_known: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocReport {
    pub errors: LocErrors,
    pub per_sample: Vec<SampleLocResult>,
}

/// The class map a box is extracted from, at box resolution.
pub fn localization_map<T: Scalar>(sample: &LocSample<T>) -> Result<Tensor<T>> {
    let map = sample.cam.class_map(sample.gt_class)?;
    match sample.image_size {
        Some((h, w)) if (h, w) != (sample.cam.height(), sample.cam.width()) => {
            let (ch, cw) = (sample.cam.height(), sample.cam.width());
            map.reshape(&[1, ch, cw])?
                .resize_bilinear(h, w)?
                .reshape(&[h, w])
        }
        _ => Ok(map),
    }
}

pub fn evaluate_loc_sample<T: Scalar>(
    sample: &LocSample<T>,
    tau: f64,
    conn: Connectivity,
) -> Result<SampleLocResult> {
    if sample.gt_boxes.is_empty() {
        return Err(SsaError::InvalidSample("no ground-truth boxes".into()));
    }
    if sample.predicted_classes.len() > 5 {
        return Err(SsaError::InvalidSample(format!(
            "{} predicted classes given, at most 5 allowed",
            sample.predicted_classes.len()
        )));
    }
    let map = localization_map(sample)?;
    let mask = threshold_mask(&map, tau)?;
    let predicted_box = match largest_component_bbox(&mask, conn) {
        Ok(b) => Some(b),
        Err(SsaError::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    let best_iou = predicted_box.map_or(0.0, |pb| {
        sample
            .gt_boxes
            .iter()
            .map(|gt| iou_box(&pb, gt))
            .fold(0.0, f64::max)
    });
    let gt_known = best_iou >= IOU_HIT;
    let top1 = gt_known && sample.predicted_classes.first() == Some(&sample.gt_class);
    let top5 = gt_known && sample.predicted_classes.contains(&sample.gt_class);
    Ok(SampleLocResult {
        best_iou,
        gt_known,
        top1,
        top5,
        predicted_box,
    })
}

fn error_pct(correct: usize, total: usize) -> f64 {
    100.0 * (1.0 - correct as f64 / total as f64)
}

pub fn localization_errors<T: Scalar>(
    samples: &[LocSample<T>],
    tau: f64,
    conn: Connectivity,
) -> Result<LocReport> {
    if samples.is_empty() {
        return Err(SsaError::EmptyDataset);
    }
    check_tau(tau)?;
    let per_sample = samples
        .par_iter()
        .map(|s| evaluate_loc_sample(s, tau, conn))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_loc(per_sample))
}

/// Aggregate already-scored samples.
pub fn summarize_loc(per_sample: Vec<SampleLocResult>) -> LocReport {
    let n = per_sample.len();
    let count = |f: fn(&SampleLocResult) -> bool| per_sample.iter().filter(|r| f(r)).count();
    let errors = LocErrors {
        top1: error_pct(count(|r| r.top1), n),
        top5: error_pct(count(|r| r.top5), n),
        gt_known: error_pct(count(|r| r.gt_known), n),
    };
    LocReport { errors, per_sample }
}

/// Grid of class indices; [`IGNORE_LABEL`] marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(SsaError::ShapeMismatch(format!(
                "label grid {}x{} needs {} labels, got {}",
                height,
                width,
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Labels stored as floats in a rank-2 tensor; each must be a
    /// nonnegative integer.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = map_hw(t)?;
        let labels = t
            .data()
            .iter()
            .map(|v| {
                let x = v.to_acc();
                if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                    Ok(x as u32)
                } else {
                    Err(SsaError::InvalidSample(format!(
                        "label value {x} is not a class index"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, labels)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            vec![self.height, self.width],
            self.labels.iter().map(|&l| l as f32).collect(),
        )
        .expect("label grid dims are positive")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// A foreground score map paired with its ground-truth mask.
#[derive(Debug, Clone)]
pub struct MaskSample<T> {
    pub map: Tensor<T>,
    pub gt_mask: LabelGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouCurve {
    pub points: Vec<(f64, f64)>,
    /// Highest mean IoU and its threshold; ties go to the smaller threshold.
    pub peak: (f64, f64),
}

/// Foreground IoU of one sample at one threshold. Background is label 0;
/// ignored pixels are dropped. Empty vs. empty counts as a perfect match.
pub fn foreground_iou(pred: &BinaryMask, gt: &LabelGrid) -> Result<f64> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(SsaError::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &l) in pred.bits.iter().zip(&gt.labels) {
        if l == IGNORE_LABEL {
            continue;
        }
        let g = l != 0;
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// The default threshold grid: 0.00, 0.05, ..., 1.00.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

pub fn iou_curve<T: Scalar>(samples: &[MaskSample<T>], taus: &[f64]) -> Result<IouCurve> {
    if samples.is_empty() {
        return Err(SsaError::EmptyDataset);
    }
    if taus.is_empty() {
        return Err(SsaError::InvalidConfig("threshold grid is empty".into()));
    }
    for &t in taus {
        check_tau(t)?;
    }
    if taus.windows(2).any(|p| p[0] >= p[1]) {
        return Err(SsaError::InvalidConfig(
            "thresholds must be strictly ascending".into(),
        ));
    }
    // rows: samples, cols: taus
    let table = samples
        .par_iter()
        .map(|s| {
            taus.iter()
                .map(|&t| foreground_iou(&threshold_mask(&s.map, t)?, &s.gt_mask))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let points: Vec<(f64, f64)> = taus
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, table.iter().map(|row| row[i]).sum::<f64>() / n))
        .collect();
    let peak = points
        .iter()
        .copied()
        .fold(points[0], |best, p| if p.1 > best.1 { p } else { best });
    Ok(IouCurve { points, peak })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    /// Per-class IoU; `None` for classes absent from both prediction and
    /// ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    /// `confusion[gt][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
}

/// Accumulate `confusion[gt][pred]`, skipping ignored pixels.
pub fn accumulate_confusion(
    confusion: &mut [Vec<u64>],
    pred: &LabelGrid,
    gt: &LabelGrid,
) -> Result<()> {
    let n = confusion.len();
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(SsaError::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g == IGNORE_LABEL || p == IGNORE_LABEL {
            continue;
        }
        for label in [p, g] {
            if label as usize >= n {
                return Err(SsaError::LabelOutOfRange {
                    label,
                    n_classes: n,
                });
            }
        }
        confusion[g as usize][p as usize] += 1;
    }
    Ok(())
}

/// IoU per class from a confusion matrix, averaged over classes that occur
/// in either prediction or ground truth.
pub fn miou_from_confusion(confusion: Vec<Vec<u64>>) -> Result<MiouReport> {
    let n = confusion.len();
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let gt_total: u64 = confusion[c].iter().sum();
            let pred_total: u64 = confusion.iter().map(|row| row[c]).sum();
            let union = gt_total + pred_total - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(SsaError::EmptyDataset);
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(MiouReport {
        per_class,
        mean,
        confusion,
    })
}

pub fn miou(pred: &[LabelGrid], gt: &[LabelGrid], n_classes: usize) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(SsaError::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth grids",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() || n_classes == 0 {
        return Err(SsaError::EmptyDataset);
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (p, g) in pred.iter().zip(gt) {
        accumulate_confusion(&mut confusion, p, g)?;
    }
    miou_from_confusion(confusion)
}

//! Command implementations behind the `ssa` binary. Each returns the text it
//! would print; file outputs are written atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Result, SsaError};
use crate::evaluation::{
    accumulate_confusion, evaluate_loc_sample, iou_curve, miou_from_confusion, summarize_loc,
    Connectivity, IouCurve, LabelGrid, LocReport, LocSample, MaskSample, MiouReport,
};
use crate::io::{encode_tensor, heatmap_pgm, load_tensor, write_atomic};
use crate::manifest::{load_features, load_gt_mask, load_weights, EvalManifest, SampleRecord};
use crate::pipeline::{run_ssa, seed_cam, Cam, SsaConfig, Stage};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CamMode {
    /// Seed CAM only.
    Cam,
    #[default]
    Ssa,
}

/// How the CAM of one sample is produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CamRecipe {
    pub mode: CamMode,
    pub ssa: SsaConfig,
    /// Bilinearly resize other stages to the stage-5 grid before SSA.
    pub resize_stages: bool,
}

impl Default for CamRecipe {
    fn default() -> Self {
        Self {
            mode: CamMode::Ssa,
            ssa: SsaConfig::default(),
            resize_stages: false,
        }
    }
}

pub fn compute_cam(rec: &SampleRecord, recipe: &CamRecipe) -> Result<Cam<f32>> {
    let inner = || -> Result<Cam<f32>> {
        let w = load_weights(rec)?;
        match recipe.mode {
            CamMode::Cam => {
                let f = load_features(rec, [])?;
                seed_cam(&f[&Stage::S5], &w)
            }
            CamMode::Ssa => {
                recipe.ssa.validate()?;
                let mut f = load_features(rec, recipe.ssa.stages.iter().copied())?;
                if recipe.resize_stages {
                    align_stages(&mut f)?;
                }
                run_ssa(&f, &w, &recipe.ssa)
            }
        }
    };
    inner().map_err(|e| e.in_sample(&rec.id))
}

fn align_stages(f: &mut BTreeMap<Stage, Tensor<f32>>) -> Result<()> {
    let target = f[&Stage::S5].dims().to_vec();
    if target.len() != 3 {
        return Ok(());
    }
    for (stage, t) in f.iter_mut() {
        if *stage != Stage::S5 && t.rank() == 3 && t.dims()[1..] != target[1..] {
            *t = t.resize_bilinear(target[1], target[2])?;
        }
    }
    Ok(())
}

/// `path` without a trailing `.ssat` / `.pgm`, used as an output stem.
pub fn output_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ssat") | Some("pgm") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Heatmap bytes for one class, optionally resized to `size`.
pub fn class_heatmap(
    cam: &Cam<f32>,
    class: usize,
    size: Option<(usize, usize)>,
) -> Result<Vec<u8>> {
    let map = cam.class_map(class)?;
    let map = match size {
        Some((h, w)) if (h, w) != (cam.height(), cam.width()) => map
            .reshape(&[1, cam.height(), cam.width()])?
            .resize_bilinear(h, w)?
            .reshape(&[h, w])?,
        _ => map,
    };
    heatmap_pgm(&map)
}

/// Write `<stem>.ssat` (raw CAM, all classes) and `<stem>.pgm` (one class).
pub fn write_cam_outputs(
    cam: &Cam<f32>,
    class: usize,
    stem: &Path,
    size: Option<(usize, usize)>,
) -> Result<(PathBuf, PathBuf)> {
    if class >= cam.classes() {
        return Err(SsaError::InvalidConfig(format!(
            "class {} out of range for a CAM with {} classes",
            class,
            cam.classes()
        )));
    }
    let pgm = class_heatmap(cam, class, size)?;
    let ssat_path = with_ext(stem, "ssat");
    let pgm_path = with_ext(stem, "pgm");
    write_atomic(&ssat_path, &encode_tensor(cam.tensor()))?;
    write_atomic(&pgm_path, &pgm)?;
    Ok((ssat_path, pgm_path))
}

pub struct CamRequest<'a> {
    pub manifest: &'a EvalManifest,
    pub sample: &'a str,
    pub class: Option<usize>,
    pub out: &'a Path,
    pub upscale: bool,
}

/// `cam` and `ssa` subcommands.
pub fn cmd_cam(req: &CamRequest<'_>, recipe: &CamRecipe) -> Result<String> {
    let rec = req.manifest.sample(req.sample)?;
    let cam = compute_cam(rec, recipe)?;
    let class = req.class.unwrap_or(rec.gt_class);
    let size = if req.upscale { rec.image_size() } else { None };
    let (ssat, pgm) = write_cam_outputs(&cam, class, &output_stem(req.out), size)
        .map_err(|e| e.in_sample(&rec.id))?;
    Ok(format!(
        "sample={}\nclass={}\ncam={}\nheatmap={}\n",
        rec.id,
        class,
        ssat.display(),
        pgm.display()
    ))
}

pub fn eval_loc(
    manifest: &EvalManifest,
    recipe: &CamRecipe,
    tau: f64,
    conn: Connectivity,
) -> Result<LocReport> {
    if manifest.samples.is_empty() {
        return Err(SsaError::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(SsaError::InvalidConfig(format!(
            "threshold {tau} outside [0, 1]"
        )));
    }
    let per_sample = manifest
        .samples
        .par_iter()
        .map(|rec| {
            let sample = LocSample {
                cam: compute_cam(rec, recipe)?,
                gt_boxes: rec.boxes()?,
                gt_class: rec.gt_class,
                predicted_classes: rec.predicted_classes.clone(),
                image_size: rec.image_size(),
            };
            evaluate_loc_sample(&sample, tau, conn).map_err(|e| e.in_sample(&rec.id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_loc(per_sample))
}

pub fn loc_report_text(report: &LocReport, tau: f64) -> String {
    let e = &report.errors;
    format!(
        "samples={}\ntau={:.4}\ntop1_error={:.4}\ntop5_error={:.4}\ngt_known_error={:.4}\n",
        report.per_sample.len(),
        tau,
        e.top1,
        e.top5,
        e.gt_known
    )
}

pub fn loc_csv(manifest: &EvalManifest, report: &LocReport) -> String {
    let mut out = String::from("id,iou,gt_known,top1,top5\n");
    for (rec, r) in manifest.samples.iter().zip(&report.per_sample) {
        let _ = writeln!(
            out,
            "{},{:.6},{},{},{}",
            rec.id,
            r.best_iou,
            u8::from(r.gt_known),
            u8::from(r.top1),
            u8::from(r.top5)
        );
    }
    out
}

/// Foreground map for the IoU curve: the ground-truth class channel at mask
/// resolution.
fn mask_sample(rec: &SampleRecord, recipe: &CamRecipe) -> Result<MaskSample<f32>> {
    let gt_mask = load_gt_mask(rec)?;
    let cam = compute_cam(rec, recipe)?;
    let inner = || -> Result<MaskSample<f32>> {
        let map = cam.class_map(rec.gt_class)?;
        let (h, w) = (gt_mask.height(), gt_mask.width());
        let map = if (h, w) != (cam.height(), cam.width()) {
            map.reshape(&[1, cam.height(), cam.width()])?
                .resize_bilinear(h, w)?
                .reshape(&[h, w])?
        } else {
            map
        };
        Ok(MaskSample { map, gt_mask })
    };
    inner().map_err(|e| e.in_sample(&rec.id))
}

pub fn eval_iou_curve(
    manifest: &EvalManifest,
    recipe: &CamRecipe,
    taus: &[f64],
) -> Result<IouCurve> {
    if manifest.samples.is_empty() {
        return Err(SsaError::EmptyDataset);
    }
    if taus.is_empty() {
        return Err(SsaError::InvalidConfig("threshold grid is empty".into()));
    }
    let samples = manifest
        .samples
        .par_iter()
        .map(|rec| mask_sample(rec, recipe))
        .collect::<Result<Vec<_>>>()?;
    iou_curve(&samples, taus)
}

pub fn curve_csv(curve: &IouCurve) -> String {
    let mut out = String::from("tau,iou\n");
    for &(t, v) in &curve.points {
        let _ = writeln!(out, "{t:.4},{v:.6}");
    }
    out
}

pub fn curve_peak_line(curve: &IouCurve) -> String {
    format!(
        "peak_tau={:.4},peak_iou={:.6}\n",
        curve.peak.0, curve.peak.1
    )
}

/// Parse `"0,0.25,0.5"`. An empty list is a usage error.
pub fn parse_tau_grid(s: &str) -> Result<Vec<f64>> {
    let taus = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| SsaError::InvalidConfig(format!("bad threshold {p:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if taus.is_empty() {
        return Err(SsaError::InvalidConfig("threshold grid is empty".into()));
    }
    Ok(taus)
}

fn ssat_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| SsaError::io(dir, e))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| SsaError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("ssat") {
            if let Some(name) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(name.to_string(), path);
            }
        }
    }
    Ok(files)
}

/// mIoU over matching `*.ssat` label grids in two directories.
pub fn miou_dirs(pred_dir: &Path, gt_dir: &Path, n_classes: usize) -> Result<MiouReport> {
    let pred = ssat_files(pred_dir)?;
    let gt = ssat_files(gt_dir)?;
    if pred.keys().ne(gt.keys()) {
        let only: Vec<_> = pred
            .keys()
            .filter(|k| !gt.contains_key(*k))
            .chain(gt.keys().filter(|k| !pred.contains_key(*k)))
            .cloned()
            .collect();
        return Err(SsaError::Manifest(format!(
            "prediction and ground-truth file sets differ: {only:?}"
        )));
    }
    if gt.is_empty() || n_classes == 0 {
        return Err(SsaError::EmptyDataset);
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> =
        gt.iter().map(|(k, g)| (k, &pred[k], g)).collect();
    let partials = pairs
        .par_iter()
        .map(|(id, p, g)| {
            let load = |path: &Path| LabelGrid::from_tensor(&load_tensor(path)?);
            let mut conf = vec![vec![0u64; n_classes]; n_classes];
            accumulate_confusion(&mut conf, &load(p)?, &load(g)?)
                .map(|_| conf)
                .map_err(|e| e.in_sample(id.as_str()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![vec![0u64; n_classes]; n_classes];
    for conf in partials {
        for (row, part) in total.iter_mut().zip(conf) {
            for (t, v) in row.iter_mut().zip(part) {
                *t += v;
            }
        }
    }
    miou_from_confusion(total)
}

pub fn miou_text(report: &MiouReport) -> String {
    let mut out = String::new();
    for (c, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => {
                let _ = writeln!(out, "iou_class_{c}={v:.6}");
            }
            None => {
                let _ = writeln!(out, "iou_class_{c}=absent");
            }
        }
    }
    let _ = writeln!(out, "miou={:.6}", report.mean);
    out
}

/// Run `f` on a rayon pool with `jobs` workers (0 = rayon's default).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_and_grids() {
        assert_eq!(output_stem(Path::new("out/a.pgm")), PathBuf::from("out/a"));
        assert_eq!(output_stem(Path::new("out/a.ssat")), PathBuf::from("out/a"));
        assert_eq!(output_stem(Path::new("out/a")), PathBuf::from("out/a"));
        assert_eq!(
            with_ext(Path::new("x/y.v1"), "pgm"),
            PathBuf::from("x/y.v1.pgm")
        );
        assert_eq!(parse_tau_grid("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            parse_tau_grid(""),
            Err(SsaError::InvalidConfig(_))
        ));
        assert!(matches!(
            parse_tau_grid("a"),
            Err(SsaError::InvalidConfig(_))
        ));
    }
}

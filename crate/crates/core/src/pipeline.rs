//! End-to-end inference: seed CAM from the last stage and classifier weights,
//! expansion by each selected stage's affinity, optional cross-stage
//! significance guidance, and fusion by elementwise sum.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Result, SsaError};
use crate::kernels::matmul_nt_f64;
use crate::scalar::Scalar;
use crate::ssm::{check_depth, ssm_forward_with, AffinityMatrix, SsmConfig};
use crate::tensor::Tensor;

/// Class activation maps, `classes x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam<T>(Tensor<T>);

impl<T: Scalar> Cam<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 3 {
            return Err(SsaError::ShapeMismatch(format!(
                "CAM must be classes x H x W, got {:?}",
                t.dims()
            )));
        }
        Ok(Self(t))
    }

    pub fn classes(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    /// The `H x W` map of one class.
    pub fn class_map(&self, class: usize) -> Result<Tensor<T>> {
        self.0.channel(class)
    }

    pub fn scale(&self, alpha: T) -> Result<Self> {
        Ok(Self(self.0.scale(alpha)?))
    }

    fn same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.0.dims() != other.0.dims() {
            return Err(SsaError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.0.dims(),
                other.0.dims()
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, what: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_dims(other, what)?;
        let data = self
            .0
            .data()
            .iter()
            .zip(other.0.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self(Tensor::new(self.0.dims().to_vec(), data)?))
    }
}

/// Final linear layer weights, `classes x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights<T>(Tensor<T>);

impl<T: Scalar> ClassifierWeights<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 2 {
            return Err(SsaError::ShapeMismatch(format!(
                "classifier weights must be classes x channels, got {:?}",
                t.dims()
            )));
        }
        Ok(Self(t))
    }

    pub fn classes(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Backbone stage a feature map was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    S3,
    S4,
    S5,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::S3, Stage::S4, Stage::S5];

    pub fn number(self) -> u8 {
        match self {
            Stage::S3 => 3,
            Stage::S4 => 4,
            Stage::S5 => 5,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            3 => Some(Stage::S3),
            4 => Some(Stage::S4),
            5 => Some(Stage::S5),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Stage {
    type Err = SsaError;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(Stage::from_number)
            .ok_or_else(|| {
                SsaError::InvalidConfig(format!("unknown stage {s:?}; expected 3, 4 or 5"))
            })
    }
}

/// Parse a comma-separated stage list such as `"4,5"`.
pub fn parse_stages(s: &str) -> Result<BTreeSet<Stage>> {
    let stages = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<BTreeSet<_>>>()?;
    if stages.is_empty() {
        return Err(SsaError::InvalidConfig("stage list is empty".into()));
    }
    Ok(stages)
}

/// Where the per-stage affinity comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffinitySource {
    #[default]
    Ssm,
    /// Every stage uses the identity matrix; the pipeline then returns the
    /// seed CAM (single stage) or a multiple of it.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsaConfig {
    pub stages: BTreeSet<Stage>,
    pub ssm: SsmConfig,
    pub cross_guidance: bool,
    pub affinity: AffinitySource,
}

impl Default for SsaConfig {
    fn default() -> Self {
        Self {
            stages: [Stage::S4, Stage::S5].into_iter().collect(),
            ssm: SsmConfig::default(),
            cross_guidance: false,
            affinity: AffinitySource::Ssm,
        }
    }
}

impl SsaConfig {
    pub fn with_stages(stages: impl IntoIterator<Item = Stage>) -> Self {
        Self {
            stages: stages.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(SsaError::InvalidConfig("no stages selected".into()));
        }
        check_depth(self.ssm.n_sa)?;
        if self.cross_guidance && self.stages.len() != 2 {
            return Err(SsaError::InvalidConfig(format!(
                "cross guidance pairs exactly two stages, {} selected",
                self.stages.len()
            )));
        }
        Ok(())
    }
}

/// `C[m][i][j] = sum_k w[m][k] * f[k][i][j]`.
pub fn seed_cam<T: Scalar>(f5: &Tensor<T>, w: &ClassifierWeights<T>) -> Result<Cam<T>> {
    let (k, h, wd) = match *f5.dims() {
        [k, h, w] => (k, h, w),
        _ => {
            return Err(SsaError::ShapeMismatch(format!(
                "stage-5 features must be channels x H x W, got {:?}",
                f5.dims()
            )))
        }
    };
    if w.channels() != k {
        return Err(SsaError::ShapeMismatch(format!(
            "classifier has {} channels, feature map has {}",
            w.channels(),
            k
        )));
    }
    let hw = h * wd;
    let n = w.classes();
    let wt = w.tensor().data();
    let x = f5.data();
    let mut out = vec![0.0f64; n * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(m, plane)| {
        for ch in 0..k {
            let wk = wt[m * k + ch].to_acc();
            if wk == 0.0 {
                continue;
            }
            for (o, v) in plane.iter_mut().zip(&x[ch * hw..(ch + 1) * hw]) {
                *o += wk * v.to_acc();
            }
        }
    });
    Cam::new(Tensor::new(
        vec![n, h, wd],
        out.into_iter().map(T::from_acc).collect(),
    )?)
}

/// Spread each class map through the affinity:
/// `CP[m][a] = sum_b S[a][b] * C[m][b]` over flattened positions.
///
/// With a row-stochastic `S` every output pixel is a convex combination of
/// the seed scores, so the CAM's magnitude scale is preserved.
pub fn expand_cam<T: Scalar>(c: &Cam<T>, s: &AffinityMatrix<T>) -> Result<Cam<T>> {
    let hw = c.height() * c.width();
    if s.size() != hw {
        return Err(SsaError::ShapeMismatch(format!(
            "affinity of size {} does not match CAM with {} positions",
            s.size(),
            hw
        )));
    }
    let n = c.classes();
    let out = matmul_nt_f64(c.tensor().data(), s.values(), n, hw, hw);
    Cam::new(Tensor::new(
        c.tensor().dims().to_vec(),
        out.into_iter().map(T::from_acc).collect(),
    )?)
}

/// Elementwise sum.
pub fn fuse<T: Scalar>(a: &Cam<T>, b: &Cam<T>) -> Result<Cam<T>> {
    a.zip_with(b, "fuse", |x, y| x + y)
}

/// Clamp to `[0, 1]`.
pub fn hardtanh_significance<T: Scalar>(cp: &Cam<T>) -> Cam<T> {
    Cam(Tensor::new(
        cp.tensor().dims().to_vec(),
        cp.tensor()
            .data()
            .iter()
            .map(|&v| v.max(T::zero()).min(T::one()))
            .collect(),
    )
    .expect("clamped values are finite"))
}

/// Each map is gated elementwise by the other's significance map:
/// returns `(a * clamp(b), b * clamp(a))`.
pub fn cross_guide<T: Scalar>(a: &Cam<T>, b: &Cam<T>) -> Result<(Cam<T>, Cam<T>)> {
    let sig_a = hardtanh_significance(a);
    let sig_b = hardtanh_significance(b);
    let guided_a = a.zip_with(&sig_b, "cross_guide", |x, g| x * g)?;
    let guided_b = b.zip_with(&sig_a, "cross_guide", |x, g| x * g)?;
    Ok((guided_a, guided_b))
}

/// Everything computed by one pipeline run.
#[derive(Debug, Clone)]
pub struct SsaOutput<T> {
    pub seed: Cam<T>,
    /// Expanded CAM per stage, after guidance when enabled, in stage order.
    pub expanded: Vec<(Stage, Cam<T>)>,
    pub fused: Cam<T>,
}

pub fn run_ssa<T: Scalar>(
    features: &BTreeMap<Stage, Tensor<T>>,
    w: &ClassifierWeights<T>,
    cfg: &SsaConfig,
) -> Result<Cam<T>> {
    Ok(run_ssa_detailed(features, w, cfg)?.fused)
}

pub fn run_ssa_detailed<T: Scalar>(
    features: &BTreeMap<Stage, Tensor<T>>,
    w: &ClassifierWeights<T>,
    cfg: &SsaConfig,
) -> Result<SsaOutput<T>> {
    cfg.validate()?;
    let f5 = features.get(&Stage::S5).ok_or(SsaError::MissingStage(5))?;
    for &stage in &cfg.stages {
        if !features.contains_key(&stage) {
            return Err(SsaError::MissingStage(stage.number()));
        }
    }
    let seed = seed_cam(f5, w)?;
    let (h, wd) = (seed.height(), seed.width());

    let stages: Vec<Stage> = cfg.stages.iter().copied().collect();
    let mut expanded = stages
        .par_iter()
        .map(|&stage| {
            let f = &features[&stage];
            if f.rank() != 3 || f.dims()[1] != h || f.dims()[2] != wd {
                return Err(SsaError::ShapeMismatch(format!(
                    "stage {} features {:?} do not match seed CAM size {}x{}",
                    stage,
                    f.dims(),
                    h,
                    wd
                )));
            }
            let s = match cfg.affinity {
                AffinitySource::Ssm => ssm_forward_with(f, &cfg.ssm)?,
                AffinitySource::Identity => AffinityMatrix::identity(h * wd),
            };
            Ok((stage, expand_cam(&seed, &s)?))
        })
        .collect::<Result<Vec<_>>>()?;

    if cfg.cross_guidance {
        let (a, b) = cross_guide(&expanded[0].1, &expanded[1].1)?;
        expanded[0].1 = a;
        expanded[1].1 = b;
    }

    let mut fused = expanded[0].1.clone();
    for (_, cp) in &expanded[1..] {
        fused = fuse(&fused, cp)?;
    }
    Ok(SsaOutput {
        seed,
        expanded,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(dims: [usize; 3], data: Vec<f32>) -> Cam<f32> {
        Cam::new(Tensor::new(dims.to_vec(), data).unwrap()).unwrap()
    }

    fn weights(n: usize, k: usize, data: Vec<f32>) -> ClassifierWeights<f32> {
        ClassifierWeights::new(Tensor::new(vec![n, k], data).unwrap()).unwrap()
    }

    fn sample_features() -> Tensor<f32> {
        let data: Vec<f32> = (0..3 * 2 * 2).map(|i| ((i * 7) % 5) as f32 - 1.5).collect();
        Tensor::new(vec![3, 2, 2], data).unwrap()
    }

    #[test]
    fn seed_one_hot_and_zero_weights() {
        let f = sample_features();
        let onehot = weights(2, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let c = seed_cam(&f, &onehot).unwrap();
        assert_eq!(c.class_map(0).unwrap(), f.channel(2).unwrap());
        assert!(c.class_map(1).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            seed_cam(&f, &weights(1, 2, vec![1.0, 1.0])),
            Err(SsaError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn seed_matches_scalar_loop() {
        let f = Tensor::new(
            vec![2, 2, 2],
            vec![1.0f32, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 0.0],
        )
        .unwrap();
        let w = weights(2, 2, vec![0.5, 2.0, -1.0, 1.0]);
        let c = seed_cam(&f, &w).unwrap();
        // class 0: 0.5*f0 + 2*f1 ; class 1: -f0 + f1
        assert_eq!(
            c.tensor().data(),
            &[-1.5, 2.0, 5.5, 2.0, -2.0, -1.5, -1.0, -4.0]
        );
    }

    #[test]
    fn expand_identity_zero_and_constant() {
        let c = cam([2, 2, 2], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0, 1.0, 2.0]);
        assert_eq!(expand_cam(&c, &AffinityMatrix::identity(4)).unwrap(), c);

        let z = cam([1, 2, 2], vec![0.0; 4]);
        let s = AffinityMatrix::new(4, (0..16).map(|i| i as f32 / 10.0).collect()).unwrap();
        assert!(expand_cam(&z, &s)
            .unwrap()
            .tensor()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let ones = cam([1, 2, 2], vec![1.0; 4]);
        let stochastic = AffinityMatrix::new(
            4,
            vec![
                0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 1.0, 0.0, 0.6, 0.1, 0.1, 0.2,
            ],
        )
        .unwrap();
        for &v in expand_cam(&ones, &stochastic).unwrap().tensor().data() {
            assert!((v - 1.0).abs() < 1e-5);
        }
        assert!(matches!(
            expand_cam(&ones, &AffinityMatrix::identity(3)),
            Err(SsaError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fuse_identity_and_commutativity() {
        let a = cam([1, 1, 3], vec![1.0, 2.0, 3.0]);
        let b = cam([1, 1, 3], vec![-1.0, 0.5, 10.0]);
        let z = cam([1, 1, 3], vec![0.0; 3]);
        assert_eq!(fuse(&z, &b).unwrap(), b);
        assert_eq!(fuse(&a, &b).unwrap(), fuse(&b, &a).unwrap());
        assert!(matches!(
            fuse(&a, &cam([1, 3, 1], vec![0.0; 3])),
            Err(SsaError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn hardtanh_clamps() {
        let c = cam([1, 1, 3], vec![-0.5, 0.5, 2.0]);
        assert_eq!(hardtanh_significance(&c).tensor().data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn cross_guide_examples() {
        let a = cam([1, 2, 2], vec![0.3, -0.2, 1.5, 0.8]);
        let saturated = cam([1, 2, 2], vec![1.0, 3.0, 1.2, 7.0]);
        let (ga, _) = cross_guide(&a, &saturated).unwrap();
        assert_eq!(ga, a);

        let zeros = cam([1, 2, 2], vec![0.0; 4]);
        let (_, gb) = cross_guide(&zeros, &a).unwrap();
        assert!(gb.tensor().data().iter().all(|&v| v == 0.0));

        let b = cam([1, 2, 2], vec![0.5, 2.0, -1.0, 0.25]);
        let (ga, gb) = cross_guide(&a, &b).unwrap();
        let (ad, bd) = (a.tensor().data(), b.tensor().data());
        for i in 0..4 {
            let clamp = |v: f32| v.clamp(0.0, 1.0);
            assert_eq!(ga.tensor().data()[i], ad[i] * clamp(bd[i]));
            assert_eq!(gb.tensor().data()[i], bd[i] * clamp(ad[i]));
        }
    }

    fn features(stages: &[Stage], h: usize, w: usize) -> BTreeMap<Stage, Tensor<f32>> {
        stages
            .iter()
            .enumerate()
            .map(|(s, &stage)| {
                let c = 3 + s;
                let data = (0..c * h * w)
                    .map(|i| (((i + 3 * s) * 13) % 17) as f32 / 4.0 - 1.0)
                    .collect();
                (stage, Tensor::new(vec![c, h, w], data).unwrap())
            })
            .collect()
    }

    #[test]
    fn identity_pipeline_returns_seed() {
        let feats = features(&[Stage::S5], 3, 3);
        let w = weights(2, 3, vec![1.0, -0.5, 0.25, 0.0, 2.0, 1.0]);
        let cfg = SsaConfig {
            affinity: AffinitySource::Identity,
            ..SsaConfig::with_stages([Stage::S5])
        };
        let out = run_ssa_detailed(&feats, &w, &cfg).unwrap();
        assert_eq!(out.fused, out.seed);
    }

    #[test]
    fn two_stage_pipeline_is_hand_composition() {
        let feats = features(&[Stage::S4, Stage::S5], 3, 3);
        let w = weights(2, 4, vec![1.0, -0.5, 0.25, 0.0, 0.0, 2.0, 1.0, 0.5]);
        let cfg = SsaConfig::default();
        let got = run_ssa(&feats, &w, &cfg).unwrap();
        let c = seed_cam(&feats[&Stage::S5], &w).unwrap();
        let cp4 = expand_cam(&c, &crate::ssm::ssm_forward(&feats[&Stage::S4], 2).unwrap()).unwrap();
        let cp5 = expand_cam(&c, &crate::ssm::ssm_forward(&feats[&Stage::S5], 2).unwrap()).unwrap();
        assert_eq!(got, fuse(&cp4, &cp5).unwrap());
    }

    #[test]
    fn pipeline_errors() {
        let feats = features(&[Stage::S4], 2, 2);
        let w = weights(1, 3, vec![1.0; 3]);
        assert!(matches!(
            run_ssa(&feats, &w, &SsaConfig::with_stages([Stage::S4])),
            Err(SsaError::MissingStage(5))
        ));
        let feats = features(&[Stage::S4, Stage::S5], 2, 2);
        let w = weights(1, 4, vec![1.0; 4]);
        assert!(matches!(
            run_ssa(&feats, &w, &SsaConfig::with_stages([Stage::S3, Stage::S5])),
            Err(SsaError::MissingStage(3))
        ));
        let mut cfg = SsaConfig::default();
        cfg.ssm.n_sa = 4;
        assert!(matches!(
            run_ssa(&feats, &w, &cfg),
            Err(SsaError::UnsupportedDepth(4))
        ));
        let cfg = SsaConfig {
            cross_guidance: true,
            ..SsaConfig::with_stages([Stage::S5])
        };
        assert!(matches!(
            run_ssa(&feats, &w, &cfg),
            Err(SsaError::InvalidConfig(_))
        ));

        let mut mismatched = feats.clone();
        mismatched.insert(
            Stage::S4,
            Tensor::new(vec![3, 1, 4], vec![1.0; 12]).unwrap(),
        );
        assert!(matches!(
            run_ssa(&mismatched, &w, &SsaConfig::default()),
            Err(SsaError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn guidance_is_identity_when_saturated() {
        // Features with positive entries and large positive weights keep every
        // expanded score >= 1, so the significance maps are all ones.
        let feats: BTreeMap<_, _> = [Stage::S4, Stage::S5]
            .into_iter()
            .map(|s| {
                let data = (0..2 * 3 * 3).map(|i| 1.0 + (i % 4) as f32).collect();
                (s, Tensor::new(vec![2, 3, 3], data).unwrap())
            })
            .collect();
        let w = weights(1, 2, vec![5.0, 5.0]);
        let plain = run_ssa(&feats, &w, &SsaConfig::default()).unwrap();
        let guided = run_ssa(
            &feats,
            &w,
            &SsaConfig {
                cross_guidance: true,
                ..SsaConfig::default()
            },
        )
        .unwrap();
        assert_eq!(plain, guided);
    }

    #[test]
    fn stage_parsing() {
        assert_eq!(
            parse_stages("4,5").unwrap().into_iter().collect::<Vec<_>>(),
            vec![Stage::S4, Stage::S5]
        );
        assert_eq!(parse_stages("5,3,5").unwrap().len(), 2);
        assert!(parse_stages("").is_err());
        assert!(parse_stages("6").is_err());
    }
}

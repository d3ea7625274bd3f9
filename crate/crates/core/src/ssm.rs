//! Semantic structure module: a parameter-free pixel-pair affinity matrix
//! built from one backbone stage's feature map.
//!
//! Pipeline for the default depth of two SA blocks:
//!
//! ```text
//! f (C x H x W) -> position L2 norm -> g^T g - I -> x * tanh(x)
//!   -> row normalize -> ReLU(s^T s - I) -> row normalize
//! ```
//!
//! Each extra SA block repeats the `ReLU(s^T s - I) -> row normalize` stage.

use crate::error::{Result, SsaError};
use crate::kernels::column_gram_f64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_SA_DEPTH: usize = 2;
pub const MAX_SA_DEPTH: usize = 3;

/// Square `HW x HW` affinity between spatial positions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T> {
    size: usize,
    values: Vec<T>,
}

impl<T: Scalar> AffinityMatrix<T> {
    pub fn new(size: usize, values: Vec<T>) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(SsaError::ShapeMismatch(format!(
                "affinity of size {} needs {} values, got {}",
                size,
                size * size,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SsaError::NonFiniteData);
        }
        Ok(Self { size, values })
    }

    pub fn identity(size: usize) -> Self {
        let mut values = vec![T::zero(); size * size];
        for a in 0..size {
            values[a * size + a] = T::one();
        }
        Self { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, a: usize, b: usize) -> T {
        self.values[a * self.size + b]
    }

    pub fn row(&self, a: usize) -> &[T] {
        &self.values[a * self.size..(a + 1) * self.size]
    }

    /// Largest `|m[a][b] - m[b][a]|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.size;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max((self.get(a, b).to_acc() - self.get(b, a).to_acc()).abs());
            }
        }
        worst
    }

    fn from_f64(size: usize, values: impl IntoIterator<Item = f64>) -> Self {
        Self {
            size,
            values: values.into_iter().map(T::from_acc).collect(),
        }
    }
}

/// How each spatial position's channel vector is scaled before the first SA
/// block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionNorm {
    /// Unit Euclidean norm per position, so the first SA block yields cosine
    /// similarities.
    #[default]
    Cosine,
    /// Each channel divided by the square root of its spatial sum. Channels
    /// with a non-positive sum are zeroed.
    SpatialSqrtSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmConfig {
    pub n_sa: usize,
    pub norm: PositionNorm,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            n_sa: DEFAULT_SA_DEPTH,
            norm: PositionNorm::Cosine,
        }
    }
}

fn feature_dims<T: Scalar>(f: &Tensor<T>) -> Result<(usize, usize)> {
    match *f.dims() {
        [c, h, w] => Ok((c, h * w)),
        _ => Err(SsaError::ShapeMismatch(format!(
            "feature map must be channels x H x W, got {:?}",
            f.dims()
        ))),
    }
}

/// Flatten `C x H x W` to `C x HW` and scale every position's channel vector
/// to unit L2 norm. All-zero positions stay zero.
pub fn l2_normalize_positions<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, hw) = feature_dims(f)?;
    let x = f.data();
    let mut norms = vec![0.0f64; hw];
    for ch in 0..c {
        for (p, n) in norms.iter_mut().enumerate() {
            let v = x[ch * hw + p].to_acc();
            *n += v * v;
        }
    }
    let inv: Vec<f64> = norms
        .iter()
        .map(|&n| if n > 0.0 { 1.0 / n.sqrt() } else { 0.0 })
        .collect();
    let data = x
        .iter()
        .enumerate()
        .map(|(i, v)| T::from_acc(v.to_acc() * inv[i % hw]))
        .collect();
    Tensor::new(vec![c, hw], data)
}

/// Flatten `C x H x W` to `C x HW` and divide each channel by the square root
/// of its spatial sum.
pub fn sqrt_sum_normalize_channels<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, hw) = feature_dims(f)?;
    let mut data = Vec::with_capacity(c * hw);
    for plane in f.data().chunks_exact(hw) {
        let sum: f64 = plane.iter().map(|v| v.to_acc()).sum();
        let inv = if sum > 0.0 { 1.0 / sum.sqrt() } else { 0.0 };
        data.extend(plane.iter().map(|v| T::from_acc(v.to_acc() * inv)));
    }
    Tensor::new(vec![c, hw], data)
}

/// First SA block: `g^T g - I` over the columns of a `C x HW` matrix.
///
/// The identity is only subtracted at positions whose column is nonzero, so
/// featureless positions produce all-zero rows and columns.
pub fn self_affinity<T: Scalar>(g: &Tensor<T>) -> Result<AffinityMatrix<T>> {
    let (c, hw) = match *g.dims() {
        [c, hw] => (c, hw),
        _ => {
            return Err(SsaError::ShapeMismatch(format!(
                "self_affinity expects channels x HW, got {:?}",
                g.dims()
            )))
        }
    };
    let mut gram = column_gram_f64(g.data(), c, hw);
    let x = g.data();
    for p in 0..hw {
        let nonzero = (0..c).any(|ch| x[ch * hw + p] != T::zero());
        if nonzero {
            gram[p * hw + p] -= 1.0;
        }
    }
    Ok(AffinityMatrix::from_f64(hw, gram))
}

/// [`self_affinity`] for unit-norm positions. The diagonal of `gᵀg` is 1 up to
/// rounding there, so it is set to exactly zero rather than left as residue
/// that later row normalization could blow up.
pub fn cosine_self_affinity<T: Scalar>(g: &Tensor<T>) -> Result<AffinityMatrix<T>> {
    let mut s = self_affinity(g)?;
    for p in 0..s.size {
        s.values[p * s.size + p] = T::zero();
    }
    Ok(s)
}

/// Elementwise `tanh(x) * x`; nonnegative for every real input.
pub fn smooth_gate<T: Scalar>(s: &AffinityMatrix<T>) -> AffinityMatrix<T> {
    AffinityMatrix::from_f64(
        s.size,
        s.values.iter().map(|v| {
            let x = v.to_acc();
            x.tanh() * x
        }),
    )
}

/// Divide every row by its sum; rows summing to zero stay zero.
pub fn sum_normalize_rows<T: Scalar>(s: &AffinityMatrix<T>) -> AffinityMatrix<T> {
    let n = s.size;
    let mut out = Vec::with_capacity(n * n);
    for row in s.values.chunks_exact(n) {
        let sum: f64 = row.iter().map(|v| v.to_acc()).sum();
        if sum > 0.0 {
            out.extend(row.iter().map(|v| T::from_acc(v.to_acc() / sum)));
        } else {
            out.extend(std::iter::repeat_n(T::zero(), n));
        }
    }
    AffinityMatrix {
        size: n,
        values: out,
    }
}

/// Unnormalized second SA block: `ReLU(s^T s - I)`.
pub fn second_sa_product<T: Scalar>(s: &AffinityMatrix<T>) -> AffinityMatrix<T> {
    let n = s.size;
    let mut gram = column_gram_f64(&s.values, n, n);
    for a in 0..n {
        gram[a * n + a] -= 1.0;
    }
    AffinityMatrix::from_f64(n, gram.into_iter().map(|v| v.max(0.0)))
}

/// Second SA block on a row-normalized affinity: `ReLU(s^T s - I)`, then row
/// normalization.
pub fn second_sa_block<T: Scalar>(s: &AffinityMatrix<T>) -> AffinityMatrix<T> {
    sum_normalize_rows(&second_sa_product(s))
}

pub fn check_depth(n_sa: usize) -> Result<()> {
    if (1..=MAX_SA_DEPTH).contains(&n_sa) {
        Ok(())
    } else {
        Err(SsaError::UnsupportedDepth(n_sa))
    }
}

/// Affinity for one stage with `n_sa` SA blocks and cosine position
/// normalization.
pub fn ssm_forward<T: Scalar>(f: &Tensor<T>, n_sa: usize) -> Result<AffinityMatrix<T>> {
    ssm_forward_with(
        f,
        &SsmConfig {
            n_sa,
            ..SsmConfig::default()
        },
    )
}

pub fn ssm_forward_with<T: Scalar>(f: &Tensor<T>, cfg: &SsmConfig) -> Result<AffinityMatrix<T>> {
    check_depth(cfg.n_sa)?;
    let s1 = match cfg.norm {
        PositionNorm::Cosine => cosine_self_affinity(&l2_normalize_positions(f)?)?,
        PositionNorm::SpatialSqrtSum => self_affinity(&sqrt_sum_normalize_channels(f)?)?,
    };
    let gated = smooth_gate(&s1);
    let mut s = sum_normalize_rows(&gated);
    for _ in 1..cfg.n_sa {
        s = second_sa_block(&s);
    }
    Ok(s)
}

//! Dense row-major tensor value type and the shape utilities shared by the
//! affinity, pipeline and evaluation code.

use crate::error::{Result, SsaError};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 4;

/// Dense tensor of rank 1 to 4, stored row-major (last dimension fastest).
///
/// Every constructor rejects non-finite elements, so a `Tensor` in hand is
/// always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK || dims.contains(&0) {
        return Err(SsaError::InvalidDims(dims.to_vec()));
    }
    Ok(dims.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if len != data.len() {
            return Err(SsaError::ShapeMismatch(format!(
                "dims {:?} hold {} elements but {} were supplied",
                dims,
                len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SsaError::NonFiniteData);
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = check_dims(&dims)?;
        Ok(Self {
            dims,
            data: vec![T::zero(); len],
        })
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Result<Self> {
        let len = check_dims(&dims)?;
        if !value.is_finite() {
            return Err(SsaError::NonFiniteData);
        }
        Ok(Self {
            dims,
            data: vec![value; len],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major flat offset of a multi-index. Panics on a bad index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {i} out of bounds for extent {d}");
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// Same buffer, new dims.
    pub fn reshape(&self, new_dims: &[usize]) -> Result<Self> {
        let len = check_dims(new_dims)?;
        if len != self.data.len() {
            return Err(SsaError::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, new_dims
            )));
        }
        Ok(Self {
            dims: new_dims.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Apply `f` elementwise. Fails if `f` produces a non-finite value.
    pub fn try_map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, alpha: T) -> Result<Self> {
        self.try_map(|v| v * alpha)
    }

    /// Convert the element type, e.g. `f32` to `f64`.
    pub fn cast<U: Scalar>(&self) -> Result<Tensor<U>> {
        Tensor::new(
            self.dims.clone(),
            self.data.iter().map(|&v| U::from_acc(v.to_acc())).collect(),
        )
    }

    /// Copy of the `c`-th slice along the leading dimension.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if self.rank() < 2 || c >= self.dims[0] {
            return Err(SsaError::ShapeMismatch(format!(
                "channel {} not available in tensor of dims {:?}",
                c, self.dims
            )));
        }
        let stride: usize = self.dims[1..].iter().product();
        Ok(Self {
            dims: self.dims[1..].to_vec(),
            data: self.data[c * stride..(c + 1) * stride].to_vec(),
        })
    }

    /// Smallest and largest element.
    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Affine map of the whole tensor onto `[0, 1]`. A flat tensor maps to zeros.
    pub fn minmax_normalize(&self) -> Self {
        let (lo, hi) = self.min_max();
        let (lo, hi) = (lo.to_acc(), hi.to_acc());
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data
                .iter()
                .map(|&v| T::from_acc(((v.to_acc() - lo) / range).clamp(0.0, 1.0)))
                .collect()
        } else {
            vec![T::zero(); self.data.len()]
        };
        Self {
            dims: self.dims.clone(),
            data,
        }
    }

    /// Bilinear resampling of a `channels x H x W` tensor, half-pixel
    /// (align-corners = false) convention with edge clamping.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if self.rank() != 3 {
            return Err(SsaError::ShapeMismatch(format!(
                "resize_bilinear expects channels x H x W, got {:?}",
                self.dims
            )));
        }
        if out_h == 0 || out_w == 0 {
            return Err(SsaError::InvalidDims(vec![self.dims[0], out_h, out_w]));
        }
        let (ch, in_h, in_w) = (self.dims[0], self.dims[1], self.dims[2]);
        if in_h == out_h && in_w == out_w {
            return Ok(self.clone());
        }
        let rows = axis_taps(in_h, out_h);
        let cols = axis_taps(in_w, out_w);
        let mut data = Vec::with_capacity(ch * out_h * out_w);
        for c in 0..ch {
            let plane = &self.data[c * in_h * in_w..(c + 1) * in_h * in_w];
            for &(y0, y1, fy) in &rows {
                for &(x0, x1, fx) in &cols {
                    let p00 = plane[y0 * in_w + x0];
                    let p01 = plane[y0 * in_w + x1];
                    let p10 = plane[y1 * in_w + x0];
                    let p11 = plane[y1 * in_w + x1];
                    let top = p00.to_acc() * (1.0 - fx) + p01.to_acc() * fx;
                    let bottom = p10.to_acc() * (1.0 - fx) + p11.to_acc() * fx;
                    let v = T::from_acc(top * (1.0 - fy) + bottom * fy);
                    let lo = p00.min(p01).min(p10).min(p11);
                    let hi = p00.max(p01).max(p10).max(p11);
                    data.push(v.max(lo).min(hi));
                }
            }
        }
        Ok(Self {
            dims: vec![ch, out_h, out_w],
            data,
        })
    }
}

/// Source taps `(i0, i1, frac)` for every output coordinate along one axis.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

//! Dense product kernels behind the affinity and expansion steps.
//!
//! Each output element is one sequential `f64` dot product over a fixed
//! index order, so results are bit-identical for any rayon thread count.
//! Work is split across output rows only.

use rayon::prelude::*;

use crate::scalar::Scalar;

const TILE: usize = 64;

fn widen<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|v| v.to_acc()).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `a * b^T` for row-major `a: m x k` and `b: n x k`; returns `m x n` in `f64`.
pub fn matmul_nt_f64<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), n * k, "rhs length");
    let a = widen(a);
    let b = widen(b);
    let mut out = vec![0.0f64; m * n];
    if k == 0 {
        return out;
    }
    out.par_chunks_mut(n)
        .zip(a.par_chunks(k))
        .for_each(|(row, a_row)| {
            for j0 in (0..n).step_by(TILE) {
                let j1 = (j0 + TILE).min(n);
                for (j, slot) in (j0..j1).zip(&mut row[j0..j1]) {
                    *slot = dot(a_row, &b[j * k..(j + 1) * k]);
                }
            }
        });
    out
}

/// Gram matrix of the columns of a row-major `rows x cols` matrix:
/// `out[a][b] = sum_r x[r][a] * x[r][b]`, a `cols x cols` result in `f64`.
/// The result is exactly symmetric.
pub fn column_gram_f64<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(x.len(), rows * cols, "matrix length");
    let xt = transpose(x, rows, cols);
    matmul_nt_f64(&xt, &xt, cols, cols, rows)
}

/// Row-major transpose of a `rows x cols` matrix.
pub fn transpose<T: Copy>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for c in 0..cols {
        out.extend((0..rows).map(|r| x[r * cols + c]));
    }
    out
}

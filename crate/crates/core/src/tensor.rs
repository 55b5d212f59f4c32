//! Dense row-major matrices and the small set of vector helpers the kernels share.

use crate::error::{ensure, Result};
use crate::q4nx::Bf16;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            DimMismatch,
            "{} elements cannot form a {rows}x{cols} matrix",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Stack equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            ensure!(
                r.as_ref().len() == cols,
                DimMismatch,
                "row {i} has {} entries, expected {cols}",
                r.as_ref().len()
            );
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Borrowed view of rows `start..end`.
    pub fn view_rows(&self, start: usize, end: usize) -> MatRef<'_, T> {
        MatRef {
            rows: end - start,
            cols: self.cols,
            data: &self.data[start * self.cols..end * self.cols],
        }
    }

    pub fn view(&self) -> MatRef<'_, T> {
        self.view_rows(0, self.rows)
    }

    /// Append the rows of `other` below this matrix.
    pub fn append_rows(&mut self, other: &Self) -> Result<()> {
        ensure!(
            self.cols == other.cols || self.rows == 0,
            DimMismatch,
            "cannot append {} columns to {}",
            other.cols,
            self.cols
        );
        if self.rows == 0 {
            self.cols = other.cols;
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

impl Matrix<f32> {
    /// Round every entry to the nearest bf16.
    pub fn to_bf16(&self) -> Matrix<Bf16> {
        self.map(Bf16::from_f32)
    }

    /// Round every entry through bf16 and back.
    pub fn round_bf16(&self) -> Matrix<f32> {
        self.map(|x| Bf16::from_f32(x).to_f32())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Matrix<Bf16> {
    pub fn to_f32(&self) -> Matrix<f32> {
        self.map(Bf16::to_f32)
    }
}

/// Borrowed row-major view over a contiguous run of matrix rows.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T = f32> {
    rows: usize,
    cols: usize,
    data: &'a [T],
}

impl<'a, T: Copy> MatRef<'a, T> {
    pub fn new(rows: usize, cols: usize, data: &'a [T]) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            DimMismatch,
            "{} elements cannot form a {rows}x{cols} view",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &'a [T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &'a [T] {
        self.data
    }
}

impl MatRef<'_, f32> {
    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|x| x.is_nan())
    }
}

/// Dot product with eight independent partial sums, combined pairwise.
///
/// The summation order is fixed, so results are reproducible across calls.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let s0 = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let s1 = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    (s0 + s1) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Normwise relative error: `max |a - b| / max |b|`.
///
/// Falls back to the absolute error when the reference is identically zero.
pub fn max_rel_error(actual: &[f32], reference: &[f32]) -> f32 {
    assert_eq!(actual.len(), reference.len(), "length mismatch");
    let mut diff = 0.0f32;
    let mut scale = 0.0f32;
    for (a, b) in actual.iter().zip(reference) {
        let d = (a - b).abs();
        if d.is_nan() {
            return f32::INFINITY;
        }
        diff = diff.max(d);
        scale = scale.max(b.abs());
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

//! Row-major dense matrices and the few products the encoder needs.
//!
//! General products go through `matrixmultiply`; everything else is plain
//! loops over contiguous rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::param(alloc::format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stack equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::param("rows have unequal lengths"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// New matrix made of the listed rows, in order.
    pub fn gather_rows(&self, idx: &[u32]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i as usize));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column sums, accumulated top to bottom.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }
}

/// Shape of an operand as seen by a product: `(rows, cols, row_stride, col_stride)`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

fn view(m: &Matrix, transposed: bool) -> View<'_> {
    if transposed {
        View { data: &m.data, rows: m.cols, cols: m.rows, rs: 1, cs: m.cols as isize }
    } else {
        View { data: &m.data, rows: m.rows, cols: m.cols, rs: m.cols as isize, cs: 1 }
    }
}

/// Raw row-major buffer viewed as a matrix.
pub(crate) fn raw_view(data: &[f64], rows: usize, cols: usize, transposed: bool) -> RawView<'_> {
    debug_assert_eq!(data.len(), rows * cols);
    if transposed {
        RawView(View { data, rows: cols, cols: rows, rs: 1, cs: cols as isize })
    } else {
        RawView(View { data, rows, cols, rs: cols as isize, cs: 1 })
    }
}

#[derive(Clone, Copy)]
pub(crate) struct RawView<'a>(View<'a>);

/// `c = alpha * a * b + beta * c` with `a`, `b` given as views.
fn gemm_views(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], c_cols: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(c.len(), a.rows * b.cols);
    assert_eq!(c_cols, b.cols);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    dgemm_checked(alpha, a, b, beta, c, c_cols);
}

#[allow(unsafe_code)]
fn dgemm_checked(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], c_cols: usize) {
    // SAFETY: the caller asserted that every extent and stride stays inside
    // the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            c_cols as isize,
            1,
        );
    }
}

/// `op(a) * op(b)` where `op` optionally transposes.
pub fn matmul(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (va, vb) = (view(a, ta), view(b, tb));
    let mut c = Matrix::zeros(va.rows, vb.cols);
    gemm_views(1.0, va, vb, 0.0, &mut c.data, vb.cols);
    c
}

pub(crate) fn matmul_raw(a: RawView<'_>, b: RawView<'_>, out: &mut [f64], beta: f64) {
    let cols = b.0.cols;
    gemm_views(1.0, a.0, b.0, beta, out, cols);
}

pub(crate) fn matrix_view(m: &Matrix, transposed: bool) -> RawView<'_> {
    RawView(view(m, transposed))
}

/// Pairwise summation; deterministic for a given input order.
pub fn tree_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
}

//! Row-major f64 matrix with the three product shapes the MLP math needs.
//!
//! Dimension mismatches panic with the operation name and offending sizes:
//! these are programmer errors on the hot path. Result-returning checks live
//! at module boundaries (forward, optimizer) where input is caller-supplied.
//!
//! Summation order inside every kernel is fixed (4-lane unrolled dot), so
//! results are bit-identical from run to run.

/// Dot product with four independent accumulators folded in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let quads = n - n % 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < quads {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y += c * x` over equal-length slices.
#[inline]
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps a row-major buffer. Panics if the length is not rows*cols.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Mat::from_vec: buffer of {} for a {}x{} matrix",
            data.len(),
            rows,
            cols
        );
        Mat { rows, cols, data }
    }

    /// Copies equal-length row slices into a new matrix. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "Mat::from_rows: row {i} has {} cols, expected {cols}", r.len());
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Column sums as a vector of length `cols`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(1.0, self.row(r), &mut out);
        }
        out
    }

    /// Horizontal concatenation `[a | b]`; row counts must match.
    pub fn hconcat(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(
            a.rows, b.rows,
            "hconcat: row mismatch {} vs {}",
            a.rows, b.rows
        );
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for i in 0..a.rows {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Mat {
            rows: a.rows,
            cols,
            data,
        }
    }

    /// `a @ b` for `a: r x k`, `b: k x c`.
    pub fn matmul(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(
            a.cols, b.rows,
            "matmul: inner dims {} vs {}",
            a.cols, b.rows
        );
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            let arow = a.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                axpy(aik, b.row(k), orow);
            }
        }
        out
    }

    /// `a @ b^T` for `a: r x k`, `b: c x k`; each output entry is a row-row dot.
    pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(
            a.cols, b.cols,
            "matmul_nt: inner dims {} vs {}",
            a.cols, b.cols
        );
        let mut out = Mat::zeros(a.rows, b.rows);
        for i in 0..a.rows {
            let arow = a.row(i);
            let orow = out.row_mut(i);
            for j in 0..b.rows {
                orow[j] = dot(arow, b.row(j));
            }
        }
        out
    }

    /// `a^T @ b` for `a: k x r`, `b: k x c`; accumulated as rank-1 row updates.
    pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(
            a.rows, b.rows,
            "matmul_tn: inner dims {} vs {}",
            a.rows, b.rows
        );
        let mut out = Mat::zeros(a.cols, b.cols);
        for k in 0..a.rows {
            let arow = a.row(k);
            let brow = b.row(k);
            for (j, &akj) in arow.iter().enumerate() {
                axpy(akj, brow, out.row_mut(j));
            }
        }
        out
    }
}

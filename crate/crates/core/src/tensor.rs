//! Dense and CSR matrices and the two matrix products used throughout the
//! crate.
//!
//! Every product accumulates in `f64` in ascending column order and rounds
//! to `f32` once per output element. Because skipping an exact-zero term
//! never changes an `f64` running sum, the sparse product is bit-identical
//! to the dense product of the densified matrix.

use crate::error::{Error, Result};

/// Row-major 2-D matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise binary operation on two equally shaped matrices.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &r in indices {
            if r >= self.rows {
                return Err(Error::Shape(format!("row {r} out of {}", self.rows)));
            }
            data.extend_from_slice(self.row(r));
        }
        Self::new(indices.len(), self.cols, data)
    }

    /// Squared Frobenius norm, accumulated in `f64`.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }
}

/// Compressed sparse row matrix with values of type `T`.
///
/// Column indices are strictly increasing within each row. Stored zeros are
/// allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

pub type CsrMatrix = Csr<f32>;

impl<T> Csr<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        check_structure(rows, cols, &row_offsets, &col_indices)?;
        if values.len() != col_indices.len() {
            return Err(Error::Corrupt(format!(
                "{} values for {} column indices",
                values.len(),
                col_indices.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values stored in row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    /// Iterates `(row, col, &value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &T)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, v)| (r, c, v))
        })
    }

    /// Same sparsity structure, values transformed.
    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Csr<U> {
        Csr {
            rows: self.rows,
            cols: self.cols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn into_parts(self) -> (usize, usize, Vec<usize>, Vec<usize>, Vec<T>) {
        (
            self.rows,
            self.cols,
            self.row_offsets,
            self.col_indices,
            self.values,
        )
    }
}

impl CsrMatrix {
    /// Drops exact zeros.
    pub fn from_dense(w: &DenseMatrix) -> Self {
        let mut row_offsets = Vec::with_capacity(w.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..w.rows() {
            for (c, &v) in w.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        Self {
            rows: w.rows(),
            cols: w.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut data = vec![0.0f32; self.rows * self.cols];
        for (r, c, &v) in self.iter() {
            data[r * self.cols + c] = v;
        }
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_structure(
    rows: usize,
    cols: usize,
    row_offsets: &[usize],
    col_indices: &[usize],
) -> Result<()> {
    if row_offsets.len() != rows + 1 {
        return Err(Error::Corrupt(format!(
            "{} row offsets for {rows} rows",
            row_offsets.len()
        )));
    }
    if row_offsets[0] != 0 || row_offsets[rows] != col_indices.len() {
        return Err(Error::Corrupt(format!(
            "row offsets must span 0..{}, got {}..{}",
            col_indices.len(),
            row_offsets[0],
            row_offsets[rows]
        )));
    }
    if let Some(r) = row_offsets.windows(2).position(|w| w[0] > w[1]) {
        return Err(Error::Corrupt(format!("row offsets decrease at row {r}")));
    }
    for r in 0..rows {
        let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
        let row = &col_indices[lo..hi];
        if row.iter().any(|&c| c >= cols) {
            return Err(Error::Corrupt(format!(
                "column index out of bounds in row {r}"
            )));
        }
        if row.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corrupt(format!(
                "column indices not strictly increasing in row {r}"
            )));
        }
    }
    Ok(())
}

pub fn to_csr(w: &DenseMatrix) -> CsrMatrix {
    CsrMatrix::from_dense(w)
}

pub fn densify(s: &CsrMatrix) -> DenseMatrix {
    s.to_dense()
}

/// `x · wᵀ` for `x: t×h_in`, `w: h_out×h_in`.
pub fn matmul_dense(x: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "matmul_dense: input has {} columns, weight has {}",
            x.cols(),
            w.cols()
        )));
    }
    let mut out = Vec::with_capacity(x.rows() * w.rows());
    for p in 0..x.rows() {
        let xr = x.row(p);
        for q in 0..w.rows() {
            let mut acc = 0.0f64;
            for (&a, &b) in xr.iter().zip(w.row(q)) {
                acc += f64::from(a) * f64::from(b);
            }
            out.push(acc as f32);
        }
    }
    DenseMatrix::new(x.rows(), w.rows(), out)
}

/// `x · sᵀ` for a CSR weight `s: h_out×h_in`.
pub fn matmul_sparse(x: &DenseMatrix, s: &CsrMatrix) -> Result<DenseMatrix> {
    if x.cols() != s.cols() {
        return Err(Error::Shape(format!(
            "matmul_sparse: input has {} columns, weight has {}",
            x.cols(),
            s.cols()
        )));
    }
    let mut out = Vec::with_capacity(x.rows() * s.rows());
    for p in 0..x.rows() {
        let xr = x.row(p);
        for q in 0..s.rows() {
            let (cols, vals) = s.row(q);
            let mut acc = 0.0f64;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += f64::from(xr[c]) * f64::from(v);
            }
            out.push(acc as f32);
        }
    }
    DenseMatrix::new(x.rows(), s.rows(), out)
}

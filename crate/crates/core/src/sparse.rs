//! Sparse and dense symmetric kernels.
//!
//! [`SparseSymmetric`] stores both triangles in compressed sparse column
//! layout. Because the matrix is symmetric, column `i` doubles as row `i`, so
//! the product `A·x` is computed as independent per-row gathers with a fixed
//! summation order (bit-identical with or without the `parallel` feature).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Largest dimension the dense Cholesky path accepts.
pub const DENSE_CAPACITY: usize = 4096;

/// Symmetric matrix in compressed sparse column layout, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds from raw CSC arrays, checking layout and numerical symmetry.
    pub fn from_csc(dim: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
        }
        if col_ptr.len() != dim + 1 {
            return Err(Error::DimensionMismatch { expected: dim + 1, found: col_ptr.len() });
        }
        if row_idx.len() != values.len() || col_ptr[dim] != values.len() || col_ptr[0] != 0 {
            return Err(Error::InvalidMatrix("column pointers do not match the stored entries".into()));
        }
        if col_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidMatrix("column pointers must be non-decreasing".into()));
        }
        if row_idx.iter().any(|&r| r >= dim) {
            return Err(Error::InvalidMatrix("row index out of range".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let m = SparseSymmetric { dim, col_ptr, row_idx, values };
        for j in 0..dim {
            for (i, v) in m.column(j) {
                if m.get(j, i) != v {
                    return Err(Error::InvalidMatrix("matrix is not symmetric".into()));
                }
            }
        }
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        SparseSymmetric { dim, col_ptr: (0..=dim).collect(), row_idx: (0..dim).collect(), values: vec![1.0; dim] }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        SparseSymmetric { dim, col_ptr: (0..=dim).collect(), row_idx: (0..dim).collect(), values: diag.to_vec() }
    }

    /// Builds from a dense row-major matrix, dropping exact zeros.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: dense.len() });
        }
        let mut b = TripletBuilder::new(dim);
        for i in 0..dim {
            for j in 0..dim {
                let v = dense[i * dim + j];
                if v != 0.0 {
                    b.push(i, j, v);
                }
            }
        }
        b.build()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates the stored `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()].binary_search(&i).ok().map(|k| r.start + k)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `A·x`
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.dim];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    /// `y ← A·x`
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: y.len() });
        }
        let row = |i: usize| -> f64 {
            let (s, e) = (self.col_ptr[i], self.col_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.row_idx[k]];
            }
            acc
        };
        #[cfg(feature = "parallel")]
        if self.dim >= PAR_MIN_DIM {
            use rayon::prelude::*;
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
            return Ok(());
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = row(i);
        }
        Ok(())
    }

    /// Squared 2-norm of every row.
    pub fn row_norms_sq(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.column(i).map(|(_, v)| v * v).sum()).collect()
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut d = vec![0.0; n * n];
        for j in 0..n {
            for (i, v) in self.column(j) {
                d[i * n + j] = v;
            }
        }
        d
    }

    /// Appends every stored entry to a builder (used to extend a matrix).
    pub fn extend_builder(&self, b: &mut TripletBuilder) {
        for j in 0..self.dim {
            for (i, v) in self.column(j) {
                b.push(i, j, v);
            }
        }
    }
}

#[cfg(feature = "parallel")]
const PAR_MIN_DIM: usize = 8192;

/// Accumulates `(row, col, value)` triplets; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(dim: usize) -> Self {
        TripletBuilder { dim, entries: Vec::new() }
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        TripletBuilder { dim, entries: Vec::with_capacity(cap) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `v` at `(i, j)` only.
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.entries.push((i, j, v));
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn push_sym(&mut self, i: usize, j: usize, v: f64) {
        self.entries.push((i, j, v));
        if i != j {
            self.entries.push((j, i, v));
        }
    }

    pub fn build(mut self) -> Result<SparseSymmetric> {
        let n = self.dim;
        if let Some(&(i, j, _)) = self.entries.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::InvalidArgument(alloc::format!("triplet ({i}, {j}) outside dimension {n}")));
        }
        self.entries.sort_unstable_by_key(|e| (e.1, e.0));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut mag: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                *mag.last_mut().unwrap() += v.abs();
            } else {
                row_idx.push(i);
                values.push(v);
                mag.push(v.abs());
                col_ptr[j + 1] += 1;
                last = Some((i, j));
            }
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        // Summation order can differ between (i, j) and (j, i); mirror the
        // upper triangle onto the lower one when they agree to rounding of
        // the summed magnitudes.
        let mut m = SparseSymmetric { dim: n, col_ptr, row_idx, values };
        for j in 0..n {
            for k in m.col_ptr[j]..m.col_ptr[j + 1] {
                let i = m.row_idx[k];
                if i <= j {
                    continue;
                }
                let Some(ku) = m.position(j, i) else { continue };
                let (upper, lower) = (m.values[ku], m.values[k]);
                if (upper - lower).abs() <= 1e-12 * mag[ku].max(mag[k]) {
                    m.values[k] = upper;
                }
            }
        }
        SparseSymmetric::from_csc(n, m.col_ptr, m.row_idx, m.values)
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymmetric {
    dim: usize,
    values: Vec<f64>,
}

impl DenseSymmetric {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: values.len() });
        }
        let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in 0..i {
                if (values[i * dim + j] - values[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidMatrix("dense matrix is not symmetric".into()));
                }
            }
        }
        Ok(DenseSymmetric { dim, values })
    }

    pub fn zeros(dim: usize) -> Self {
        DenseSymmetric { dim, values: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    /// Sets `(i, j)` and `(j, i)`.
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.dim + j] = v;
        self.values[j * self.dim + i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok((0..self.dim).map(|i| crate::math::dot(self.row(i), x)).collect())
    }
}

/// Dense Cholesky factor `A = L·Lᵀ`; `L` is stored row-major in full.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal of `L`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.lower[i * self.dim + i]).collect()
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Solves `L·y = b` in place. Leading zeros of `b` are skipped.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        let start = b.iter().position(|v| *v != 0.0).unwrap_or(n);
        for i in start..n {
            let row = &self.lower[i * n + start..i * n + i];
            let s = b[i] - crate::math::dot(row, &b[start..i]);
            b[i] = s / self.l(i, i);
        }
    }

    /// Solves `Lᵀ·x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let xi = y[i] / self.l(i, i);
            y[i] = xi;
            // column i of Lᵀ above the diagonal is row i of L
            let row = &self.lower[i * n..i * n + i];
            for (yk, lik) in y[..i].iter_mut().zip(row) {
                *yk -= lik * xi;
            }
        }
    }
}

/// Dense Cholesky of a sparse SPD matrix (densified first).
pub fn factor_spd(a: &SparseSymmetric) -> Result<SpdFactor> {
    if a.dim() > DENSE_CAPACITY {
        return Err(Error::CapacityExceeded { dim: a.dim(), limit: DENSE_CAPACITY });
    }
    factor_dense(a.dim(), a.to_dense())
}

/// Dense Cholesky of a row-major SPD matrix; consumes the storage.
pub fn factor_dense(n: usize, mut m: Vec<f64>) -> Result<SpdFactor> {
    if m.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, found: m.len() });
    }
    if n > DENSE_CAPACITY {
        return Err(Error::CapacityExceeded { dim: n, limit: DENSE_CAPACITY });
    }
    for j in 0..n {
        let (row_j, below) = m[j * n..].split_at_mut(n);
        let d = row_j[j] - crate::math::dot(&row_j[..j], &row_j[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = sqrt(d);
        row_j[j] = ljj;
        for v in row_j[j + 1..].iter_mut() {
            *v = 0.0;
        }
        for row_i in below.chunks_exact_mut(n) {
            let s = row_i[j] - crate::math::dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / ljj;
        }
    }
    Ok(SpdFactor { dim: n, lower: m })
}

/// Solves `A·x = b` with a factor of `A`.
pub fn solve_with(f: &SpdFactor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != f.dim {
        return Err(Error::DimensionMismatch { expected: f.dim, found: b.len() });
    }
    let mut x = b.to_vec();
    f.forward_in_place(&mut x);
    f.backward_in_place(&mut x);
    Ok(x)
}

/// `spmv` as a free function.
pub fn spmv(a: &SparseSymmetric, x: &[f64]) -> Result<Vec<f64>> {
    a.spmv(x)
}

/// `row_norms_sq` as a free function.
pub fn row_norms_sq(a: &SparseSymmetric) -> Vec<f64> {
    a.row_norms_sq()
}

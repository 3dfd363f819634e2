//! Compressed sparse row matrices.
//!
//! Only the handful of kernels the Jacobian machinery needs: products with
//! vectors (and the transpose), sparse-sparse products and linear
//! combinations. Column indices inside a row are kept sorted and unique.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    data: Vec<f64>,
}

/// Accumulates rows with possibly repeated columns and emits a [`CsrMatrix`].
pub struct CsrBuilder {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    data: Vec<f64>,
    acc: Vec<f64>,
    mark: Vec<bool>,
    touched: Vec<u32>,
}

impl CsrBuilder {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            data: Vec::new(),
            acc: vec![0.0; n_cols],
            mark: vec![false; n_cols],
            touched: Vec::new(),
        }
    }

    pub fn with_capacity(n_cols: usize, n_rows: usize, nnz: usize) -> Self {
        let mut b = Self::new(n_cols);
        b.indptr.reserve(n_rows);
        b.indices.reserve(nnz);
        b.data.reserve(nnz);
        b
    }

    /// Adds `value` at `col` of the row under construction.
    #[inline]
    pub fn add(&mut self, col: usize, value: f64) {
        if !self.mark[col] {
            self.mark[col] = true;
            self.touched.push(col as u32);
        }
        self.acc[col] += value;
    }

    /// Adds `alpha * row` of `m` to the row under construction.
    #[inline]
    pub fn add_row_of(&mut self, m: &CsrMatrix, row: usize, alpha: f64) {
        let (cols, vals) = m.row(row);
        for (&c, &v) in cols.iter().zip(vals) {
            self.add(c as usize, alpha * v);
        }
    }

    pub fn finish_row(&mut self) {
        self.touched.sort_unstable();
        for &c in &self.touched {
            let c = c as usize;
            self.indices.push(c as u32);
            self.data.push(self.acc[c]);
            self.acc[c] = 0.0;
            self.mark[c] = false;
        }
        self.touched.clear();
        self.indptr.push(self.indices.len());
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix {
            n_rows: self.indptr.len() - 1,
            n_cols: self.n_cols,
            indptr: self.indptr,
            indices: self.indices,
            data: self.data,
        }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds from raw parts, validating the layout.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let bad = |r: &str| Err(Error::InvalidParameter(format!("csr layout: {r}")));
        if indptr.len() != n_rows + 1 || indptr[0] != 0 {
            return bad("indptr length");
        }
        if indices.len() != data.len() || *indptr.last().unwrap() != indices.len() {
            return bad("nnz");
        }
        for r in 0..n_rows {
            if indptr[r] > indptr[r + 1] {
                return bad("indptr not monotone");
            }
            let cols = &indices[indptr[r]..indptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c as usize >= n_cols) {
                return bad("columns unsorted or out of range");
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            data,
        })
    }

    /// Dense-to-sparse conversion, dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut b = CsrBuilder::new(m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    b.add(j, v);
                }
            }
            b.finish_row();
        }
        b.build()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn max_row_nnz(&self) -> usize {
        self.indptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.data[k] * x[self.indices[k] as usize];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = A^T x`
    pub fn tmul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            for k in a..b {
                y[self.indices[k] as usize] += self.data[k] * xi;
            }
        }
    }

    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        self.tmul_vec_into(x, &mut y);
        y
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows, "matmul shape mismatch");
        let mut b = CsrBuilder::with_capacity(other.n_cols, self.n_rows, self.nnz().max(other.nnz()));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                b.add_row_of(other, k as usize, a);
            }
            b.finish_row();
        }
        b.build()
    }

    /// `sum_i alpha_i * M_i` over matrices of equal shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let (n_rows, n_cols) = terms
            .first()
            .map(|(_, m)| (m.n_rows, m.n_cols))
            .expect("at least one term");
        let mut b = CsrBuilder::new(n_cols);
        for i in 0..n_rows {
            for &(alpha, m) in terms {
                debug_assert_eq!((m.n_rows, m.n_cols), (n_rows, n_cols));
                b.add_row_of(m, i, alpha);
            }
            b.finish_row();
        }
        b.build()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c as usize];
                indices[slot] = i as u32;
                data[slot] = v;
                next[c as usize] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            data,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c as usize)] = v;
            }
        }
        m
    }
}

//! Compressed sparse row matrices with fixed element patterns, and a thin
//! wrapper around the sparse LU of `faer` that caches the symbolic
//! analysis for repeated factorizations on one pattern.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::MatMut;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix whose pattern is the union of the dense blocks
    /// `rows(e) x cols(e)` over all elements `e`.
    pub fn from_blocks<R, C>(nrows: usize, ncols: usize, blocks: impl Iterator<Item = (R, C)>) -> Self
    where
        R: AsRef<[usize]>,
        C: AsRef<[usize]>,
    {
        let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (r, c) in blocks {
            for &i in r.as_ref() {
                per_row[i].extend_from_slice(c.as_ref());
            }
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in &mut per_row {
            cols.sort_unstable();
            cols.dedup();
            debug_assert!(cols.last().is_none_or(|&c| c < ncols));
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Builds from triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            per_row[i].push((j, v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in &mut per_row {
            row.sort_by_key(|e| e.0);
            for &(j, v) in row.iter() {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e].binary_search(&j).ok().map(|k| s + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Iterates `(row, col, value)` over stored entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    /// Same pattern, all values zero.
    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`; both must share the pattern.
    pub fn axpy(&mut self, alpha: f64, other: &CsrMatrix) {
        assert!(self.same_pattern(other), "axpy on different sparsity patterns");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        y
    }

    /// `yᵀ A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        assert_eq!(y.len(), self.nrows);
        let mut s = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let mut r = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.values[k] * x[self.col_idx[k]];
            }
            s += yi * r;
        }
        s
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<_> = self.entries().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Largest absolute asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.entries()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// Restriction to the given rows and columns (index lists in the new
    /// order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut t = Vec::new();
        for (ni, &i) in rows.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let nj = col_map[self.col_idx[k]];
                if nj != usize::MAX {
                    t.push((ni, nj, self.values[k]));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), &t)
    }
}

/// Fixed square sparsity pattern given as a list of `(row, col)` slots
/// (duplicates allowed and summed), with a cached symbolic LU analysis.
#[derive(Clone, Debug)]
pub struct FactorPattern {
    n: usize,
    slots: usize,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    symbolic_lu: SymbolicLu<usize>,
}

impl FactorPattern {
    pub fn new(n: usize, slots: &[(usize, usize)]) -> Result<Self> {
        let pairs: Vec<Pair<usize, usize>> = slots.iter().map(|&(r, c)| Pair::new(r, c)).collect();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| Error::SingularSystem(format!("invalid sparsity pattern: {e:?}")))?;
        let symbolic_lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::SingularSystem(format!("symbolic factorization failed: {e:?}")))?;
        Ok(FactorPattern {
            n,
            slots: slots.len(),
            symbolic,
            argsort,
            symbolic_lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_slots(&self) -> usize {
        self.slots
    }

    /// Numerical LU with values given slot by slot.
    pub fn factor(&self, values: &[f64]) -> Result<SparseLu> {
        assert_eq!(values.len(), self.slots);
        let mat = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, values)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(self.symbolic_lu.clone(), mat.as_ref())
            .map_err(|e| Error::SingularSystem(format!("numerical factorization failed: {e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }
}

/// Sparse LU factors of a square matrix.
#[derive(Clone, Debug)]
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    /// Factorizes a general square CSR matrix.
    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let slots: Vec<_> = a.entries().map(|(i, j, _)| (i, j)).collect();
        FactorPattern::new(a.nrows(), &slots)?.factor(a.values())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::SingularSystem("non-finite solution (numerically singular matrix)".into()))
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(b, n, 1));
        self.check(b)
    }

    pub fn solve_transpose_in_place(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(b, n, 1));
        self.check(b)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

//! Compressed sparse rows plus thin wrappers over faer's sparse Cholesky and LU.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-compressed matrix; explicit zeros are kept so patterns stay stable.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Csr {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    /// Builds the matrix, summing duplicate entries.
    pub fn from_triplets(nrows: usize, ncols: usize, trip: &[(usize, usize, f64)]) -> Csr {
        let mut count = vec![0usize; nrows + 1];
        for &(i, _, _) in trip {
            count[i + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut cols = vec![0usize; trip.len()];
        let mut vals = vec![0.0; trip.len()];
        let mut next = count.clone();
        for &(i, j, v) in trip {
            debug_assert!(i < nrows && j < ncols);
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut data = Vec::with_capacity(trip.len());
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((count[i]..count[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_unstable_by_key(|e| e.0);
            for &(j, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == j {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                }
            }
            indptr[i + 1] = indices.len();
        }
        Csr { nrows, ncols, indptr, indices, data }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let s = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match s.binary_search(&j) {
            Ok(k) => self.data[self.indptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// Position of (i, j) in `data`, if present in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let s = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        s.binary_search(&j).ok().map(|k| self.indptr[i] + k)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_add(x, 1.0, &mut y);
        y
    }

    /// y += alpha A x
    pub fn matvec_add(&self, x: &[f64], alpha: f64, y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            *yi += alpha * s;
        }
    }

    /// Aᵀ x
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.data[k] * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push((j, i, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// a A + b B (patterns merged).
    pub fn lin_comb(a: f64, x: &Csr, b: f64, y: &Csr) -> Csr {
        assert_eq!((x.nrows, x.ncols), (y.nrows, y.ncols));
        let mut t = Vec::with_capacity(x.nnz() + y.nnz());
        for i in 0..x.nrows {
            t.extend(x.row(i).map(|(j, v)| (i, j, a * v)));
            t.extend(y.row(i).map(|(j, v)| (i, j, b * v)));
        }
        Csr::from_triplets(x.nrows, x.ncols, &t)
    }

    /// Keeps the rows and columns whose map entry is `Some(new index)`.
    pub fn select(&self, rows: &[Option<usize>], nr: usize, cols: &[Option<usize>], nc: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..self.nrows {
            let Some(ri) = rows[i] else { continue };
            for (j, v) in self.row(i) {
                if let Some(cj) = cols[j] {
                    t.push((ri, cj, v));
                }
            }
        }
        Csr::from_triplets(nr, nc, &t)
    }

    /// Zero-padded copy with a larger shape.
    pub fn padded(&self, nrows: usize, ncols: usize) -> Csr {
        assert!(nrows >= self.nrows && ncols >= self.ncols);
        let mut out = self.clone();
        out.nrows = nrows;
        out.ncols = ncols;
        out.indptr.resize(nrows + 1, self.nnz());
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::Solver(format!("sparse matrix creation: {e:?}")))
    }

    fn same_pattern(&self, o: &Csr) -> bool {
        self.nrows == o.nrows && self.ncols == o.ncols && self.indptr == o.indptr && self.indices == o.indices
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solve_with<S: Solve<f64>>(f: &S, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    let n = x.len();
    f.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
    x
}

/// Sparse LLᵀ of a symmetric positive definite matrix, reusing the symbolic
/// analysis while the pattern is unchanged.
#[derive(Debug)]
pub struct Cholesky {
    pattern: Csr,
    symbolic: SymbolicLlt<usize>,
    llt: Option<Llt<usize, f64>>,
}

impl Cholesky {
    pub fn new(a: &Csr) -> Result<Cholesky> {
        if a.nrows != a.ncols {
            return Err(Error::Solver("Cholesky of a non-square matrix".into()));
        }
        let fa = a.to_faer()?;
        let symbolic = SymbolicLlt::try_new(fa.symbolic(), Side::Lower)
            .map_err(|e| Error::Solver(format!("symbolic Cholesky: {e:?}")))?;
        let mut c = Cholesky { pattern: a.clone(), symbolic, llt: None };
        c.numeric(&fa)?;
        Ok(c)
    }

    fn numeric(&mut self, fa: &SparseColMat<usize, f64>) -> Result<()> {
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), fa.as_ref(), Side::Lower)
            .map_err(|e| Error::Solver(format!("matrix is not positive definite: {e:?}")))?;
        self.llt = Some(llt);
        Ok(())
    }

    /// Refactors a matrix, reusing the analysis when the pattern matches.
    pub fn refactor(&mut self, a: &Csr) -> Result<()> {
        if !self.pattern.same_pattern(a) {
            *self = Cholesky::new(a)?;
            return Ok(());
        }
        let fa = a.to_faer()?;
        self.numeric(&fa)
    }

    pub fn dim(&self) -> usize {
        self.pattern.nrows
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim());
        if b.is_empty() {
            return Vec::new();
        }
        solve_with(self.llt.as_ref().expect("factorized"), b)
    }
}

/// Sparse LU for general (here: symmetric indefinite) systems.
#[derive(Debug)]
pub struct SparseLu {
    n: usize,
    lu: Option<Lu<usize, f64>>,
}

impl SparseLu {
    pub fn new(a: &Csr) -> Result<SparseLu> {
        if a.nrows != a.ncols {
            return Err(Error::Solver("LU of a non-square matrix".into()));
        }
        if a.nrows == 0 {
            return Ok(SparseLu { n: 0, lu: None });
        }
        let fa = a.to_faer()?;
        let symbolic = SymbolicLu::try_new(fa.symbolic())
            .map_err(|e| Error::Solver(format!("symbolic LU: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic, fa.as_ref())
            .map_err(|e| Error::Solver(format!("singular matrix: {e:?}")))?;
        Ok(SparseLu { n: a.nrows, lu: Some(lu) })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        match &self.lu {
            None => Vec::new(),
            Some(lu) => solve_with(lu, b),
        }
    }
}

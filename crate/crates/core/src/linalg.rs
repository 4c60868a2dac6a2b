//! Sparse storage for the assembled operators and a banded LU solver.
//!
//! Structured-grid discretizations with natural node ordering produce
//! matrices with a narrow band, so a partial-pivoting band factorization
//! (the LAPACK `gbtrf`/`gbtrs` scheme) is both exact and cheap here.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-compressed sparsity pattern shared by several value arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePattern {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl SparsePattern {
    /// Builds a pattern from (row, col) pairs; duplicates are merged.
    pub fn from_entries(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (i, j) in entries {
            debug_assert!(i < nrows && j < ncols);
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Scatters triplets onto this pattern, summing duplicates.
    ///
    /// Panics if a triplet falls outside the pattern.
    pub fn values_from(&self, triplets: &[(usize, usize, f64)]) -> Vec<f64> {
        let mut values = vec![0.0; self.nnz()];
        for &(i, j, v) in triplets {
            let k = self
                .position(i, j)
                .unwrap_or_else(|| panic!("entry ({i}, {j}) not in pattern"));
            values[k] += v;
        }
        values
    }

    /// Lower and upper bandwidth of the pattern.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for &j in &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]] {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// A CSR matrix whose pattern may be shared with other matrices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub pattern: Arc<SparsePattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let pattern = Arc::new(SparsePattern::from_entries(
            nrows,
            ncols,
            triplets.iter().map(|&(i, j, _)| (i, j)),
        ));
        let values = pattern.values_from(triplets);
        Self { pattern, values }
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.pattern;
        assert_eq!(x.len(), p.ncols);
        DVector::from_fn(p.nrows, |i, _| {
            (p.row_ptr[i]..p.row_ptr[i + 1])
                .map(|k| self.values[k] * x[p.col_idx[k]])
                .sum()
        })
    }

    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), x.ncols());
        for c in 0..x.ncols() {
            let col = self.mul_vec(&x.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = &self.pattern;
        let mut m = DMatrix::zeros(p.nrows, p.ncols);
        for i in 0..p.nrows {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                m[(i, p.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    pub fn transpose(&self) -> CsrMatrix {
        let p = &self.pattern;
        let mut triplets = Vec::with_capacity(p.nnz());
        for i in 0..p.nrows {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                triplets.push((p.col_idx[k], i, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(p.ncols, p.nrows, &triplets)
    }
}

/// Partial-pivoting LU factorization of a square band matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    // Row i stores columns [i - kl, i - kl + width).
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(matrix: &CsrMatrix) -> Result<Self> {
        let (kl, ku) = matrix.pattern.bandwidth();
        Self::factor_with_bandwidth(matrix, kl, ku)
    }

    pub fn factor_with_bandwidth(matrix: &CsrMatrix, kl: usize, ku: usize) -> Result<Self> {
        let p = &matrix.pattern;
        assert_eq!(p.nrows, p.ncols, "band LU needs a square matrix");
        let n = p.nrows;
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                *lu.at_mut(i, j) += matrix.values[k];
            }
        }
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl < i + self.width);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.index(i, j);
        &mut self.data[k]
    }

    fn eliminate(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut piv = k;
            let mut best = self.at(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.at(i, k).abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularSystem { column: k });
            }
            self.pivots[k] = piv;
            if piv != k {
                for j in k..=last_col {
                    let a = self.index(k, j);
                    let b = self.index(piv, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.at(k, k);
            for i in k + 1..=last_row {
                let l = self.at(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at_mut(i, k) = l;
                for j in k + 1..=last_col {
                    let u = self.at(k, j);
                    *self.at_mut(i, j) -= l * u;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        let mut x = rhs.clone();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap_rows(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.at(i, k) * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.at(k, j) * x[j];
            }
            x[k] = s / self.at(k, k);
        }
        x
    }
}

/// Largest singular value of a dense matrix, via the smaller Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let eig = gram.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Smallest singular value of a square sparse matrix by inverse power
/// iteration on `(A^T A)^{-1}`, using band factorizations of `A` and `A^T`.
pub fn smallest_singular_value(matrix: &CsrMatrix, iterations: usize) -> Result<f64> {
    let n = matrix.nrows();
    let lu = BandedLu::factor(matrix)?;
    let lut = BandedLu::factor(&matrix.transpose())?;
    // Deterministic, non-degenerate start vector.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let y = lut.solve(&x);
        let z = lu.solve(&y);
        let norm = z.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::SingularSystem { column: 0 });
        }
        let next = norm;
        x = z / norm;
        if (next - lambda).abs() <= 1e-10 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(1.0 / lambda.sqrt())
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

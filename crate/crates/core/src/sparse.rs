//! Compressed sparse row matrices sized for region graphs.
//!
//! The graphs here have a few thousand rows and tens of nonzeros per row, so
//! a small purpose-built CSR type with the handful of operations the solver
//! needs (matvec, transpose, product, sum) beats pulling in a general sparse
//! algebra dependency.

use crate::scalar::Real;
use num_traits::Float;

/// Sparse matrix in compressed sparse row form.
///
/// Column indices within each row are strictly increasing; explicit zeros are
/// allowed but never required.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<F> {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<F>,
}

impl<F: Real> CsrMatrix<F> {
    /// Builds from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, F)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, F)>> = vec![Vec::new(); n_rows];
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    let slot = values.last_mut().unwrap();
                    *slot = *slot + v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![F::one(); n],
        }
    }

    /// Diagonal matrix from its entries.
    pub fn from_diagonal(diag: &[F]) -> Self {
        let n = diag.len();
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as (column, value) pairs in column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => F::zero(),
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[F], y: &mut [F]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = F::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc = acc + self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols];
        for &c in &self.indices {
            counts[c] += 1;
        }
        let mut indptr = Vec::with_capacity(self.n_cols + 1);
        indptr.push(0);
        for c in 0..self.n_cols {
            indptr.push(indptr[c] + counts[c]);
        }
        let mut cursor = indptr[..self.n_cols].to_vec();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![F::zero(); self.nnz()];
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let slot = cursor[c];
                indices[slot] = r;
                values[slot] = self.values[k];
                cursor[c] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    /// C = A B, gather-scatter over a dense accumulator row.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n_cols, other.n_rows, "inner dimensions must agree");
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut acc = vec![F::zero(); other.n_cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.values[k];
                let mid = self.indices[k];
                for k2 in other.indptr[mid]..other.indptr[mid + 1] {
                    let c = other.indices[k2];
                    if acc[c] == F::zero() && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c] = acc[c] + a * other.values[k2];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                indices.push(c);
                values.push(acc[c]);
                acc[c] = F::zero();
            }
            touched.clear();
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            indptr,
            indices,
            values,
        }
    }

    /// A + s B elementwise.
    pub fn add_scaled(&self, other: &Self, s: F) -> Self {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.n_rows {
            let (mut i, mut j) = (self.indptr[r], other.indptr[r]);
            let (ei, ej) = (self.indptr[r + 1], other.indptr[r + 1]);
            while i < ei || j < ej {
                let ci = if i < ei { self.indices[i] } else { usize::MAX };
                let cj = if j < ej { other.indices[j] } else { usize::MAX };
                if ci < cj {
                    indices.push(ci);
                    values.push(self.values[i]);
                    i += 1;
                } else if cj < ci {
                    indices.push(cj);
                    values.push(s * other.values[j]);
                    j += 1;
                } else {
                    indices.push(ci);
                    values.push(self.values[i] + s * other.values[j]);
                    i += 1;
                    j += 1;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn diagonal(&self) -> Vec<F> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Largest absolute row sum; cheap operator norm bound.
    pub fn inf_norm(&self) -> F {
        let mut best = F::zero();
        for r in 0..self.n_rows {
            let mut acc = F::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc = acc + Float::abs(self.values[k]);
            }
            if acc > best {
                best = acc;
            }
        }
        best
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<F> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Maximum absolute asymmetry |A - A^T|; zero for exactly symmetric data.
    pub fn symmetry_gap(&self) -> F {
        let mut worst = F::zero();
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                let d = Float::abs(v - self.get(c, r));
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

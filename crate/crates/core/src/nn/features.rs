//! Row-addressable input matrices.
//!
//! Binary drug features are mostly zero, so the first network layer can skip
//! zero entries. [`Features`] stores a matrix either densely or as compressed
//! sparse rows, chosen once from the observed density.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::{Error, Result, Scalar};

/// Matrices at or below this fraction of nonzeros are stored sparse.
pub const SPARSE_DENSITY: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Csr<T> {
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr<T> {
    Dense(Array2<T>),
    Sparse(Csr<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features<T> {
    nrows: usize,
    ncols: usize,
    repr: Repr<T>,
}

/// A mini-batch view over selected rows of a [`Features`] matrix.
pub(crate) enum BatchRows<'a, T> {
    Dense(ArrayView2<'a, T>),
    Owned(Array2<T>),
    Sparse { csr: &'a Csr<T>, rows: &'a [usize] },
}

impl<T: Scalar> BatchRows<'_, T> {
    pub fn nrows(&self) -> usize {
        match self {
            BatchRows::Dense(v) => v.nrows(),
            BatchRows::Owned(m) => m.nrows(),
            BatchRows::Sparse { rows, .. } => rows.len(),
        }
    }

    /// Calls `f(batch_row, col, value)` for every nonzero entry.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, T)) {
        match self {
            BatchRows::Sparse { csr, rows } => {
                for (b, &r) in rows.iter().enumerate() {
                    let (idx, vals) = csr.row(r);
                    for (&j, &v) in idx.iter().zip(vals) {
                        f(b, j, v);
                    }
                }
            }
            _ => {
                let view = self.dense_view().expect("dense batch");
                for (b, row) in view.outer_iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        if v != T::zero() {
                            f(b, j, v);
                        }
                    }
                }
            }
        }
    }

    pub fn dense_view(&self) -> Option<ArrayView2<'_, T>> {
        match self {
            BatchRows::Dense(v) => Some(v.view()),
            BatchRows::Owned(m) => Some(m.view()),
            BatchRows::Sparse { .. } => None,
        }
    }
}

impl<T: Scalar> Features<T> {
    /// Wraps a dense matrix, switching to sparse storage when it is sparse enough.
    pub fn from_dense(matrix: Array2<T>) -> Self {
        let total = matrix.len();
        let nnz = matrix.iter().filter(|v| **v != T::zero()).count();
        if total > 0 && (nnz as f64) <= SPARSE_DENSITY * total as f64 {
            Self::sparse_from_dense(&matrix.view())
        } else {
            Self::dense(matrix)
        }
    }

    /// Always stores densely.
    pub fn dense(matrix: Array2<T>) -> Self {
        Features {
            nrows: matrix.nrows(),
            ncols: matrix.ncols(),
            repr: Repr::Dense(matrix),
        }
    }

    /// Always stores as compressed sparse rows.
    pub fn sparse_from_dense(matrix: &ArrayView2<'_, T>) -> Self {
        let mut indptr = Vec::with_capacity(matrix.nrows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in matrix.outer_iter() {
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Features {
            nrows: matrix.nrows(),
            ncols: matrix.ncols(),
            repr: Repr::Sparse(Csr {
                indptr,
                indices,
                values,
            }),
        }
    }

    /// Builds sparse features from per-row lists of active (value 1) columns.
    pub fn from_binary_rows(ncols: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in rows {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if let Some(&last) = sorted.last() {
                if last >= ncols {
                    return Err(Error::dim("binary feature column", ncols, last + 1));
                }
            }
            indices.extend(sorted);
            indptr.push(indices.len());
        }
        let values = vec![T::one(); indices.len()];
        Ok(Features {
            nrows: rows.len(),
            ncols,
            repr: Repr::Sparse(Csr {
                indptr,
                indices,
                values,
            }),
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, Repr::Sparse(_))
    }

    pub fn nnz(&self) -> usize {
        match &self.repr {
            Repr::Dense(m) => m.iter().filter(|v| **v != T::zero()).count(),
            Repr::Sparse(c) => c.indices.len(),
        }
    }

    pub fn to_dense(&self) -> Array2<T> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Sparse(c) => {
                let mut out = Array2::zeros((self.nrows, self.ncols));
                for r in 0..self.nrows {
                    let (idx, vals) = c.row(r);
                    for (&j, &v) in idx.iter().zip(vals) {
                        out[[r, j]] = v;
                    }
                }
                out
            }
        }
    }

    /// Calls `f(col, value)` for each nonzero of row `r`, in column order.
    pub fn for_each_in_row(&self, r: usize, mut f: impl FnMut(usize, T)) {
        match &self.repr {
            Repr::Dense(m) => {
                for (j, &v) in m.row(r).iter().enumerate() {
                    if v != T::zero() {
                        f(j, v);
                    }
                }
            }
            Repr::Sparse(c) => {
                let (idx, vals) = c.row(r);
                for (&j, &v) in idx.iter().zip(vals) {
                    f(j, v);
                }
            }
        }
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        match &self.repr {
            Repr::Dense(m) => Features::dense(m.select(ndarray::Axis(0), rows)),
            Repr::Sparse(c) => {
                let mut indptr = Vec::with_capacity(rows.len() + 1);
                let mut indices = Vec::new();
                let mut values = Vec::new();
                indptr.push(0);
                for &r in rows {
                    let (idx, vals) = c.row(r);
                    indices.extend_from_slice(idx);
                    values.extend_from_slice(vals);
                    indptr.push(indices.len());
                }
                Features {
                    nrows: rows.len(),
                    ncols: self.ncols,
                    repr: Repr::Sparse(Csr {
                        indptr,
                        indices,
                        values,
                    }),
                }
            }
        }
    }

    /// Stacks several matrices with equal column counts, top to bottom.
    pub fn concat(parts: &[&Features<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("no feature matrices to concatenate".into()))?;
        let ncols = first.ncols;
        let mut rows: Vec<Vec<(usize, T)>> = Vec::new();
        for p in parts {
            if p.ncols != ncols {
                return Err(Error::dim("concatenated features", ncols, p.ncols));
            }
            for r in 0..p.nrows {
                let mut row = Vec::new();
                p.for_each_in_row(r, |j, v| row.push((j, v)));
                rows.push(row);
            }
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(j, v) in row {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        let sparse = Features {
            nrows: rows.len(),
            ncols,
            repr: Repr::Sparse(Csr {
                indptr,
                indices,
                values,
            }),
        };
        let total = sparse.nrows * ncols;
        if total > 0 && (sparse.nnz() as f64) > SPARSE_DENSITY * total as f64 {
            Ok(Features::dense(sparse.to_dense()))
        } else {
            Ok(sparse)
        }
    }

    /// Masking noise: every nonzero entry is independently set to zero with
    /// probability `rate`. One uniform draw is consumed per nonzero entry in
    /// row-major order, so the dense and sparse storages give identical output
    /// for the same generator state.
    pub fn mask_nonzeros<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Self {
        match &self.repr {
            Repr::Dense(m) => {
                let mut out = m.clone();
                for v in out.iter_mut() {
                    if *v != T::zero() && rng.random::<f64>() < rate {
                        *v = T::zero();
                    }
                }
                Features::dense(out)
            }
            Repr::Sparse(c) => {
                let mut indptr = Vec::with_capacity(self.nrows + 1);
                let mut indices = Vec::with_capacity(c.indices.len());
                let mut values = Vec::with_capacity(c.values.len());
                indptr.push(0);
                for r in 0..self.nrows {
                    let (idx, vals) = c.row(r);
                    for (&j, &v) in idx.iter().zip(vals) {
                        if rng.random::<f64>() >= rate {
                            indices.push(j);
                            values.push(v);
                        }
                    }
                    indptr.push(indices.len());
                }
                Features {
                    nrows: self.nrows,
                    ncols: self.ncols,
                    repr: Repr::Sparse(Csr {
                        indptr,
                        indices,
                        values,
                    }),
                }
            }
        }
    }

    pub(crate) fn batch<'a>(&'a self, rows: &'a [usize]) -> BatchRows<'a, T> {
        match &self.repr {
            Repr::Dense(m) => {
                let contiguous = rows.windows(2).all(|w| w[1] == w[0] + 1);
                if contiguous && !rows.is_empty() {
                    BatchRows::Dense(m.slice(ndarray::s![rows[0]..rows[0] + rows.len(), ..]))
                } else {
                    BatchRows::Owned(m.select(ndarray::Axis(0), rows))
                }
            }
            Repr::Sparse(c) => BatchRows::Sparse { csr: c, rows },
        }
    }

    pub(crate) fn all_rows(&self) -> Vec<usize> {
        (0..self.nrows).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    #[test]
    fn storage_choice_follows_density() {
        let sparse = Features::from_dense(array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]]);
        assert!(sparse.is_sparse());
        let dense = Features::from_dense(array![[1.0, 1.0], [0.0, 1.0]]);
        assert!(!dense.is_sparse());
        assert_eq!(sparse.to_dense(), array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]]);
    }

    #[test]
    fn masking_agrees_across_storage() {
        let m = array![[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]];
        let a = Features::dense(m.clone()).mask_nonzeros(0.5, &mut seed::rng(3));
        let b = Features::<f64>::sparse_from_dense(&m.view()).mask_nonzeros(0.5, &mut seed::rng(3));
        assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn select_and_concat_preserve_rows() {
        let m = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let f = Features::<f64>::sparse_from_dense(&m.view());
        let picked = f.select_rows(&[2, 0]);
        assert_eq!(picked.to_dense(), array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        let joined = Features::concat(&[&picked, &f]).unwrap();
        assert_eq!(joined.nrows(), 5);
        assert_eq!(joined.to_dense().row(4), m.row(2));
    }

    #[test]
    fn binary_rows_reject_out_of_range_columns() {
        assert!(Features::<f64>::from_binary_rows(3, &[vec![0, 3]]).is_err());
        let f = Features::<f64>::from_binary_rows(3, &[vec![2, 0], vec![]]).unwrap();
        assert_eq!(f.to_dense(), array![[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
    }
}

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Non-negative integer observation matrix (cells × genes).
///
/// Whatever the input layout (dense rows or coordinate triplets), entries
/// are held as a row-major list of nonzero cells with explicit dimensions,
/// so every downstream computation sees the same canonical data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<u64>,
}

impl CountMatrix {
    /// Builds from a row-major dense buffer of length `n_rows * n_cols`.
    pub fn from_dense(n_rows: usize, n_cols: usize, data: &[u64]) -> Result<Self> {
        check_dims(n_rows, n_cols)?;
        if data.len() != n_rows * n_cols {
            return Err(Error::shape(
                format!("{} entries", n_rows * n_cols),
                format!("{} entries", data.len()),
            ));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in data.chunks(n_cols) {
            for (j, &x) in row.iter().enumerate() {
                if x > 0 {
                    col_idx.push(j);
                    values.push(x);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CountMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::shape(
                format!("{m} columns"),
                format!("{} columns", bad.len()),
            ));
        }
        let flat: Vec<u64> = rows.iter().flatten().copied().collect();
        Self::from_dense(n, m, &flat)
    }

    /// Builds from 0-based `(row, col, value)` triplets. Explicit zeros are
    /// dropped; duplicate coordinates are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, u64)],
    ) -> Result<Self> {
        check_dims(n_rows, n_cols)?;
        let mut entries: Vec<(usize, usize, u64)> = Vec::with_capacity(triplets.len());
        for &(i, j, x) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if x > 0 {
                entries.push((i, j, x));
            }
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1)
        {
            return Err(Error::InvalidInput(format!(
                "duplicate entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(i, _, _) in &entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CountMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        })
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

    pub fn get(&self, i: usize, j: usize) -> u64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0,
        }
    }

    /// Nonzero cells `(row, col, value)` in row-major order.
    pub fn iter_nonzero(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    /// Nonzero cells of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    /// Offset of row `i`'s first nonzero in the row-major nonzero list.
    pub fn row_offset(&self, i: usize) -> usize {
        self.row_ptr[i]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / (self.n_rows * self.n_cols) as f64
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cols];
        for (_, j, x) in self.iter_nonzero() {
            sums[j] += x as f64;
        }
        sums
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_rows as f64;
        self.column_sums().into_iter().map(|s| s / n).collect()
    }

    /// Number of nonzero cells per column.
    pub fn column_nonzeros(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_cols];
        for &j in &self.col_idx {
            counts[j] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.n_rows * self.n_cols];
        for (i, j, x) in self.iter_nonzero() {
            out[i * self.n_cols + j] = x;
        }
        out
    }

    pub fn to_f64_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, x) in self.iter_nonzero() {
            out[(i, j)] = x as f64;
        }
        out
    }

    /// Sub-matrix restricted to the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let mut remap = vec![usize::MAX; self.n_cols];
        for (new, &old) in cols.iter().enumerate() {
            if old >= self.n_cols {
                return Err(Error::InvalidInput(format!("column {old} out of range")));
            }
            remap[old] = new;
        }
        let triplets: Vec<_> = self
            .iter_nonzero()
            .filter(|&(_, j, _)| remap[j] != usize::MAX)
            .map(|(i, j, x)| (i, remap[j], x))
            .collect();
        Self::from_triplets(self.n_rows, cols.len(), &triplets)
    }
}

fn check_dims(n_rows: usize, n_cols: usize) -> Result<()> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::InvalidInput(format!(
            "count matrix must be at least 1x1, got {n_rows}x{n_cols}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dense_and_sparse_agree() {
        let dense = CountMatrix::from_rows(&[vec![0, 3, 0], vec![1, 0, 2]]).unwrap();
        let sparse =
            CountMatrix::from_triplets(2, 3, &[(1, 2, 2), (0, 1, 3), (1, 0, 1), (0, 0, 0)])
                .unwrap();
        assert_eq!(dense, sparse);
        assert_eq!(dense.nnz(), 3);
        assert_eq!(dense.get(1, 2), 2);
        assert_eq!(dense.get(0, 2), 0);
        assert_eq!(dense.column_nonzeros(), vec![1, 1, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CountMatrix::from_dense(0, 3, &[]).is_err());
        assert!(CountMatrix::from_dense(2, 2, &[1, 2, 3]).is_err());
        assert!(CountMatrix::from_triplets(2, 2, &[(0, 0, 1), (0, 0, 2)]).is_err());
        assert!(CountMatrix::from_triplets(2, 2, &[(2, 0, 1)]).is_err());
        assert!(CountMatrix::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn select_columns_keeps_order() {
        let x = CountMatrix::from_rows(&[vec![1, 2, 3], vec![4, 0, 6]]).unwrap();
        let sub = x.select_columns(&[2, 0]).unwrap();
        assert_eq!(sub.to_dense(), vec![3, 1, 6, 4]);
    }

    proptest! {
        #[test]
        fn dense_round_trip((n, m, data) in (1usize..6, 1usize..6).prop_flat_map(|(n, m)| {
            (Just(n), Just(m), prop::collection::vec(0u64..4, n * m))
        })) {
            let x = CountMatrix::from_dense(n, m, &data).unwrap();
            prop_assert_eq!(x.to_dense(), data.clone());
            let triplets: Vec<_> = x.iter_nonzero().collect();
            let y = CountMatrix::from_triplets(n, m, &triplets).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}

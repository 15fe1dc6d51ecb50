use crate::autodiff::Tensor;
use crate::error::{GlenError, Result};

/// Compressed sparse row matrix with sorted, duplicate-free columns per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validating constructor from raw CSR arrays.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let invalid = |msg: &str| Err(GlenError::Invalid(format!("CSR: {msg}")));
        if row_offsets.len() != n_rows + 1 {
            return invalid("row_offsets must have n_rows + 1 entries");
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != col_indices.len() {
            return invalid("row_offsets must start at 0 and end at nnz");
        }
        if col_indices.len() != values.len() {
            return invalid("col_indices and values differ in length");
        }
        for r in 0..n_rows {
            let (start, end) = (row_offsets[r], row_offsets[r + 1]);
            if start > end {
                return invalid("row_offsets must be nondecreasing");
            }
            let row = &col_indices[start..end];
            if row.iter().any(|&c| c >= n_cols) {
                return invalid("column index out of range");
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return invalid("columns within a row must be strictly increasing");
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n_rows || *c >= n_cols) {
            return Err(GlenError::Invalid(format!(
                "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
            )));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        SparseMatrix::new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: vec![],
            values: vec![],
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

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[range.clone()].binary_search(&c) {
            Ok(i) => self.values[range.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.n_rows, self.n_cols]);
        let n = self.n_cols;
        let vals = out.values_mut();
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                vals[r * n + c] = v;
            }
        }
        out
    }

    /// Sparse-dense product without recording a tape entry.
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims();
        if rows != self.n_cols {
            return Err(GlenError::shape(
                "spmm",
                &[self.n_rows, self.n_cols],
                x.shape(),
            ));
        }
        let mut out = vec![0.0; self.n_rows * cols];
        let xv = x.values();
        for r in 0..self.n_rows {
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (c, w) in self.row(r) {
                for (o, v) in dst.iter_mut().zip(&xv[c * cols..(c + 1) * cols]) {
                    *o += w * v;
                }
            }
        }
        Tensor::matrix(self.n_rows, cols, out)
    }

    /// `self^T * g`, the adjoint of [`SparseMatrix::mul_dense`].
    pub(crate) fn transpose_mul_dense(&self, g: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols * cols];
        for r in 0..self.n_rows {
            let src = &g[r * cols..(r + 1) * cols];
            for (c, w) in self.row(r) {
                for (o, v) in out[c * cols..(c + 1) * cols].iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_columns() {
        let err = SparseMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(err.is_err());
        let err = SparseMatrix::new(1, 3, vec![0, 1], vec![3], vec![1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let s = SparseMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.get(1, 0), 1.5);
        assert_eq!(s.get(0, 0), 0.0);
        assert_eq!(s.row_offsets(), &[0, 1, 2]);
    }

    #[test]
    fn identity_and_zero_products() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(SparseMatrix::identity(3).mul_dense(&x).unwrap(), x);
        let z = SparseMatrix::zeros(3, 3).mul_dense(&x).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(SparseMatrix::identity(2).mul_dense(&x).is_err());
    }

    #[test]
    fn two_node_normalized_product() {
        let s = SparseMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 2.0 / 3.0), (0, 1, 1.0 / 3.0), (1, 0, 1.0 / 3.0), (1, 1, 2.0 / 3.0)],
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![3.0], vec![0.0]]);
        let y = s.mul_dense(&x).unwrap();
        assert!((y.values()[0] - 2.0).abs() < 1e-15);
        assert!((y.values()[1] - 1.0).abs() < 1e-15);
    }
}

use super::{Matrix, TensorError};

/// Compressed sparse row matrix used for neighborhood aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Entries within a row keep
    /// ascending column order; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self, TensorError> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(TensorError::Contract(format!("entry ({r}, {c}) outside a {rows}x{cols} sparse matrix")));
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), triplets).expect("dense indices are in range")
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            m.set(r, c, v);
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    /// `self * x`.
    pub fn matmul_dense(&self, x: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != x.rows() {
            return Err(TensorError::Shape { op: "spmm", lhs: self.shape(), rhs: x.shape() });
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                for (o, xv) in out_row.iter_mut().zip(x.row(self.col_idx[k])) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * x`.
    pub fn transpose_matmul_dense(&self, x: &Matrix) -> Result<Matrix, TensorError> {
        if self.rows != x.rows() {
            return Err(TensorError::Shape { op: "spmm_t", lhs: self.shape(), rhs: x.shape() });
        }
        let mut out = Matrix::zeros(self.cols, x.cols());
        for r in 0..self.rows {
            let x_row = x.row(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                for (o, xv) in out.row_mut(self.col_idx[k]).iter_mut().zip(x_row) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_matches_dense() {
        let dense = Matrix::from_rows(&[vec![0.0, 2.0, 0.0], vec![1.0, 0.0, -1.0]]).unwrap();
        let s = SparseMatrix::from_dense(&dense);
        assert_eq!(s.nnz(), 3);
        let x = Matrix::from_fn(3, 2, |i, j| (i as f64) - (j as f64) * 0.5);
        assert_eq!(s.matmul_dense(&x).unwrap(), dense.matmul(&x).unwrap());
        let y = Matrix::from_fn(2, 4, |i, j| (i * j) as f64 + 1.0);
        assert_eq!(s.transpose_matmul_dense(&y).unwrap(), dense.transpose().matmul(&y).unwrap());
        assert_eq!(s.to_dense(), dense);
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let s = SparseMatrix::from_triplets(2, 2, vec![(1, 1, 1.0), (0, 1, 2.0), (1, 1, 0.5)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.to_dense().get(1, 1), 1.5);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }
}

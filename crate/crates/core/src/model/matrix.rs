//! Weight storage for affine layers.
//!
//! Classifier layers are stored densely. The occlusion layers are almost
//! entirely zero, so they use a compressed-row layout; both expose the same
//! row-oriented access so evaluation and bound propagation never care which
//! one they hold.

/// A real matrix with `rows` output neurons and `cols` input neurons.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Sparse {
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    },
}

/// Iterator over the `(column, value)` entries of one row.
pub enum RowEntries<'a> {
    Dense(std::iter::Enumerate<std::slice::Iter<'a, f64>>),
    Sparse(std::iter::Zip<std::slice::Iter<'a, usize>, std::slice::Iter<'a, f64>>),
}

impl Iterator for RowEntries<'_> {
    type Item = (usize, f64);

    #[inline]
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            RowEntries::Dense(it) => it.next().map(|(c, v)| (c, *v)),
            RowEntries::Sparse(it) => it.next().map(|(c, v)| (*c, *v)),
        }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a dense matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Matrix::Dense { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix::Dense {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a compressed-row matrix from per-row entry lists. Entries within a
    /// row are sorted by column; duplicate columns are summed.
    pub fn sparse_from_rows(rows: usize, cols: usize, mut entries: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(entries.len(), rows);
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in entries.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                assert!(c < cols, "column {c} out of range {cols}");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Matrix::Sparse {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Matrix::Dense { rows, .. } | Matrix::Sparse { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Matrix::Dense { cols, .. } | Matrix::Sparse { cols, .. } => *cols,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Matrix::Sparse { .. })
    }

    /// Number of stored entries (all entries for dense storage).
    pub fn stored_entries(&self) -> usize {
        match self {
            Matrix::Dense { data, .. } => data.len(),
            Matrix::Sparse { values, .. } => values.len(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        match self {
            Matrix::Dense { cols, data, .. } => data[r * cols + c],
            Matrix::Sparse {
                row_ptr,
                col_idx,
                values,
                ..
            } => {
                let span = row_ptr[r]..row_ptr[r + 1];
                match col_idx[span.clone()].binary_search(&c) {
                    Ok(k) => values[span.start + k],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Sets one entry; converts sparse storage to dense first.
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        if self.is_sparse() {
            *self = self.to_dense();
        }
        if let Matrix::Dense { cols, data, .. } = self {
            data[r * *cols + c] = v;
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> RowEntries<'_> {
        match self {
            Matrix::Dense { cols, data, .. } => RowEntries::Dense(data[r * cols..(r + 1) * cols].iter().enumerate()),
            Matrix::Sparse {
                row_ptr,
                col_idx,
                values,
                ..
            } => {
                let span = row_ptr[r]..row_ptr[r + 1];
                RowEntries::Sparse(col_idx[span.clone()].iter().zip(values[span].iter()))
            }
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Matrix::Dense { .. } => self.clone(),
            Matrix::Sparse { rows, cols, .. } => {
                let mut data = vec![0.0; rows * cols];
                for r in 0..*rows {
                    for (c, v) in self.row(r) {
                        data[r * cols + c] = v;
                    }
                }
                Matrix::Dense {
                    rows: *rows,
                    cols: *cols,
                    data,
                }
            }
        }
    }

    /// `y = M x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        (0..self.rows())
            .map(|r| self.row(r).map(|(c, w)| w * x[c]).sum())
            .collect()
    }

    /// `M^T y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows());
        let mut out = vec![0.0; self.cols()];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (c, w) in self.row(r) {
                out[c] += w * yr;
            }
        }
        out
    }

    /// Matrix product `self * rhs`, always returned dense.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols(), rhs.rows(), "inner dimensions differ");
        let (rows, cols) = (self.rows(), rhs.cols());
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let out = &mut data[r * cols..(r + 1) * cols];
            for (k, a) in self.row(r) {
                if a == 0.0 {
                    continue;
                }
                for (c, b) in rhs.row(k) {
                    out[c] += a * b;
                }
            }
        }
        Matrix::Dense { rows, cols, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_and_dense_agree() {
        let dense = Matrix::from_rows(&[vec![1.0, 0.0, -2.0], vec![0.0, 0.5, 0.0]]);
        let sparse = Matrix::sparse_from_rows(2, 3, vec![vec![(2, -2.0), (0, 1.0)], vec![(1, 0.25), (1, 0.25)]]);
        assert_eq!(sparse.to_dense(), dense);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(dense.mul_vec(&x), sparse.mul_vec(&x));
        assert_eq!(sparse.get(0, 1), 0.0);
        assert_eq!(sparse.get(1, 1), 0.5);
        assert_eq!(dense.tr_mul_vec(&[1.0, 2.0]), sparse.tr_mul_vec(&[1.0, 2.0]));
    }

    #[test]
    fn matmul_matches_manual_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::sparse_from_rows(2, 3, vec![vec![(0, 1.0), (2, -1.0)], vec![(1, 2.0)]]);
        let p = a.matmul(&b);
        assert_eq!(p, Matrix::from_rows(&[vec![1.0, 4.0, -1.0], vec![3.0, 8.0, -3.0]]));
    }
}

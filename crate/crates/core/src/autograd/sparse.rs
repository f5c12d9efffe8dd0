use ndarray::Array2;

/// Compressed-sparse-row matrix used as a constant operand (graph propagation).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists. Lists need not be sorted.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let n_rows = rows.len();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                assert!(c < cols, "column {c} out of bounds for {cols} columns");
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: n_rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · x`.
    pub fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for i in 0..self.rows {
            let mut out_row = out.row_mut(i);
            for (j, w) in self.row(i) {
                out_row.scaled_add(w, &x.row(j));
            }
        }
        out
    }

    /// `selfᵀ · g`, accumulated into `acc`.
    pub fn transpose_matmul_into(&self, g: &Array2<f64>, acc: &mut Array2<f64>) {
        for i in 0..self.rows {
            let g_row = g.row(i);
            for (j, w) in self.row(i) {
                acc.row_mut(j).scaled_add(w, &g_row);
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for (j, w) in self.row(i) {
                out[[i, j]] += w;
            }
        }
        out
    }
}

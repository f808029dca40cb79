use ndarray::{Array2, ArrayView2};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix with a fixed pattern.
///
/// Used for the normalized adjacency and for node features. The pattern doubles
/// as the index space of tracked per-entry values (see `Tape::spmm`/`Tape::sddmm`).
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; entries are sorted by column
    /// within each row and duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Dimension {
                    op: "csr_from_triplets",
                    left: (r, c),
                    right: (rows, cols),
                });
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut entries in per_row {
            entries.sort_by_key(|&(c, _)| c);
            for (c, v) in entries {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps the nonzero entries of a dense tensor.
    pub fn from_dense(dense: &Tensor) -> Self {
        let (rows, cols) = dense.shape();
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..rows {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for e in self.row_range(i) {
                out[[i, self.indices[e]]] = self.values[e];
            }
        }
        Tensor::from_array(out)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.indptr[row]..self.indptr[row + 1]
    }

    pub fn row_indices(&self, row: usize) -> &[usize] {
        &self.indices[self.row_range(row)]
    }

    /// Entry values as an `nnz × 1` tensor.
    pub fn values_tensor(&self) -> Tensor {
        Tensor::new(self.nnz(), 1, self.values.clone()).expect("nnz >= 1")
    }

    /// Row index of every stored entry, in storage order.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            out.extend(std::iter::repeat_n(i, self.indptr[i + 1] - self.indptr[i]));
        }
        out
    }

    /// Sub-matrix made of the given rows (in the given order) with columns
    /// renumbered by `col_map`. Entries whose column maps to `None` are dropped.
    pub fn restrict(
        &self,
        rows: &[usize],
        new_cols: usize,
        col_map: impl Fn(usize) -> Option<usize>,
    ) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            let mut row: Vec<(usize, f64)> = self
                .row_range(r)
                .filter_map(|e| col_map(self.indices[e]).map(|c| (c, self.values[e])))
                .collect();
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: rows.len(),
            cols: new_cols,
            indptr,
            indices,
            values,
        }
    }

    /// `self · dense`, optionally substituting `values` for the stored entries.
    pub(crate) fn matmul_dense(
        &self,
        values: Option<&[f64]>,
        dense: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let values = values.unwrap_or(&self.values);
        let width = dense.ncols();
        let mut out = Array2::zeros((self.rows, width));
        for i in 0..self.rows {
            let mut out_row = out.row_mut(i);
            for e in self.row_range(i) {
                let v = values[e];
                out_row.scaled_add(v, &dense.row(self.indices[e]));
            }
        }
        out
    }

    /// `selfᵀ · dense`.
    pub(crate) fn transpose_matmul_dense(
        &self,
        values: Option<&[f64]>,
        dense: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let values = values.unwrap_or(&self.values);
        let width = dense.ncols();
        let mut out = Array2::zeros((self.cols, width));
        for i in 0..self.rows {
            let src = dense.row(i);
            for e in self.row_range(i) {
                out.row_mut(self.indices[e]).scaled_add(values[e], &src);
            }
        }
        out
    }
}

//! CSR sparse matrices, used for adjacency structures.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compressed sparse row matrix.
///
/// Row offsets are monotone nondecreasing, column indices are in-bounds and
/// sorted within each row. Construction goes through [`SparseMatrix::from_triplets`]
/// (or the loaders), which enforces all three.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of bounds");
            per_row[r].push((c, v));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in &mut per_row {
            row.sort_by_key(|(c, _)| *c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix::from_triplets(rows, cols, &[])
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &triplets)
    }

    /// CSR copy of a dense matrix, keeping exact nonzeros.
    pub fn from_dense(t: &Tensor) -> Self {
        let (rows, cols) = t.shape();
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..rows {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Inverted dropout over the stored nonzeros: each survives with
    /// probability `1 - p` and is rescaled by `1/(1-p)`. Equivalent to dense
    /// dropout of the same matrix, since dropping a zero is a no-op.
    pub fn dropout<R: rand::Rng>(&self, p: f64, rng: &mut R) -> SparseMatrix {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        if p == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if rng.gen::<f64>() < keep {
                    col_indices.push(c);
                    values.push(v * scale);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Fraction of entries that are nonzero.
    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.rows * self.cols) as f64
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[r];
        let hi = self.row_offsets[r + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    pub fn has_entry(&self, r: usize, c: usize) -> bool {
        let (cols, _) = self.row(r);
        cols.binary_search(&c).is_ok()
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter_entries().all(|(r, c, _)| self.has_entry(c, r))
    }

    pub fn has_diagonal_entry(&self) -> bool {
        self.iter_entries().any(|(r, c, _)| r == c)
    }

    /// `self * dense`, no gradient tracking.
    pub fn mul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.cols != dense.rows() {
            return Err(Error::dim(
                "spmm",
                format!(
                    "{}x{} sparse times {}x{} dense",
                    self.rows,
                    self.cols,
                    dense.rows(),
                    dense.cols()
                ),
            ));
        }
        let d = dense.cols();
        let mut out = vec![0.0; self.rows * d];
        self.mul_dense_into(dense.values(), d, &mut out);
        Ok(Tensor::from_vec(self.rows, d, out))
    }

    pub(crate) fn mul_dense_into(&self, dense: &[f64], d: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let dst = &mut out[r * d..(r + 1) * d];
            for (&c, &v) in cols.iter().zip(vals) {
                let src = &dense[c * d..(c + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    /// `self^T * dense` accumulated into `out` (scatter form, no transpose built).
    pub(crate) fn mul_dense_transposed_into(&self, dense: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols * d);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let src = &dense[r * d..(r + 1) * d];
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = &mut out[c * d..(c + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.iter_entries() {
            out[r * self.cols + c] = v;
        }
        Tensor::from_vec(self.rows, self.cols, out)
    }
}

use crate::error::{Error, Result};

/// Compressed sparse rows with `f32` values, used for constant inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    cols: usize,
    indptr: Vec<u32>,
    indices: Vec<u16>,
    values: Vec<f32>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        assert!(cols <= u16::MAX as usize + 1, "column count exceeds u16 indexing");
        SparseRows {
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a dense row, keeping only nonzero entries.
    pub fn push_dense(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Shape {
                op: "sparse_push",
                left: vec![self.cols],
                right: vec![row.len()],
            });
        }
        for (j, &v) in row.iter().enumerate() {
            let v = v as f32;
            if v != 0.0 {
                self.indices.push(j as u16);
                self.values.push(v);
            }
        }
        self.indptr.push(self.indices.len() as u32);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[r] as usize, self.indptr[r + 1] as usize);
        self.indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| (j as usize, f64::from(v)))
    }

    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (j, v) in self.row(r) {
            out[j] = v;
        }
        out
    }

    /// `out += self · w` for a dense row-major `cols × n` matrix `w`.
    pub(crate) fn matmul_into(&self, w: &[f64], n: usize, out: &mut [f64]) {
        for r in 0..self.rows() {
            let orow = &mut out[r * n..(r + 1) * n];
            for (j, v) in self.row(r) {
                for (o, x) in orow.iter_mut().zip(&w[j * n..(j + 1) * n]) {
                    *o += v * x;
                }
            }
        }
    }

    /// `dw += selfᵀ · g` for `g: rows × n`.
    pub(crate) fn t_matmul_into(&self, g: &[f64], n: usize, dw: &mut [f64]) {
        for r in 0..self.rows() {
            let grow = &g[r * n..(r + 1) * n];
            for (j, v) in self.row(r) {
                for (o, x) in dw[j * n..(j + 1) * n].iter_mut().zip(grow) {
                    *o += v * x;
                }
            }
        }
    }
}

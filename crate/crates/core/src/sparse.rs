//! Compressed sparse row matrices and the products the GCN layers need.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1
            || offsets.first() != Some(&0)
            || offsets.last() != Some(&indices.len())
            || indices.len() != values.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
            || indices.iter().any(|&c| c >= cols)
        {
            return Err(Error::invalid("malformed CSR arrays"));
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
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

    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.offsets[r]..self.offsets[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    /// `self · dense` where `dense` is row-major `cols × k`.
    ///
    /// Each output row accumulates its stored entries in ascending column
    /// order, so the result is bit-reproducible.
    pub fn matmul_dense(&self, dense: &[T], k: usize) -> Vec<T> {
        debug_assert_eq!(dense.len(), self.cols * k);
        let mut out = vec![T::zero(); self.rows * k];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let dst = &mut out[r * k..(r + 1) * k];
            for (&c, &a) in idx.iter().zip(vals) {
                let src = &dense[c * k..(c + 1) * k];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · dense` where `dense` is row-major `rows × k`.
    pub fn transpose_matmul_dense(&self, dense: &[T], k: usize) -> Vec<T> {
        debug_assert_eq!(dense.len(), self.rows * k);
        let mut out = vec![T::zero(); self.cols * k];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let src = &dense[r * k..(r + 1) * k];
            for (&c, &a) in idx.iter().zip(vals) {
                let dst = &mut out[c * k..(c + 1) * k];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrMatrix<f64> {
        // [[1, 0, 2],
        //  [0, 3, 0]]
        CsrMatrix::new(2, 3, vec![0, 2, 3], vec![0, 2, 1], vec![1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn dense_products_match_explicit_matrix() {
        let m = small();
        assert_eq!(m.to_dense(), vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        // x is 3×1
        assert_eq!(m.matmul_dense(&[1.0, 2.0, 3.0], 1), vec![7.0, 6.0]);
        // y is 2×2
        assert_eq!(
            m.transpose_matmul_dense(&[1.0, 10.0, 2.0, 20.0], 2),
            vec![1.0, 10.0, 6.0, 60.0, 2.0, 20.0]
        );
    }

    #[test]
    fn rejects_bad_offsets() {
        assert!(CsrMatrix::<f64>::new(2, 2, vec![0, 2, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::<f64>::new(1, 2, vec![0, 1], vec![5], vec![1.0]).is_err());
    }
}

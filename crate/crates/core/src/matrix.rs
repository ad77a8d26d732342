use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Dense row-major matrix of observations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Rows {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Rows {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return param(format!("{} values do not fill rows of width {dim}", data.len()));
        }
        Ok(Rows { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Rows { dim, data: Vec::new() }
    }

    pub fn from_vecs(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return param("rows must be non-empty and of equal width");
        }
        Ok(Rows {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn select(&self, idx: &[usize]) -> Rows {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Rows { dim: self.dim, data }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }
}

use nalgebra::DMatrix;

use crate::archive::SiblingSet;
use crate::error::{Error, Result};

/// A row-major point cloud of `rows × dim` embeddings in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Cloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not fill rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self {
            rows: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    /// A single-point cloud.
    pub fn point(v: &[f64]) -> Result<Self> {
        Self::new(v.len(), v.to_vec())
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, dim) = m.shape();
        let mut data = Vec::with_capacity(rows * dim);
        for i in 0..rows {
            data.extend(m.row(i).iter());
        }
        Self { rows, dim, data }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl From<&SiblingSet> for Cloud {
    fn from(set: &SiblingSet) -> Self {
        Self {
            rows: set.count(),
            dim: set.dim(),
            data: set.as_slice().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

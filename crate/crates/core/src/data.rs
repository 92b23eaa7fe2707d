//! Row-major point containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `len` points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("point dimension must be positive".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::Argument(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Points { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or_else(|| Error::Argument("no rows".into()))?;
        let mut coords = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::data_at(i, format!("expected {dim} coordinates, found {}", r.len())));
            }
            coords.extend_from_slice(r);
        }
        Points::new(dim, coords)
    }

    /// Points on the real line.
    pub fn from_scalars(values: &[f64]) -> Self {
        Points { dim: 1, coords: values.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Copy with every point shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.dim);
        let coords = self.coords.chunks_exact(self.dim).flat_map(|r| r.iter().zip(v).map(|(a, b)| a + b)).collect();
        Points { dim: self.dim, coords }
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.row(i));
        }
        Points { dim: self.dim, coords }
    }

    pub fn concat(&self, other: &Points) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Argument("dimension mismatch in concat".into()));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Points { dim: self.dim, coords })
    }
}

/// Observations `(y, z)` of one treatment arm; each row is `y` followed by `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    d_y: usize,
    d_z: usize,
    points: Points,
}

impl JointSample {
    pub fn new(d_y: usize, d_z: usize, points: Points) -> Result<Self> {
        if d_y == 0 {
            return Err(Error::Argument("outcome dimension d_y must be positive".into()));
        }
        if points.dim() != d_y + d_z {
            return Err(Error::Argument(format!(
                "rows have {} coordinates, expected d_y + d_z = {}",
                points.dim(),
                d_y + d_z
            )));
        }
        Ok(JointSample { d_y, d_z, points })
    }

    /// Builds a sample from separate outcome and covariate rows.
    pub fn from_parts(y: &Points, z: &Points) -> Result<Self> {
        if y.len() != z.len() {
            return Err(Error::Argument("outcome and covariate row counts differ".into()));
        }
        let mut coords = Vec::with_capacity(y.len() * (y.dim() + z.dim()));
        for (a, b) in y.rows().zip(z.rows()) {
            coords.extend_from_slice(a);
            coords.extend_from_slice(b);
        }
        JointSample::new(y.dim(), z.dim(), Points::new(y.dim() + z.dim(), coords)?)
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.points.row(i)[..self.d_y]
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.points.row(i)[self.d_y..]
    }

    /// Covariate columns only.
    pub fn z_points(&self) -> Option<Points> {
        if self.d_z == 0 {
            return None;
        }
        let coords = self.points.rows().flat_map(|r| r[self.d_y..].iter().copied()).collect();
        Points::new(self.d_z, coords).ok()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        JointSample { d_y: self.d_y, d_z: self.d_z, points: self.points.select(idx) }
    }
}

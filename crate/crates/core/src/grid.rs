//! Discrete spatial domains, weight maps and the distance-indexed regions
//! built on top of them.
//!
//! Covariates are laid out on an integer lattice in row-major order and
//! compared with the ℓ1 metric. All region accessors return sorted index
//! vectors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Covariate coordinates on an integer lattice with the ℓ1 metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialDomain {
    shape: Vec<usize>,
    coords: Vec<i64>,
}

impl SpatialDomain {
    /// Builds a lattice of the given shape. Indices are assigned in row-major
    /// order, so the last axis varies fastest.
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!("invalid grid shape {shape:?}")));
        }
        let ndim = shape.len();
        let size: usize = shape.iter().product();
        let mut coords = vec![0i64; size * ndim];
        for j in 0..size {
            let mut rem = j;
            for axis in (0..ndim).rev() {
                coords[j * ndim + axis] = (rem % shape[axis]) as i64;
                rem /= shape[axis];
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            coords,
        })
    }

    pub fn line(len: usize) -> Result<Self> {
        Self::new(&[len])
    }

    /// Square `edge × edge` grid.
    pub fn square(edge: usize) -> Result<Self> {
        Self::new(&[edge, edge])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Number of covariates.
    pub fn len(&self) -> usize {
        self.coords.len() / self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord(&self, j: usize) -> &[i64] {
        let d = self.ndim();
        &self.coords[j * d..(j + 1) * d]
    }

    /// Row-major index of a lattice point, if it lies inside the grid.
    pub fn index_of(&self, coord: &[i64]) -> Option<usize> {
        if coord.len() != self.ndim() {
            return None;
        }
        let mut idx = 0usize;
        for (&c, &s) in coord.iter().zip(&self.shape) {
            if c < 0 || c as usize >= s {
                return None;
            }
            idx = idx * s + c as usize;
        }
        Some(idx)
    }

    fn check(&self, j: usize) -> Result<()> {
        if j >= self.len() {
            Err(Error::IndexOutOfRange {
                index: j,
                size: self.len(),
            })
        } else {
            Ok(())
        }
    }

    /// ℓ1 distance between covariates `j` and `k`.
    pub fn distance(&self, j: usize, k: usize) -> Result<f64> {
        self.check(j)?;
        self.check(k)?;
        Ok(self.distance_unchecked(j, k) as f64)
    }

    pub(crate) fn distance_unchecked(&self, j: usize, k: usize) -> i64 {
        self.coord(j)
            .iter()
            .zip(self.coord(k))
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Largest ℓ1 distance between two covariates of the domain.
    pub fn diameter(&self) -> f64 {
        self.shape.iter().map(|&s| (s - 1) as f64).sum()
    }

    /// Lattice neighbours at ℓ1 distance one (4-neighbourhood in 2D).
    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.ndim());
        let mut c = self.coord(j).to_vec();
        for axis in 0..self.ndim() {
            for step in [-1i64, 1] {
                c[axis] += step;
                if let Some(k) = self.index_of(&c) {
                    out.push(k);
                }
                c[axis] -= step;
            }
        }
        out.sort_unstable();
        out
    }

    /// Adjacency lists of the lattice graph.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|j| self.neighbors(j)).collect()
    }
}

/// A weight vector over the covariates of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    beta: Vec<f64>,
    domain: SpatialDomain,
}

impl WeightMap {
    pub fn new(beta: Vec<f64>, domain: SpatialDomain) -> Result<Self> {
        if beta.len() != domain.len() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector of length {} on a domain of {} covariates",
                beta.len(),
                domain.len()
            )));
        }
        Ok(Self { beta, domain })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.beta[j] != 0.0).collect()
    }

    pub fn null_region(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.beta[j] == 0.0).collect()
    }

    /// Covariates whose whole `delta`-neighbourhood carries zero weight.
    pub fn delta_null_region(&self, delta: f64) -> Vec<usize> {
        let support = self.support();
        (0..self.len())
            .filter(|&j| {
                support
                    .iter()
                    .all(|&k| self.domain.distance_unchecked(j, k) as f64 > delta)
            })
            .collect()
    }

    /// True when no two strictly opposite-signed weights lie within `delta`.
    pub fn check_sparse_smooth(&self, delta: f64) -> bool {
        let support = self.support();
        for (a, &j) in support.iter().enumerate() {
            for &k in &support[a + 1..] {
                if self.beta[j] * self.beta[k] < 0.0
                    && self.domain.distance_unchecked(j, k) as f64 <= delta
                {
                    return false;
                }
            }
        }
        true
    }
}

/// True when every pair of covariates within `delta` has nonnegative covariance.
pub fn check_spatial_homogeneity(
    sigma: &DMatrix<f64>,
    domain: &SpatialDomain,
    delta: f64,
) -> Result<bool> {
    let p = domain.len();
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, domain has {p} covariates",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    for j in 0..p {
        for k in j + 1..p {
            let (a, b) = (sigma[(j, k)], sigma[(k, j)]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::Contract(format!(
                    "covariance is not symmetric at ({j}, {k})"
                )));
            }
        }
    }
    for j in 0..p {
        for k in j..p {
            if domain.distance_unchecked(j, k) as f64 <= delta && sigma[(j, k)] < 0.0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

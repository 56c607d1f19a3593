use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// The unit cube `[0,1]^dim` with the uniform measure, carrying `channels`
/// output components per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub channels: usize,
}

impl Domain {
    pub fn new(dim: usize, channels: usize) -> Result<Self> {
        if dim == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "domain needs dim >= 1 and channels >= 1, got dim={dim} channels={channels}"
            )));
        }
        Ok(Self { dim, channels })
    }
}

/// `D` points in the unit cube; inner products are empirical means over them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    points: Array2<f64>,
}

/// Largest `n` with `n^dim <= count`.
fn cells_per_axis(count: usize, dim: usize) -> usize {
    let mut n = (count as f64).powf(1.0 / dim as f64).round() as usize + 1;
    while n > 1 && n.checked_pow(dim as u32).is_none_or(|v| v > count) {
        n -= 1;
    }
    n.max(1)
}

impl QuadratureSet {
    pub fn from_points(points: Array2<f64>) -> Result<Self> {
        if points.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Config("quadrature points must lie in [0,1]^d".into()));
        }
        Ok(Self { points })
    }

    /// Stratified sample: a grid of `⌊count^(1/dim)⌋` cells per axis with one
    /// uniform point per cell, and any remaining points uniform over the cube.
    pub fn stratified<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Self {
        let n = cells_per_axis(count, dim);
        let cells = n.pow(dim as u32);
        let h = 1.0 / n as f64;
        let mut points = Array2::zeros((count, dim));
        for cell in 0..cells {
            let mut rest = cell;
            // last axis varies fastest
            for axis in (0..dim).rev() {
                let k = rest % n;
                rest /= n;
                points[[cell, axis]] = (k as f64 + rng.random::<f64>()) * h;
            }
        }
        for j in cells..count {
            for axis in 0..dim {
                points[[j, axis]] = rng.random::<f64>();
            }
        }
        Self { points }
    }

    /// Cell midpoints of a uniform grid with `per_axis` cells along each axis.
    pub fn midpoint_grid(dim: usize, per_axis: usize) -> Self {
        let count = per_axis.pow(dim as u32);
        let h = 1.0 / per_axis as f64;
        let mut points = Array2::zeros((count, dim));
        for cell in 0..count {
            let mut rest = cell;
            for axis in (0..dim).rev() {
                let k = rest % per_axis;
                rest /= per_axis;
                points[[cell, axis]] = (k as f64 + 0.5) * h;
            }
        }
        Self { points }
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

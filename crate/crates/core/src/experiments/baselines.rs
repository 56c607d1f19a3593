//! Reference bases the learned ones are compared against: Fourier in prior
//! order and grid-based finite PCA.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Reconstruction quality by cutoff; entry `n − 1` belongs to cutoff `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionCurve {
    /// `Σ_s ‖f_s − f̂_s‖² / Σ_s ‖f_s‖²`.
    pub error: Vec<f64>,
    /// `Σ_s Σ_{i≤n} c_{s,i}² / Σ_s ‖f_s − ν‖²`, the captured energy.
    pub energy: Vec<f64>,
}

impl ReconstructionCurve {
    pub fn error_at(&self, cutoff: usize) -> f64 {
        self.error[cutoff.min(self.error.len()) - 1]
    }

    pub fn energy_at(&self, cutoff: usize) -> f64 {
        self.energy[cutoff.min(self.energy.len()) - 1]
    }
}

/// Projects centered samples (rows, `S × D`) onto the rows of `basis`
/// (`n × D`) one element at a time, with inner products `(1/D) Σ_j`.
pub fn projection_curve(basis: &Array2<f64>, mean: &Array1<f64>, samples: &Array2<f64>) -> Result<ReconstructionCurve> {
    let d = samples.ncols();
    if basis.ncols() != d || mean.len() != d {
        return Err(Error::ShapeMismatch {
            op: "projection-curve",
            lhs: basis.dim(),
            rhs: samples.dim(),
        });
    }
    let inv_d = 1.0 / d as f64;
    let total: f64 = samples.iter().map(|v| v * v).sum::<f64>() * inv_d;
    let mut residual = samples - &mean.view().insert_axis(Axis(0));
    let centered_total: f64 = residual.iter().map(|v| v * v).sum::<f64>() * inv_d;
    let mut error = Vec::with_capacity(basis.nrows());
    let mut energy = Vec::with_capacity(basis.nrows());
    let mut captured = 0.0;
    for row in basis.rows() {
        let coeffs = residual.dot(&row) * inv_d;
        captured += coeffs.iter().map(|c| c * c).sum::<f64>();
        for (mut r, c) in residual.rows_mut().into_iter().zip(coeffs.iter()) {
            r.scaled_add(-*c, &row);
        }
        error.push(residual.iter().map(|v| v * v).sum::<f64>() * inv_d / total);
        energy.push(captured / centered_total);
    }
    Ok(ReconstructionCurve { error, energy })
}

/// Linear interpolation of values on the nodes `i/(G−1)`.
pub fn interp_linear(values: &[f64], x: f64) -> f64 {
    let g = values.len();
    let t = x.clamp(0.0, 1.0) * (g - 1) as f64;
    let i = (t.floor() as usize).min(g - 2);
    let w = t - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Nodes `i/(G−1)` of a size-`G` grid.
pub fn grid_nodes(g: usize) -> Vec<f64> {
    (0..g).map(|i| i as f64 / (g - 1) as f64).collect()
}

/// Classical PCA of functions sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePca {
    pub mean: Array1<f64>,
    /// Unit-norm (Euclidean) components as rows, by decreasing eigenvalue.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

impl FinitePca {
    /// Fits on grid samples (`N × G`) and keeps `n` components.
    pub fn fit(samples: &Array2<f64>, n: usize) -> Result<Self> {
        let (count, g) = samples.dim();
        if count == 0 || n == 0 || n > g {
            return Err(Error::Config(format!("finite PCA needs samples and 1 ≤ n ≤ {g}, got n = {n}")));
        }
        let mean = samples.mean_axis(Axis(0)).expect("non-empty");
        let centered = samples - &mean.view().insert_axis(Axis(0));
        let cov = centered.t().dot(&centered) / count as f64;
        let eig = SymmetricEigen::new(DMatrix::from_fn(g, g, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = Array2::from_shape_fn((n, g), |(k, j)| eig.eigenvectors[(j, order[k])]);
        let eigenvalues = order[..n].iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.mean.len()
    }

    /// Top-`n` reconstruction of grid samples (`S × G`), still on the grid.
    pub fn reconstruct(&self, samples: &Array2<f64>, n: usize) -> Array2<f64> {
        let comps = self.components.slice(s![..n.min(self.components.nrows()), ..]);
        let centered = samples - &self.mean.view().insert_axis(Axis(0));
        let coeffs = centered.dot(&comps.t());
        coeffs.dot(&comps) + self.mean.view().insert_axis(Axis(0))
    }

    /// Error and captured-energy curves up to `max_cutoff`: reconstructions
    /// are formed on the grid and interpolated to the dense points `xs`,
    /// where they are compared with the dense values (`S × D`). Cutoffs past
    /// the component count repeat the last value.
    pub fn curve(&self, grid_samples: &Array2<f64>, dense: &Array2<f64>, xs: &[f64], max_cutoff: usize) -> ReconstructionCurve {
        let total: f64 = dense.iter().map(|v| v * v).sum();
        let centered = grid_samples - &self.mean.view().insert_axis(Axis(0));
        let centered_total: f64 = centered.iter().map(|v| v * v).sum();
        let coeffs = centered.dot(&self.components.t());
        let mut recon = Array2::from_shape_fn(grid_samples.dim(), |(_, j)| self.mean[j]);
        let mut error = Vec::with_capacity(max_cutoff);
        let mut energy = Vec::with_capacity(max_cutoff);
        let mut captured = 0.0;
        for n in 0..max_cutoff {
            if n < self.components.nrows() {
                let comp = self.components.row(n);
                for (mut r, c) in recon.rows_mut().into_iter().zip(coeffs.column(n)) {
                    r.scaled_add(*c, &comp);
                }
                captured += coeffs.column(n).iter().map(|c| c * c).sum::<f64>();
                let mut err = 0.0;
                for (r, f) in recon.rows().into_iter().zip(dense.rows()) {
                    let vals = r.as_slice().expect("row-major");
                    err += xs.iter().zip(f).map(|(&x, &v)| (interp_linear(vals, x) - v).powi(2)).sum::<f64>();
                }
                error.push(err / total);
                energy.push(captured / centered_total);
            } else {
                error.push(*error.last().expect("at least one component"));
                energy.push(*energy.last().expect("at least one component"));
            }
        }
        ReconstructionCurve { error, energy }
    }
}

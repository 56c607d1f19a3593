//! Diagonalization of a known finite-rank operator: the learned basis should
//! recover its eigenfunctions in prior order.

use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::common::{gram_deviation, learned_basis, norm_drift, sample_inputs, FlowConfig, PriorConfig};
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::fields::{GeneratorModel, ModelConfig};
use crate::objectives::{evolve_draw, quadratic_objective, FlowContext, KernelOperator};
use crate::seeds::{SeedSplitter, Stream};
use crate::space::{eval_fourier_rows, gram_rows, IndexPrior, QuadratureSet};
use crate::training::{StepOutcome, Task, TrainConfig};

/// Periodic Gaussian bumps orthonormalized (in order) on a midpoint grid.
/// `u_m = Σ_j C[m,j] b_j`, so the functions evaluate anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBumps {
    pub centers: Vec<f64>,
    pub width: f64,
    coeffs: DMatrix<f64>,
}

impl OrthonormalBumps {
    pub fn new(centers: Vec<f64>, width: f64, grid: usize) -> Result<Self> {
        let raw = Self {
            coeffs: DMatrix::identity(centers.len(), centers.len()),
            centers,
            width,
        };
        let q = QuadratureSet::midpoint_grid(1, grid);
        let b = raw.eval(&q);
        let g = gram_rows(&b, &b, grid);
        let m = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[[i, j]]);
        // G = L Lᵀ, so the rows of L⁻¹ b are orthonormal.
        let chol = m.cholesky().ok_or(Error::Singular { cond: f64::INFINITY })?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or(Error::Singular { cond: f64::INFINITY })?;
        Ok(Self { coeffs: l_inv, ..raw })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn bump(&self, c: f64, x: f64) -> f64 {
        let d = (x - c).rem_euclid(1.0);
        let d = d.min(1.0 - d);
        (-0.5 * (d / self.width).powi(2)).exp()
    }

    /// `u_m` at every point, `m × D`.
    pub fn eval(&self, points: &QuadratureSet) -> Array2<f64> {
        let p = points.points();
        let raw = Array2::from_shape_fn((self.len(), p.nrows()), |(m, j)| self.bump(self.centers[m], p[[j, 0]]));
        let c = Array2::from_shape_fn((self.len(), self.len()), |(i, j)| self.coeffs[(i, j)]);
        c.dot(&raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagSettings {
    /// Spectrum of the operator, largest first.
    pub eigenvalues: Vec<f64>,
    pub bump_width: f64,
    /// Midpoint grid used to orthonormalize the bumps and to evaluate.
    pub eval_points: usize,
    /// Learned functions included in the evaluated objective.
    pub eval_count: usize,
}

impl Default for DiagSettings {
    fn default() -> Self {
        Self {
            eigenvalues: vec![0.5, 0.4, 0.3, 0.2, 0.1],
            bump_width: 0.1,
            eval_points: 4096,
            eval_count: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagConfig {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub diag: DiagSettings,
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                dim: 1,
                rank: 10,
                width: 64,
                depth: 3,
                ..ModelConfig::default()
            },
            prior: PriorConfig::default(),
            flow: FlowConfig {
                steps: 10,
                ..FlowConfig::default()
            },
            train: TrainConfig {
                steps: 3000,
                points: 128,
                eval_every: 250,
                ..TrainConfig::default()
            },
            diag: DiagSettings::default(),
        }
    }
}

impl DiagConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        if self.model.dim != 1 || self.model.channels != 1 {
            return Err(Error::Config("the diagonalization oracle is scalar and one-dimensional".into()));
        }
        let ev = &self.diag.eigenvalues;
        if ev.is_empty() || ev.windows(2).any(|w| w[1] > w[0]) || ev.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("diag.eigenvalues must be positive and non-increasing".into()));
        }
        if self.diag.eval_count < ev.len() {
            return Err(Error::Config("diag.eval_count must cover the spectrum".into()));
        }
        Ok(())
    }
}

/// Recovered spectrum on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagReport {
    /// `⟨ψ_i, A ψ_i⟩` for the first `eval_count` learned functions.
    pub rayleigh: Vec<f64>,
    /// `|⟨ψ_i, u_i⟩|` for each eigenfunction.
    pub alignment: Vec<f64>,
    /// `Σ_i p(i) ⟨ψ_i, A ψ_i⟩` over the evaluated functions.
    pub objective: f64,
    /// `Σ_m p_(m) λ_m`, the largest value the objective can take.
    pub bound: f64,
    pub gram_deviation: f64,
}

pub struct DiagTask {
    pub config: DiagConfig,
    pub model: GeneratorModel,
    pub prior: IndexPrior,
    pub bumps: Arc<OrthonormalBumps>,
    pub operator: KernelOperator,
}

impl DiagTask {
    pub fn new(config: DiagConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let seeds = SeedSplitter::new(seed);
        let model = GeneratorModel::new(config.model.clone(), &mut seeds.rng(Stream::Init, 0))?;
        let prior = config.prior.build(1, 1)?;
        let n = config.diag.eigenvalues.len();
        let centers = (0..n).map(|m| (m as f64 + 0.5) / n as f64).collect();
        let bumps = Arc::new(OrthonormalBumps::new(centers, config.diag.bump_width, config.diag.eval_points)?);
        let lambda = config.diag.eigenvalues.clone();
        let b = bumps.clone();
        let operator = KernelOperator::factored(move |q| Ok((lambda.clone(), b.eval(q))));
        Ok(Self {
            config,
            model,
            prior,
            bumps,
            operator,
        })
    }

    pub fn report(&self) -> Result<DiagReport> {
        let s = &self.config.diag;
        let grid = QuadratureSet::midpoint_grid(1, s.eval_points);
        let (_, basis) = learned_basis(&self.model, &self.prior, s.eval_count, &grid, &self.config.flow)?;
        let u = self.bumps.eval(&grid);
        let overlap = gram_rows(&basis, &u, grid.len());
        let rayleigh: Vec<f64> = overlap
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&s.eigenvalues).map(|(c, l)| l * c * c).sum())
            .collect();
        let alignment = (0..u.nrows()).map(|m| overlap[[m, m]].abs()).collect();
        let objective = rayleigh.iter().enumerate().map(|(e, r)| self.prior.weight_at(e) * r).sum();
        let bound = s.eigenvalues.iter().enumerate().map(|(e, l)| self.prior.weight_at(e) * l).sum();
        Ok(DiagReport {
            rayleigh,
            alignment,
            objective,
            bound,
            gram_deviation: gram_deviation(&basis, grid.len()),
        })
    }
}

impl Task for DiagTask {
    fn group_names(&self) -> Vec<String> {
        vec!["generator".into()]
    }

    fn group(&self, _: usize) -> &ParamStore {
        self.model.params()
    }

    fn group_mut(&mut self, _: usize) -> &mut ParamStore {
        self.model.params_mut()
    }

    fn metric_names(&self) -> Vec<String> {
        vec!["objective".into(), "norm_drift".into()]
    }

    fn step(&mut self, step: u64, attempt: u32, seeds: &SeedSplitter) -> Result<StepOutcome> {
        let cfg = &self.config;
        let inp = sample_inputs(seeds, step, attempt, cfg.train.points, &cfg.flow, &self.prior, &cfg.prior)?;
        let cache = self.model.prepare(&inp.points)?;
        let g = Graph::new();
        let p = self.model.params().bind(&g);
        let ctx = FlowContext {
            points: &inp.points,
            cache: &cache,
            grid: &inp.grid,
            method: cfg.flow.method,
        };
        let evolved = evolve_draw(&self.model, &g, &p, &inp.draw, ctx)?;
        let objective = quadratic_objective(evolved, &inp.draw, &self.operator, &inp.points)?;
        let grads = g.backward(objective.neg())?;
        let phi0 = eval_fourier_rows(&inp.draw.indices, &inp.points, 1)?;
        Ok(StepOutcome {
            grads: vec![p.grads(&grads)],
            metrics: vec![objective.item(), norm_drift(&evolved.value(), &phi0, inp.points.len())],
        })
    }

    fn eval_names(&self) -> Vec<String> {
        let n = self.config.diag.eigenvalues.len();
        let mut names = vec!["eval_objective".to_string(), "bound".to_string(), "gram_deviation".to_string()];
        names.extend((1..=n).map(|i| format!("rayleigh_{i}")));
        names.extend((1..=n).map(|i| format!("alignment_{i}")));
        names
    }

    fn evaluate(&mut self, _: &SeedSplitter) -> Result<Vec<f64>> {
        let r = self.report()?;
        let n = self.config.diag.eigenvalues.len();
        let mut row = vec![r.objective, r.bound, r.gram_deviation];
        row.extend(&r.rayleigh[..n]);
        row.extend(&r.alignment);
        Ok(row)
    }
}

/// Exact Rayleigh quotient of `sin`/`cos` modes under a bump operator, for
/// sanity checks: `Σ_m λ_m ⟨f, u_m⟩²`.
pub fn rayleigh_quotient(bumps: &OrthonormalBumps, lambda: &[f64], f: &Array2<f64>, grid: &QuadratureSet) -> Vec<f64> {
    let u = bumps.eval(grid);
    let c = gram_rows(f, &u, grid.len());
    c.rows()
        .into_iter()
        .map(|row| row.iter().zip(lambda).map(|(v, l)| l * v * v).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Trainer;

    #[test]
    fn bumps_are_orthonormal_on_the_grid() {
        let b = OrthonormalBumps::new(vec![0.1, 0.3, 0.5, 0.7, 0.9], 0.1, 1024).unwrap();
        let q = QuadratureSet::midpoint_grid(1, 1024);
        let u = b.eval(&q);
        assert!(gram_deviation(&u, 1024) < 1e-10);
        let fine = QuadratureSet::midpoint_grid(1, 8192);
        assert!(gram_deviation(&b.eval(&fine), 8192) < 1e-10);
    }

    #[test]
    fn eigenfunctions_attain_their_eigenvalues() {
        let lambda = [0.5, 0.4, 0.3];
        let b = OrthonormalBumps::new(vec![0.2, 0.5, 0.8], 0.1, 2048).unwrap();
        let q = QuadratureSet::midpoint_grid(1, 2048);
        let u = b.eval(&q);
        let r = rayleigh_quotient(&b, &lambda, &u, &q);
        for (x, l) in r.iter().zip(lambda) {
            assert!((x - l).abs() < 1e-10);
        }
    }

    #[test]
    fn objective_respects_the_bound() {
        let mut cfg = DiagConfig::default();
        cfg.model.width = 16;
        cfg.model.depth = 2;
        cfg.model.time_freqs = 8;
        cfg.model.residual_hidden = vec![8];
        cfg.model.mix_hidden = vec![8];
        cfg.flow.steps = 3;
        cfg.train.steps = 6;
        cfg.train.points = 32;
        cfg.train.eval_every = 3;
        cfg.train.lr = 1e-2;
        cfg.diag.eval_points = 512;
        let task = DiagTask::new(cfg.clone(), 2).unwrap();
        let mut t = Trainer::new(task, cfg.train, 2).unwrap();
        t.run(|_| Ok(())).unwrap();
        let report = t.task.report().unwrap();
        assert!(report.objective <= report.bound + 1e-9);
        assert!(report.gram_deviation < 1e-10);
        assert_eq!(t.evals.len(), 3);
        assert!(t.evals.column("eval_objective").unwrap().iter().all(|v| *v <= report.bound + 1e-9));
    }
}

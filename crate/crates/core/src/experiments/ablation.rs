//! Cayley versus forward/backward Euler on one shared sequence of random
//! generators.

use ndarray::{array, s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{step_frozen, Method, TimeGrid};
use crate::space::{eval_fourier_rows, gram_rows, FourierIndex, QuadratureSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Midpoint grid size on the unit interval.
    pub points: usize,
    pub rank: usize,
    pub steps: usize,
    /// Number of evolved Fourier basis functions.
    pub functions: usize,
    /// Standard deviation of the skew matrix entries.
    pub scale: f64,
    /// Steps after which Gram matrices are recorded.
    pub snapshots: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            points: 256,
            rank: 10,
            steps: 20,
            functions: 8,
            scale: 1.0,
            snapshots: vec![0, 5, 10, 20],
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.rank == 0 || self.steps == 0 || self.functions == 0 {
            return Err(Error::Config("ablation sizes must be positive".into()));
        }
        if self.functions > self.points {
            return Err(Error::Config(format!(
                "{} functions are not orthonormal on {} points",
                self.functions, self.points
            )));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::Config("ablation.scale must be finite and non-negative".into()));
        }
        if let Some(s) = self.snapshots.iter().find(|s| **s > self.steps) {
            return Err(Error::Config(format!("snapshot {s} is past the last step")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodTrace {
    pub method: Method,
    /// `(steps + 1) × functions` discrete norms.
    pub norms: Array2<f64>,
    pub grams: Vec<(usize, Array2<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub traces: Vec<MethodTrace>,
}

impl AblationReport {
    pub fn trace(&self, method: Method) -> &MethodTrace {
        self.traces.iter().find(|t| t.method == method).expect("every method is run")
    }

    /// Long table: step, method, function, norm.
    pub fn norm_rows(&self) -> Vec<(usize, Method, usize, f64)> {
        let mut out = Vec::new();
        for t in &self.traces {
            for ((l, f), v) in t.norms.indexed_iter() {
                out.push((l, t.method, f, *v));
            }
        }
        out
    }

    /// Per-step mean of the norms, one column per method in `Method::ALL` order.
    pub fn mean_norms(&self) -> Array2<f64> {
        let steps = self.traces[0].norms.nrows();
        Array2::from_shape_fn((steps, Method::ALL.len()), |(l, m)| {
            self.trace(Method::ALL[m]).norms.row(l).mean().unwrap_or(0.0)
        })
    }
}

/// Draws `(U, S)` for every step: Gaussian `U` of shape `r × D` and a skew
/// `S` with entries of standard deviation `scale`.
pub fn random_generators<R: Rng + ?Sized>(
    config: &AblationConfig,
    rng: &mut R,
) -> Vec<(Array2<f64>, Array2<f64>)> {
    let (r, d) = (config.rank, config.points);
    (0..config.steps)
        .map(|_| {
            let u = Array2::from_shape_simple_fn((r, d), || rng.sample(StandardNormal));
            let m: Array2<f64> = Array2::from_shape_simple_fn((r, r), || rng.sample::<f64, _>(StandardNormal));
            let skew = (&m - &m.t()) * (config.scale / std::f64::consts::SQRT_2);
            (u, skew)
        })
        .collect()
}

fn norms(phi: &Array2<f64>, d: usize) -> Vec<f64> {
    phi.rows().into_iter().map(|r| (r.dot(&r) / d as f64).sqrt()).collect()
}

pub fn ablate<R: Rng + ?Sized>(config: &AblationConfig, rng: &mut R) -> Result<AblationReport> {
    config.validate()?;
    let d = config.points;
    let q = QuadratureSet::midpoint_grid(1, d);
    let indices: Vec<FourierIndex> = (0..config.functions)
        .map(|i| {
            let k = i.div_ceil(2) as i32;
            FourierIndex::scalar(vec![if i % 2 == 1 { k } else { -k }])
        })
        .collect();
    let phi0 = eval_fourier_rows(&indices, &q, 1)?;
    let generators = random_generators(config, rng);
    let grid = TimeGrid::uniform(config.steps);
    let mut traces = Vec::new();
    for method in Method::ALL {
        let mut phi = phi0.clone();
        let mut table = Array2::zeros((config.steps + 1, config.functions));
        let mut grams = Vec::new();
        table.row_mut(0).assign(&ndarray::Array1::from(norms(&phi, d)));
        if config.snapshots.contains(&0) {
            grams.push((0, gram_rows(&phi, &phi, d)));
        }
        for (l, (u, sk)) in generators.iter().enumerate() {
            let (_, dt) = grid.step(l);
            phi = step_frozen(method, &(u * dt.sqrt()), sk, phi, d, l)?;
            table.row_mut(l + 1).assign(&ndarray::Array1::from(norms(&phi, d)));
            if config.snapshots.contains(&(l + 1)) {
                grams.push((l + 1, gram_rows(&phi, &phi, d)));
            }
        }
        traces.push(MethodTrace {
            method,
            norms: table,
            grams,
        });
    }
    Ok(AblationReport { traces })
}

/// Measured per-step norm factors of forward and backward Euler for the
/// rank-2 constant generator `σ (u₁u₂ᵀ − u₂u₁ᵀ)` built from the first cosine
/// and sine modes, starting from `u₁`.
pub fn euler_factors(sigma: f64, steps: usize, points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if steps == 0 || points < 3 {
        return Err(Error::Config("need at least one step and three points".into()));
    }
    let q = QuadratureSet::midpoint_grid(1, points);
    let u = eval_fourier_rows(&[FourierIndex::scalar(vec![1]), FourierIndex::scalar(vec![-1])], &q, 1)?;
    let sk = array![[0.0, sigma], [-sigma, 0.0]];
    let grid = TimeGrid::uniform(steps);
    let mut out = (Vec::new(), Vec::new());
    for (method, factors) in [(Method::EulerForward, &mut out.0), (Method::EulerBackward, &mut out.1)] {
        let mut phi = u.slice(s![0..1, ..]).to_owned();
        for l in 0..steps {
            let (_, dt) = grid.step(l);
            let before = norms(&phi, points)[0];
            phi = step_frozen(method, &(&u * dt.sqrt()), &sk, phi, points, l)?;
            factors.push(norms(&phi, points)[0] / before);
        }
    }
    Ok(out)
}

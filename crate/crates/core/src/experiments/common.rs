use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::GeneratorModel;
use crate::flow::{apply_q_frozen, Method, TimeGrid};
use crate::seeds::{SeedSplitter, Stream};
use crate::space::{gram_rows, FourierIndex, IndexPrior, QuadratureSet, StratifiedDraw};

/// Default prior decay for the supported dimensions.
pub fn default_alpha(dim: usize) -> f64 {
    if dim == 1 {
        1.5
    } else {
        2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Decay exponent; the dimension default when absent.
    pub alpha: Option<f64>,
    pub tie_spread: f64,
    /// Stratum threshold `τ`.
    pub tau: f64,
    /// Tail draws `N_τ` per step.
    pub tail: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            tie_spread: 0.25,
            tau: 1e-3,
            tail: 16,
        }
    }
}

impl PriorConfig {
    pub fn build(&self, dim: usize, channels: usize) -> Result<IndexPrior> {
        IndexPrior::new(dim, channels, self.alpha.unwrap_or(default_alpha(dim)), self.tie_spread)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Integration steps `L`.
    pub steps: usize,
    pub method: Method,
    /// Draw fresh random knots each training step; evaluation always uses a
    /// uniform grid.
    pub random_grid: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            method: Method::Cayley,
            random_grid: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("flow.steps must be positive".into()));
        }
        Ok(())
    }

    pub fn eval_grid(&self) -> TimeGrid {
        TimeGrid::uniform(self.steps)
    }
}

/// Random inputs of one training step.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub points: QuadratureSet,
    pub grid: TimeGrid,
    pub draw: StratifiedDraw,
}

/// Draws points, time grid and indices for `step`. A retry (`attempt > 0`)
/// only resamples the time grid.
pub fn sample_inputs(
    seeds: &SeedSplitter,
    step: u64,
    attempt: u32,
    num_points: usize,
    flow: &FlowConfig,
    prior: &IndexPrior,
    prior_cfg: &PriorConfig,
) -> Result<StepInputs> {
    let points = QuadratureSet::stratified(prior.dim(), num_points, &mut seeds.rng(Stream::Quadrature, step));
    let grid = if flow.random_grid {
        TimeGrid::random(flow.steps, &mut seeds.rng(Stream::TimeGrid, 2 * step + u64::from(attempt.min(1))))
    } else {
        TimeGrid::uniform(flow.steps)
    };
    let draw = StratifiedDraw::new(prior, prior_cfg.tau, prior_cfg.tail, &mut seeds.rng(Stream::Index, step))?;
    Ok(StepInputs { points, grid, draw })
}

/// The learned functions `Q_θ φ_i` for the first `count` prior indices,
/// evaluated on `points` with a uniform grid.
pub fn learned_basis(
    model: &GeneratorModel,
    prior: &IndexPrior,
    count: usize,
    points: &QuadratureSet,
    flow: &FlowConfig,
) -> Result<(Vec<FourierIndex>, Array2<f64>)> {
    let indices = prior.first(count);
    let rows = apply_q_frozen(model, &indices, points, &flow.eval_grid(), flow.method)?;
    Ok((indices, rows))
}

/// `max |⟨f_i, f_j⟩ − δ_ij|` over the rows.
pub fn gram_deviation(rows: &Array2<f64>, num_points: usize) -> f64 {
    let g = gram_rows(rows, rows, num_points);
    g.indexed_iter()
        .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

/// Largest `|‖f_i‖² − ‖g_i‖²|` between matching rows.
pub fn norm_drift(a: &Array2<f64>, b: &Array2<f64>, num_points: usize) -> f64 {
    let inv = 1.0 / num_points as f64;
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| (x.dot(&x) * inv - y.dot(&y) * inv).abs())
        .fold(0.0, f64::max)
}

/// Cosines of the principal angles between the spans of two row families,
/// sorted descending. Sign- and rotation-invariant.
pub fn principal_cosines(a: &Array2<f64>, b: &Array2<f64>) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch {
            op: "principal-angles",
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    let qa = orthonormal_columns(a);
    let qb = orthonormal_columns(b);
    let mut s: Vec<f64> = (qa.transpose() * qb).singular_values().iter().map(|v| v.min(1.0)).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

fn orthonormal_columns(rows: &Array2<f64>) -> DMatrix<f64> {
    let m = DMatrix::from_fn(rows.ncols(), rows.nrows(), |i, j| rows[[j, i]]);
    m.qr().q()
}

/// Cumulative sums of `values`.
pub fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

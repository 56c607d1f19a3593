//! Koopman fitting on the Taylor-Green vortex and energy-tracked rollouts.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::common::{norm_drift, sample_inputs, FlowConfig, PriorConfig};
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::fields::{GeneratorModel, ModelConfig};
use crate::flow::{apply_q_frozen, integrate_frozen};
use crate::objectives::{evolve_draw, koopman_objective, koopman_targets, FlowContext, FlowMap, TaylorGreen};
use crate::seeds::{SeedSplitter, Stream};
use crate::space::{eval_fourier_rows, FourierIndex, IndexPrior, QuadratureSet};
use crate::training::{MetricsLog, StepOutcome, Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoopmanSettings {
    pub vortex: TaylorGreen,
    /// Held-out points for the one-step prediction loss.
    pub eval_points: usize,
    /// Rollout length and midpoint-grid resolution per axis.
    pub rollout_steps: usize,
    pub rollout_grid: usize,
    /// Largest `‖k‖∞` in the random initial condition.
    pub initial_band: i32,
    /// Rollout steps whose fields are kept as snapshots.
    pub snapshots: Vec<usize>,
}

impl Default for KoopmanSettings {
    fn default() -> Self {
        Self {
            vortex: TaylorGreen::default(),
            eval_points: 1024,
            rollout_steps: 20,
            rollout_grid: 64,
            initial_band: 3,
            snapshots: vec![0, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoopmanConfig {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub koopman: KoopmanSettings,
}

impl Default for KoopmanConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                dim: 2,
                rank: 10,
                width: 64,
                depth: 3,
                head_scale: 1.0,
                ..ModelConfig::default()
            },
            prior: PriorConfig {
                tau: 1e-4,
                tail: 32,
                ..PriorConfig::default()
            },
            flow: FlowConfig {
                steps: 50,
                ..FlowConfig::default()
            },
            train: TrainConfig {
                steps: 1200,
                points: 256,
                eval_every: 200,
                ..TrainConfig::default()
            },
            koopman: KoopmanSettings::default(),
        }
    }
}

impl KoopmanConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        self.koopman.vortex.validate()?;
        if self.model.dim != 2 || self.model.channels != 1 {
            return Err(Error::Config("the Taylor-Green flow lives on the scalar 2-torus".into()));
        }
        if self.koopman.rollout_grid == 0 || self.koopman.initial_band < 0 {
            return Err(Error::Config("koopman.rollout_grid must be positive".into()));
        }
        Ok(())
    }
}

pub struct KoopmanTask {
    pub config: KoopmanConfig,
    pub model: GeneratorModel,
    pub prior: IndexPrior,
    pub seed: u64,
    eval_points: QuadratureSet,
    eval_indices: Vec<FourierIndex>,
    eval_targets: Array2<f64>,
}

impl KoopmanTask {
    pub fn new(config: KoopmanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let seeds = SeedSplitter::new(seed);
        let model = GeneratorModel::new(config.model.clone(), &mut seeds.rng(Stream::Init, 0))?;
        let prior = config.prior.build(2, 1)?;
        let eval_points = QuadratureSet::stratified(2, config.koopman.eval_points, &mut seeds.rng(Stream::Eval, 0));
        let eval_indices = prior.first(prior.stratum_len(config.prior.tau)?);
        let eval_targets = koopman_targets(&eval_indices, &eval_points, &config.koopman.vortex, 1)?;
        Ok(Self {
            config,
            model,
            prior,
            seed,
            eval_points,
            eval_indices,
            eval_targets,
        })
    }

    /// One-step prediction loss `Σ_{i∈S} p(i) ‖Q φ_i − φ_i∘Ψ‖²` over the
    /// stratum on the held-out points, with a uniform time grid.
    pub fn prediction_loss(&self) -> Result<f64> {
        let out = apply_q_frozen(
            &self.model,
            &self.eval_indices,
            &self.eval_points,
            &self.config.flow.eval_grid(),
            self.config.flow.method,
        )?;
        let d = self.eval_points.len() as f64;
        Ok((&out - &self.eval_targets)
            .rows()
            .into_iter()
            .enumerate()
            .map(|(e, r)| self.prior.weight_at(e) * r.dot(&r) / d)
            .sum())
    }

    /// Random band-limited initial condition: stratum modes with
    /// `‖k‖∞ ≤ band`, Gaussian coefficients damped by `1/(1+‖k‖²)`.
    pub fn initial_condition(&self) -> (Vec<FourierIndex>, Vec<f64>) {
        let band = self.config.koopman.initial_band;
        let mut rng = SeedSplitter::new(self.seed).rng(Stream::Aux, 0);
        let indices: Vec<FourierIndex> = self
            .eval_indices
            .iter()
            .filter(|i| i.spatial.iter().all(|k| k.abs() <= band))
            .cloned()
            .collect();
        let coeffs = indices
            .iter()
            .map(|i| rng.sample::<f64, _>(StandardNormal) / (1.0 + i.norm2() as f64))
            .collect();
        (indices, coeffs)
    }

    /// Energy traces of `Q_θⁿ f₀` and of `f₀ ∘ Ψ⁻ⁿ` with Runge-Kutta
    /// solvers of order 1, 2 and 4, on a midpoint grid.
    pub fn rollout(&self, steps: usize) -> Result<RolloutReport> {
        let s = &self.config.koopman;
        let grid = QuadratureSet::midpoint_grid(2, s.rollout_grid);
        let d = grid.len();
        let (indices, coeffs) = self.initial_condition();
        let coeffs = Array1::from(coeffs);
        let eval = |pts: &QuadratureSet| -> Result<Array1<f64>> { Ok(coeffs.dot(&eval_fourier_rows(&indices, pts, 1)?)) };
        let energy = |f: &Array1<f64>| f.dot(f) / d as f64;

        let f0 = eval(&grid)?;
        let cache = self.model.prepare(&grid)?;
        let time = self.config.flow.eval_grid();
        let mut learned = vec![energy(&f0)];
        let mut snapshots = Vec::new();
        let mut f = f0.clone().insert_axis(ndarray::Axis(0));
        let keep = |n: usize| s.snapshots.contains(&n);
        if keep(0) {
            snapshots.push((0, f0.clone(), f0.clone()));
        }
        let mut baselines = Vec::new();
        for order in [1u8, 2, 4] {
            let inverse = s.vortex.with_order(order).inverse();
            let mut pts = grid.clone();
            let mut trace = vec![energy(&f0)];
            let mut kept = Vec::new();
            for n in 1..=steps {
                pts = inverse.apply(&pts)?;
                let v = eval(&pts)?;
                trace.push(energy(&v));
                if order == 4 && keep(n) {
                    kept.push(v);
                }
            }
            baselines.push((trace, kept));
        }
        let mut rk4_kept = baselines[2].1.clone().into_iter();
        for n in 1..=steps {
            f = integrate_frozen(&self.model, &time, &cache, f, self.config.flow.method)?;
            let row = f.row(0).to_owned();
            learned.push(energy(&row));
            if keep(n) {
                snapshots.push((n, row, rk4_kept.next().expect("one per kept step")));
            }
        }
        let mut it = baselines.into_iter().map(|b| b.0);
        Ok(RolloutReport {
            learned,
            rk1: it.next().expect("three orders"),
            rk2: it.next().expect("three orders"),
            rk4: it.next().expect("three orders"),
            snapshots,
            grid: s.rollout_grid,
        })
    }
}

/// Energy per rollout step (entry 0 is the initial condition).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub learned: Vec<f64>,
    pub rk1: Vec<f64>,
    pub rk2: Vec<f64>,
    pub rk4: Vec<f64>,
    /// `(step, learned field, RK4 field)` on the grid, row-major.
    pub snapshots: Vec<(usize, Array1<f64>, Array1<f64>)>,
    pub grid: usize,
}

/// Largest `|E_n − E_0| / E_0` along a trace.
pub fn relative_drift(trace: &[f64]) -> f64 {
    let e0 = trace[0];
    trace.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
}

impl RolloutReport {
    pub fn table(&self) -> MetricsLog {
        let mut log = MetricsLog::new(["step", "learned", "rk1", "rk2", "rk4"].map(String::from).to_vec());
        for n in 0..self.learned.len() {
            log.push(vec![n as f64, self.learned[n], self.rk1[n], self.rk2[n], self.rk4[n]])
                .expect("fixed width");
        }
        log
    }

    pub fn snapshot_table(&self) -> MetricsLog {
        let mut log = MetricsLog::new(["step", "x", "y", "learned", "rk4"].map(String::from).to_vec());
        let g = self.grid;
        for (n, a, b) in &self.snapshots {
            for (j, (u, v)) in a.iter().zip(b).enumerate() {
                let (x, y) = ((j / g) as f64 + 0.5, (j % g) as f64 + 0.5);
                log.push(vec![*n as f64, x / g as f64, y / g as f64, *u, *v]).expect("fixed width");
            }
        }
        log
    }
}

impl Task for KoopmanTask {
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
        let targets = koopman_targets(&inp.draw.indices, &inp.points, &cfg.koopman.vortex, 1)?;
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
        let loss = koopman_objective(evolved, &inp.draw, &targets)?;
        let grads = g.backward(loss)?;
        let phi0 = eval_fourier_rows(&inp.draw.indices, &inp.points, 1)?;
        Ok(StepOutcome {
            grads: vec![p.grads(&grads)],
            metrics: vec![loss.item(), norm_drift(&evolved.value(), &phi0, inp.points.len())],
        })
    }

    fn eval_names(&self) -> Vec<String> {
        vec!["prediction_loss".into()]
    }

    fn evaluate(&mut self, _: &SeedSplitter) -> Result<Vec<f64>> {
        Ok(vec![self.prediction_loss()?])
    }
}

//! Functional PCA on the synthetic jump signals.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::baselines::{grid_nodes, projection_curve, FinitePca, ReconstructionCurve};
use super::common::{gram_deviation, learned_basis, norm_drift, sample_inputs, FlowConfig, PriorConfig};
use super::synthetic::Synthetic1D;
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::fields::{GeneratorModel, MeanField, MeanFieldConfig, ModelConfig};
use crate::objectives::{evolve_draw, pca_terms, FlowContext, FunctionDataset};
use crate::seeds::{SeedSplitter, Stream};
use crate::space::{eval_fourier_rows, IndexPrior, QuadratureSet};
use crate::training::{MetricsLog, Schedule, StepOutcome, Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSettings {
    /// Data functions per step.
    pub batch: usize,
    /// Held-out signals for periodic evaluation.
    pub eval_samples: usize,
    /// Random held-out points for the orthonormality check.
    pub gram_points: usize,
    /// Held-out signals and midpoint-grid size of the final report.
    pub report_samples: usize,
    pub report_points: usize,
    pub max_cutoff: usize,
    /// Grid size and training signals of the finite-PCA baseline.
    pub finite_grid: usize,
    pub finite_samples: usize,
}

impl Default for PcaSettings {
    fn default() -> Self {
        Self {
            batch: 8,
            eval_samples: 64,
            gram_points: 4096,
            report_samples: 256,
            report_points: 4096,
            max_cutoff: 128,
            finite_grid: 64,
            finite_samples: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub model: ModelConfig,
    pub mean: MeanFieldConfig,
    pub prior: PriorConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub pca: PcaSettings,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                dim: 1,
                rank: 30,
                width: 128,
                max_freq: 256.0,
                ..ModelConfig::default()
            },
            mean: MeanFieldConfig::default(),
            prior: PriorConfig {
                tau: 1e-3,
                tail: 16,
                ..PriorConfig::default()
            },
            flow: FlowConfig {
                steps: 20,
                ..FlowConfig::default()
            },
            train: TrainConfig {
                steps: 2500,
                points: 64,
                eval_every: 500,
                schedule: Schedule::Cosine,
                ..TrainConfig::default()
            },
            pca: PcaSettings::default(),
        }
    }
}

impl PcaConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        if self.model.dim != 1 || self.model.channels != 1 {
            return Err(Error::Config("the synthetic PCA data is scalar and one-dimensional".into()));
        }
        let p = &self.pca;
        if p.batch == 0 || p.eval_samples == 0 || p.report_samples == 0 || p.max_cutoff == 0 || p.finite_grid < 2 {
            return Err(Error::Config("pca sizes must be positive (finite_grid ≥ 2)".into()));
        }
        Ok(())
    }
}

pub struct PcaTask {
    pub config: PcaConfig,
    pub model: GeneratorModel,
    pub mean: MeanField,
    pub prior: IndexPrior,
    pub seed: u64,
    train_data: Synthetic1D,
    eval_data: Synthetic1D,
    eval_points: QuadratureSet,
    stratum_len: usize,
}

impl PcaTask {
    pub fn new(config: PcaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let seeds = SeedSplitter::new(seed);
        let model = GeneratorModel::new(config.model.clone(), &mut seeds.rng(Stream::Init, 0))?;
        let mean = MeanField::new(1, 1, &config.mean, &mut seeds.rng(Stream::Init, 1))?;
        let prior = config.prior.build(1, 1)?;
        let stratum_len = prior.stratum_len(config.prior.tau)?;
        let eval_points = QuadratureSet::stratified(1, config.pca.gram_points, &mut seeds.rng(Stream::Eval, 0));
        Ok(Self {
            model,
            mean,
            prior,
            seed,
            train_data: Synthetic1D::new(seed),
            eval_data: Synthetic1D::with_stream(seed, Stream::Eval),
            eval_points,
            stratum_len,
            config,
        })
    }

    fn held_out(&self, count: usize, points: &QuadratureSet) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((count, points.len()));
        for (s, mut row) in out.rows_mut().into_iter().enumerate() {
            row.assign(&self.eval_data.eval(s as u64, points)?.column(0));
        }
        Ok(out)
    }

    fn mean_on(&self, points: &QuadratureSet) -> Result<Array1<f64>> {
        let g = Graph::new();
        let p = self.mean.params().bind_frozen(&g);
        let v = self.mean.eval(&g, &p, points)?.value();
        Ok(v.column(0).to_owned())
    }

    /// Learned, Fourier and finite-PCA curves on a dense midpoint grid.
    pub fn report(&self) -> Result<PcaReport> {
        let s = &self.config.pca;
        let grid = QuadratureSet::midpoint_grid(1, s.report_points);
        let xs: Vec<f64> = grid.points().column(0).to_vec();
        let samples = self.held_out(s.report_samples, &grid)?;

        let (indices, learned) = learned_basis(&self.model, &self.prior, s.max_cutoff, &grid, &self.config.flow)?;
        let learned_curve = projection_curve(&learned, &self.mean_on(&grid)?, &samples)?;

        let fourier = eval_fourier_rows(&indices, &grid, 1)?;
        let fourier_curve = projection_curve(&fourier, &Array1::zeros(grid.len()), &samples)?;

        let nodes = grid_nodes(s.finite_grid);
        let mut train = Array2::zeros((s.finite_samples, s.finite_grid));
        for (i, mut row) in train.rows_mut().into_iter().enumerate() {
            row.assign(&Array1::from(self.train_data.values(i as u64, &nodes)));
        }
        let finite = FinitePca::fit(&train, s.finite_grid)?;
        let mut held_grid = Array2::zeros((s.report_samples, s.finite_grid));
        for (i, mut row) in held_grid.rows_mut().into_iter().enumerate() {
            row.assign(&Array1::from(self.eval_data.values(i as u64, &nodes)));
        }
        let finite_curve = finite.curve(&held_grid, &samples, &xs, s.max_cutoff);

        let stratum = learned.slice(ndarray::s![..self.stratum_len.min(learned.nrows()), ..]).to_owned();
        Ok(PcaReport {
            learned: learned_curve,
            fourier: fourier_curve,
            finite: finite_curve,
            gram_deviation: gram_deviation(&stratum, grid.len()),
        })
    }
}

/// Curves indexed by cutoff `1..=max_cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaReport {
    pub learned: ReconstructionCurve,
    pub fourier: ReconstructionCurve,
    pub finite: ReconstructionCurve,
    pub gram_deviation: f64,
}

impl PcaReport {
    pub fn table(&self) -> MetricsLog {
        let mut log = MetricsLog::new(
            [
                "cutoff",
                "learned_error",
                "fourier_error",
                "finite_pca_error",
                "learned_energy",
                "fourier_energy",
                "finite_pca_energy",
            ]
            .map(String::from)
            .to_vec(),
        );
        for n in 0..self.learned.error.len() {
            log.push(vec![
                (n + 1) as f64,
                self.learned.error[n],
                self.fourier.error[n],
                self.finite.error[n],
                self.learned.energy[n],
                self.fourier.energy[n],
                self.finite.energy[n],
            ])
            .expect("fixed width");
        }
        log
    }
}

impl Task for PcaTask {
    fn group_names(&self) -> Vec<String> {
        vec!["generator".into(), "mean".into()]
    }

    fn group(&self, i: usize) -> &ParamStore {
        if i == 0 {
            self.model.params()
        } else {
            self.mean.params()
        }
    }

    fn group_mut(&mut self, i: usize) -> &mut ParamStore {
        if i == 0 {
            self.model.params_mut()
        } else {
            self.mean.params_mut()
        }
    }

    fn metric_names(&self) -> Vec<String> {
        vec!["objective".into(), "mean_error".into(), "norm_drift".into()]
    }

    fn step(&mut self, step: u64, attempt: u32, seeds: &SeedSplitter) -> Result<StepOutcome> {
        let cfg = &self.config;
        let inp = sample_inputs(seeds, step, attempt, cfg.train.points, &cfg.flow, &self.prior, &cfg.prior)?;
        let d = inp.points.len();
        let cache = self.model.prepare(&inp.points)?;
        let g = Graph::new();
        let pt = self.model.params().bind(&g);
        let pm = self.mean.params().bind(&g);
        let ctx = FlowContext {
            points: &inp.points,
            cache: &cache,
            grid: &inp.grid,
            method: cfg.flow.method,
        };
        let evolved = evolve_draw(&self.model, &g, &pt, &inp.draw, ctx)?;
        let mean = self.mean.eval_row(&g, &pm, &inp.points)?;
        let batch = cfg.pca.batch;
        let mut explained = g.constant(Array2::zeros((1, 1)));
        let mut mean_error = explained;
        for b in 0..batch as u64 {
            let x = g.constant(self.train_data.eval_row(step * batch as u64 + b, &inp.points)?);
            let terms = pca_terms(evolved, &inp.draw, x, mean, d)?;
            explained = explained.add(terms.explained)?;
            mean_error = mean_error.add(terms.mean_error)?;
        }
        let explained = explained.scale(1.0 / batch as f64);
        let mean_error = mean_error.scale(1.0 / batch as f64);
        let grads = g.backward(mean_error.sub(explained)?)?;
        let phi0 = eval_fourier_rows(&inp.draw.indices, &inp.points, 1)?;
        let drift = norm_drift(&evolved.value(), &phi0, d);
        Ok(StepOutcome {
            grads: vec![pt.grads(&grads), pm.grads(&grads)],
            metrics: vec![explained.item(), mean_error.item(), drift],
        })
    }

    fn eval_names(&self) -> Vec<String> {
        vec!["gram_deviation".into(), "energy_16".into(), "fourier_energy_16".into()]
    }

    fn evaluate(&mut self, _seeds: &SeedSplitter) -> Result<Vec<f64>> {
        let count = self.stratum_len.max(16);
        let pts = &self.eval_points;
        let (indices, basis) = learned_basis(&self.model, &self.prior, count, pts, &self.config.flow)?;
        let samples = self.held_out(self.config.pca.eval_samples, pts)?;
        let learned = projection_curve(&basis, &self.mean_on(pts)?, &samples)?;
        let fourier = projection_curve(&eval_fourier_rows(&indices, pts, 1)?, &Array1::zeros(pts.len()), &samples)?;
        let stratum = basis.slice(ndarray::s![..self.stratum_len, ..]).to_owned();
        Ok(vec![gram_deviation(&stratum, pts.len()), learned.energy_at(16), fourier.energy_at(16)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Trainer;

    pub(crate) fn tiny() -> PcaConfig {
        let mut c = PcaConfig::default();
        c.model.width = 16;
        c.model.depth = 2;
        c.model.time_freqs = 8;
        c.model.rank = 4;
        c.model.residual_hidden = vec![8];
        c.model.mix_hidden = vec![8];
        c.mean.hidden = vec![8];
        c.mean.features = 8;
        c.flow.steps = 3;
        c.train.points = 16;
        c.train.steps = 4;
        c.train.eval_every = 2;
        c.pca.batch = 2;
        c.pca.eval_samples = 4;
        c.pca.gram_points = 64;
        c.pca.report_samples = 8;
        c.pca.report_points = 128;
        c.pca.max_cutoff = 20;
        c.pca.finite_grid = 16;
        c.pca.finite_samples = 32;
        c
    }

    #[test]
    fn objective_halves_are_decoupled() {
        let mut task = PcaTask::new(tiny(), 1).unwrap();
        let cfg = task.config.clone();
        let seeds = SeedSplitter::new(1);
        let inp = sample_inputs(&seeds, 0, 0, 16, &cfg.flow, &task.prior, &cfg.prior).unwrap();
        let cache = task.model.prepare(&inp.points).unwrap();
        let g = Graph::new();
        let pt = task.model.params().bind(&g);
        let pm = task.mean.params().bind(&g);
        let ctx = FlowContext {
            points: &inp.points,
            cache: &cache,
            grid: &inp.grid,
            method: cfg.flow.method,
        };
        let evolved = evolve_draw(&task.model, &g, &pt, &inp.draw, ctx).unwrap();
        let mean = task.mean.eval_row(&g, &pm, &inp.points).unwrap();
        let x = g.constant(task.train_data.eval_row(0, &inp.points).unwrap());
        let terms = pca_terms(evolved, &inp.draw, x, mean, 16).unwrap();
        let gj = g.backward(terms.explained).unwrap();
        assert!(pm.grads(&gj).iter().all(|a| a.iter().all(|v| *v == 0.0)));
        assert!(pt.grads(&gj).iter().any(|a| a.iter().any(|v| *v != 0.0)));
        let gm = g.backward(terms.mean_error).unwrap();
        assert!(pt.grads(&gm).iter().all(|a| a.iter().all(|v| *v == 0.0)));
        let _ = task.step(0, 0, &seeds).unwrap();
    }

    #[test]
    fn short_run_is_deterministic_and_reports() {
        let run = || {
            let task = PcaTask::new(tiny(), 3).unwrap();
            let cfg = task.config.train.clone();
            let mut t = Trainer::new(task, cfg, 3).unwrap();
            t.run(|_| Ok(())).unwrap();
            (t.metrics.to_csv().unwrap(), t.evals.to_csv().unwrap(), t)
        };
        let (a, ea, t) = run();
        let (b, eb, _) = run();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        assert_eq!(t.evals.len(), 3);
        let drift = t.metrics.column("norm_drift").unwrap();
        assert!(drift.iter().all(|v| *v < 1e-10), "{drift:?}");

        let report = t.task.report().unwrap();
        assert!(report.gram_deviation < 1e-10);
        for c in [&report.learned, &report.fourier, &report.finite] {
            assert_eq!(c.error.len(), 20);
            assert!(c.energy.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
        assert_eq!(report.table().len(), 20);
    }
}

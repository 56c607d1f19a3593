use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::Checkpoint;
use super::metrics::MetricsLog;
use crate::autodiff::{Array, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::seeds::SeedSplitter;

/// Learning-rate schedule over the step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero at `steps`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Quadrature size `D` per training step.
    pub points: usize,
    /// Evaluation interval in steps; `0` evaluates only at the end.
    pub eval_every: u64,
    /// Checkpoint interval in steps; `0` writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub lr: f64,
    pub schedule: Schedule,
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            points: 64,
            eval_every: 250,
            checkpoint_every: 0,
            lr: 1e-3,
            schedule: Schedule::Constant,
            clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip: self.clip,
            ..AdamConfig::default()
        }
    }

    /// Learning rate for the update that completes step `step + 1`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let frac = (step as f64 / self.steps.max(1) as f64).min(1.0);
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Config("train.points must be positive".into()));
        }
        if !(self.lr > 0.0) || self.clip < 0.0 {
            return Err(Error::Config("train.lr must be positive and train.clip non-negative".into()));
        }
        Ok(())
    }
}

/// Gradients for every parameter group plus the step's scalar metrics.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub grads: Vec<Vec<Array>>,
    pub metrics: Vec<f64>,
}

/// A trainable experiment: parameter groups with independent optimizers, a
/// seeded step and an optional held-out evaluation.
pub trait Task {
    fn group_names(&self) -> Vec<String>;

    fn group(&self, i: usize) -> &ParamStore;

    fn group_mut(&mut self, i: usize) -> &mut ParamStore;

    /// Names of the per-step metrics; the first is the objective.
    fn metric_names(&self) -> Vec<String>;

    /// Computes gradients for step `step`. All randomness must come from
    /// `seeds` at counter `step` (salted by `attempt` on retries).
    fn step(&mut self, step: u64, attempt: u32, seeds: &SeedSplitter) -> Result<StepOutcome>;

    fn eval_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn evaluate(&mut self, _seeds: &SeedSplitter) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

pub struct Trainer<T: Task> {
    pub task: T,
    pub optimizers: Vec<Adam>,
    pub step: u64,
    pub seeds: SeedSplitter,
    pub config: TrainConfig,
    pub metrics: MetricsLog,
    pub evals: MetricsLog,
}

impl<T: Task> Trainer<T> {
    pub fn new(task: T, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizers = (0..task.group_names().len())
            .map(|i| Adam::new(config.adam(), task.group(i)))
            .collect();
        let mut header = vec!["step".to_string()];
        header.extend(task.metric_names());
        header.extend(task.group_names().iter().map(|g| format!("grad_norm_{g}")));
        let mut eval_header = vec!["step".to_string()];
        eval_header.extend(task.eval_names());
        Ok(Self {
            task,
            optimizers,
            step: 0,
            seeds: SeedSplitter::new(seed),
            config,
            metrics: MetricsLog::new(header),
            evals: MetricsLog::new(eval_header),
        })
    }

    /// One optimization step, retried once with a fresh draw when the
    /// integrator hits a singular solve.
    pub fn train_step(&mut self) -> Result<()> {
        let outcome = match self.task.step(self.step, 0, &self.seeds) {
            Err(Error::Integration { .. }) => self.task.step(self.step, 1, &self.seeds)?,
            other => other?,
        };
        let mut row = vec![(self.step + 1) as f64];
        row.extend(&outcome.metrics);
        let lr = self.config.lr_at(self.step);
        for (i, grads) in outcome.grads.into_iter().enumerate() {
            self.optimizers[i].config.lr = lr;
            let norm = self.optimizers[i].update(self.task.group_mut(i), grads)?;
            row.push(norm);
        }
        self.metrics.push(row)?;
        self.step += 1;
        Ok(())
    }

    pub fn evaluate(&mut self) -> Result<()> {
        if self.task.eval_names().is_empty() {
            return Ok(());
        }
        let vals = self.task.evaluate(&self.seeds)?;
        let mut row = vec![self.step as f64];
        row.extend(vals);
        self.evals.push(row)
    }

    /// Trains until `config.steps`, calling `after_step` once per step.
    /// Trains to the step budget, evaluating before the first step, every
    /// `eval_every` steps and once at the end.
    pub fn run(&mut self, mut after_step: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        if self.step == 0 && self.config.eval_every > 0 && self.config.steps > 0 {
            self.evaluate()?;
        }
        while self.step < self.config.steps {
            self.train_step()?;
            if self.config.eval_every > 0 && self.step.is_multiple_of(self.config.eval_every) && self.step < self.config.steps {
                self.evaluate()?;
            }
            after_step(self)?;
        }
        self.evaluate()
    }

    pub fn checkpoint(&self, config_text: &str) -> Checkpoint {
        let mut ck = Checkpoint {
            config: config_text.to_string(),
            step: self.step,
            records: Vec::new(),
        };
        for (i, g) in self.task.group_names().iter().enumerate() {
            let store = self.task.group(i);
            let opt = &self.optimizers[i];
            for (j, (name, value)) in store.iter().enumerate() {
                ck.push_array(format!("{g}/{name}"), value);
                ck.push_array(format!("opt/{g}/m/{name}"), &opt.m[j]);
                ck.push_array(format!("opt/{g}/v/{name}"), &opt.v[j]);
            }
            ck.push_u64(format!("opt/{g}/step"), vec![opt.step]);
        }
        ck
    }

    /// Restores parameters, optimizer moments and the step counter.
    /// Metric logs restart empty.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        for (i, g) in self.task.group_names().iter().enumerate() {
            let names: Vec<String> = self.task.group(i).iter().map(|(n, _)| n.to_string()).collect();
            for (j, name) in names.iter().enumerate() {
                let value = ck.array(&format!("{g}/{name}"))?.clone();
                let target = self.task.group_mut(i).get_mut(ParamId(j));
                if target.dim() != value.dim() {
                    return Err(Error::ShapeMismatch {
                        op: "restore",
                        lhs: target.dim(),
                        rhs: value.dim(),
                    });
                }
                *target = value;
                self.optimizers[i].m[j] = ck.array(&format!("opt/{g}/m/{name}"))?.clone();
                self.optimizers[i].v[j] = ck.array(&format!("opt/{g}/v/{name}"))?.clone();
            }
            self.optimizers[i].step = *ck
                .u64s(&format!("opt/{g}/step"))?
                .first()
                .ok_or_else(|| Error::Format("empty optimizer step".into()))?;
        }
        self.step = ck.step;
        Ok(())
    }
}

//! Eigenfunctions of the neural tangent kernel of a two-moons classifier,
//! learned and from a grid eigensolver.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::common::{learned_basis, norm_drift, principal_cosines, sample_inputs, FlowConfig, PriorConfig};
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::fields::{GeneratorModel, ModelConfig};
use crate::objectives::{evolve_draw, ntk_objective, FlowContext, FrozenNetwork, KernelOperator};
use crate::seeds::{SeedSplitter, Stream};
use crate::space::{eval_fourier_rows, IndexPrior, QuadratureSet};
use crate::training::{Adam, AdamConfig, StepOutcome, Task, TrainConfig};

/// Largest kernel matrix the grid eigensolver will build.
pub const MAX_GRID_ENTRIES: usize = 4096 * 4096;

/// Two interleaved half circles with Gaussian noise, mapped affinely (one
/// scale for both axes) into `[0.15, 0.85]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMoons {
    pub points: Array2<f64>,
    /// 0 for the outer moon, 1 for the inner one.
    pub labels: Vec<f64>,
}

impl TwoMoons {
    pub fn generate<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Self {
        let outer = n / 2;
        let inner = n - outer;
        let lin = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
        let mut raw = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..outer {
            let t = lin(i, outer);
            raw.push((t.cos(), t.sin()));
            labels.push(0.0);
        }
        for i in 0..inner {
            let t = lin(i, inner);
            raw.push((1.0 - t.cos(), 1.0 - t.sin() - 0.5));
            labels.push(1.0);
        }
        for p in &mut raw {
            p.0 += noise * rng.sample::<f64, _>(StandardNormal);
            p.1 += noise * rng.sample::<f64, _>(StandardNormal);
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &raw {
            lo = [lo[0].min(p.0), lo[1].min(p.1)];
            hi = [hi[0].max(p.0), hi[1].max(p.1)];
        }
        let scale = 0.7 / (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let points = Array2::from_shape_fn((n, 2), |(i, a)| {
            let v = if a == 0 { raw[i].0 } else { raw[i].1 };
            0.5 + (v - mid[a]) * scale
        });
        Self { points, labels }
    }
}

/// `2 → h → h → 1` tanh network with a flat parameter vector laid out as
/// `W1 (h×2), b1, W2 (h×h), b2, w3, b3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub hidden: usize,
    pub params: Vec<f64>,
}

struct Activations {
    h1: Array2<f64>,
    h2: Array2<f64>,
    out: Array2<f64>,
}

impl Classifier {
    pub fn num_params_for(hidden: usize) -> usize {
        hidden * 2 + hidden + hidden * hidden + hidden + hidden + 1
    }

    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let h = hidden;
        let mut params = Vec::with_capacity(Self::num_params_for(h));
        let mut push = |count: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..count {
                params.push(rng.random_range(-a..=a));
            }
        };
        push(2 * h, 2);
        push(h, 2);
        push(h * h, h);
        push(h, h);
        push(h, h);
        push(1, h);
        Self { hidden, params }
    }

    #[allow(clippy::type_complexity)]
    fn parts(&self) -> (Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>, Array1<f64>, f64) {
        let h = self.hidden;
        let p = &self.params;
        let mut o = 0;
        let mut take = |n: usize| {
            let s = &p[o..o + n];
            o += n;
            s.to_vec()
        };
        let w1 = Array2::from_shape_vec((h, 2), take(2 * h)).expect("layout");
        let b1 = Array1::from(take(h));
        let w2 = Array2::from_shape_vec((h, h), take(h * h)).expect("layout");
        let b2 = Array1::from(take(h));
        let w3 = Array1::from(take(h));
        let b3 = take(1)[0];
        (w1, b1, w2, b2, w3, b3)
    }

    fn activations(&self, points: &Array2<f64>) -> Activations {
        let (w1, b1, w2, b2, w3, b3) = self.parts();
        let h1 = (points.dot(&w1.t()) + &b1).mapv(f64::tanh);
        let h2 = (h1.dot(&w2.t()) + &b2).mapv(f64::tanh);
        let out = (h2.dot(&w3) + b3).insert_axis(Axis(1));
        Activations { h1, h2, out }
    }

    /// Mean logistic loss and its gradient.
    pub fn loss_and_grad(&self, data: &TwoMoons) -> (f64, Vec<f64>) {
        let n = data.labels.len() as f64;
        let logits = self.forward(&data.points);
        let mut loss = 0.0;
        let mut resid = Array1::zeros(data.labels.len());
        for (j, (&z, &y)) in logits.column(0).iter().zip(&data.labels).enumerate() {
            // log(1 + e^z) − y z, computed stably.
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            resid[j] = (1.0 / (1.0 + (-z).exp()) - y) / n;
        }
        let g = self.param_gradients(&data.points);
        (loss / n, g.t().dot(&resid).to_vec())
    }

    pub fn accuracy(&self, data: &TwoMoons) -> f64 {
        let logits = self.forward(&data.points);
        let hits = logits
            .column(0)
            .iter()
            .zip(&data.labels)
            .filter(|(z, y)| (**z > 0.0) == (**y > 0.5))
            .count();
        hits as f64 / data.labels.len() as f64
    }
}

impl FrozenNetwork for Classifier {
    fn dim(&self) -> usize {
        2
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn forward(&self, points: &Array2<f64>) -> Array2<f64> {
        self.activations(points).out
    }

    fn param_gradients(&self, points: &Array2<f64>) -> Array2<f64> {
        let h = self.hidden;
        let (_, _, w2, _, w3, _) = self.parts();
        let a = self.activations(points);
        let delta2 = (1.0 - &a.h2.mapv(|v| v * v)) * &w3;
        let delta1 = delta2.dot(&w2) * (1.0 - &a.h1.mapv(|v| v * v));
        let mut g = Array2::zeros((points.nrows(), self.params.len()));
        for (j, mut row) in g.rows_mut().into_iter().enumerate() {
            let r = row.as_slice_mut().expect("row-major");
            let (x, d1, d2, h1, h2) = (points.row(j), delta1.row(j), delta2.row(j), a.h1.row(j), a.h2.row(j));
            let mut o = 0;
            for i in 0..h {
                r[o + 2 * i] = d1[i] * x[0];
                r[o + 2 * i + 1] = d1[i] * x[1];
            }
            o += 2 * h;
            r[o..o + h].copy_from_slice(d1.as_slice().expect("row-major"));
            o += h;
            for i in 0..h {
                for k in 0..h {
                    r[o + i * h + k] = d2[i] * h1[k];
                }
            }
            o += h * h;
            r[o..o + h].copy_from_slice(d2.as_slice().expect("row-major"));
            o += h;
            r[o..o + h].copy_from_slice(h2.as_slice().expect("row-major"));
            r[o + h] = 1.0;
        }
        g
    }
}

/// Full-batch Adam on the logistic loss, keeping the network after each
/// step count listed in `snapshots`.
pub fn train_classifier(
    data: &TwoMoons,
    mut net: Classifier,
    config: AdamConfig,
    snapshots: &[u64],
) -> Result<Vec<(u64, Classifier)>> {
    let mut store = ParamStore::new();
    store.add("xi", Array2::from_shape_vec((1, net.params.len()), net.params.clone()).expect("row"));
    let mut adam = Adam::new(config, &store);
    let last = snapshots.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for step in 1..=last {
        let (_, g) = net.loss_and_grad(data);
        let g = Array2::from_shape_vec((1, g.len()), g).expect("row");
        adam.update(&mut store, vec![g])?;
        net.params = store.values()[0].iter().copied().collect();
        if snapshots.contains(&step) {
            out.push((step, net.clone()));
        }
    }
    Ok(out)
}

/// Top eigenpairs of the kernel integral operator discretized on a
/// midpoint grid with weights `1/G²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEigen {
    pub grid: usize,
    pub eigenvalues: Vec<f64>,
    /// Eigenfunctions on the grid as rows, with `(1/G²) Σ f² = 1`.
    pub functions: Array2<f64>,
}

pub fn ntk_grid_baseline(net: &dyn FrozenNetwork, grid: usize, k: usize) -> Result<GridEigen> {
    let q = QuadratureSet::midpoint_grid(net.dim(), grid);
    let d = q.len();
    if d.saturating_mul(d) > MAX_GRID_ENTRIES {
        return Err(Error::Config(format!(
            "a {grid}-per-axis grid needs a {d}×{d} kernel matrix, above the {MAX_GRID_ENTRIES}-entry limit"
        )));
    }
    if k == 0 || k > d {
        return Err(Error::Config(format!("cannot take {k} eigenpairs of a {d}-point grid")));
    }
    let g = net.param_gradients(q.points());
    let a = g.dot(&g.t()) / d as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| 0.5 * (a[[i, j]] + a[[j, i]])));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let scale = (d as f64).sqrt();
    let functions = Array2::from_shape_fn((k, d), |(m, j)| scale * eig.eigenvectors[(j, order[m])]);
    let eigenvalues = order.iter().map(|&m| eig.eigenvalues[m]).collect();
    Ok(GridEigen {
        grid,
        eigenvalues,
        functions,
    })
}

/// NTK as a pointwise kernel, `κ(x, y) = ∇_ξ MLP(x) · ∇_ξ MLP(y)`.
pub fn ntk_pointwise<N: FrozenNetwork + Send + Sync + 'static>(net: Arc<N>) -> KernelOperator {
    KernelOperator::kernel(move |x, y| {
        let p = Array2::from_shape_vec((2, x.len()), x.iter().chain(y).copied().collect()).expect("two points");
        let g = net.param_gradients(&p);
        g.row(0).dot(&g.row(1))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NtkSettings {
    pub samples: usize,
    pub noise: f64,
    pub hidden: usize,
    pub classifier_lr: f64,
    /// Classifier step counts at which the network is frozen.
    pub snapshots: Vec<u64>,
    /// The snapshot whose kernel is diagonalized by the learned basis.
    pub stage: u64,
    /// Grid resolution per axis of the eigensolver baseline.
    pub grid: usize,
    pub top_k: usize,
}

impl Default for NtkSettings {
    fn default() -> Self {
        Self {
            samples: 200,
            noise: 0.1,
            hidden: 64,
            classifier_lr: 1e-3,
            snapshots: vec![1, 250, 500, 5000],
            stage: 5000,
            grid: 32,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NtkConfig {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub ntk: NtkSettings,
}

impl Default for NtkConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                dim: 2,
                rank: 10,
                width: 64,
                depth: 3,
                ..ModelConfig::default()
            },
            prior: PriorConfig {
                tau: 7e-4,
                tail: 32,
                ..PriorConfig::default()
            },
            flow: FlowConfig {
                steps: 20,
                ..FlowConfig::default()
            },
            train: TrainConfig {
                steps: 2000,
                points: 256,
                eval_every: 250,
                ..TrainConfig::default()
            },
            ntk: NtkSettings::default(),
        }
    }
}

impl NtkConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        if self.model.dim != 2 || self.model.channels != 1 {
            return Err(Error::Config("the two-moons NTK lives on the scalar unit square".into()));
        }
        let n = &self.ntk;
        if !n.snapshots.contains(&n.stage) {
            return Err(Error::Config(format!("ntk.stage {} is not among ntk.snapshots", n.stage)));
        }
        if n.samples < 2 || n.hidden == 0 || n.top_k == 0 {
            return Err(Error::Config("ntk sizes must be positive".into()));
        }
        Ok(())
    }
}

pub struct NtkTask {
    pub config: NtkConfig,
    pub model: GeneratorModel,
    pub prior: IndexPrior,
    pub data: TwoMoons,
    /// Frozen classifiers by training step.
    pub snapshots: Vec<(u64, Classifier)>,
    pub network: Arc<Classifier>,
    pub baseline: GridEigen,
}

impl NtkTask {
    pub fn new(config: NtkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let seeds = SeedSplitter::new(seed);
        let n = &config.ntk;
        let data = TwoMoons::generate(n.samples, n.noise, &mut seeds.rng(Stream::Data, 0));
        let net = Classifier::new(n.hidden, &mut seeds.rng(Stream::Init, 2));
        let adam = AdamConfig {
            lr: n.classifier_lr,
            ..AdamConfig::default()
        };
        let snapshots = train_classifier(&data, net, adam, &n.snapshots)?;
        let network = Arc::new(
            snapshots
                .iter()
                .find(|(s, _)| *s == n.stage)
                .expect("validated stage")
                .1
                .clone(),
        );
        let baseline = ntk_grid_baseline(network.as_ref(), n.grid, n.top_k)?;
        let model = GeneratorModel::new(config.model.clone(), &mut seeds.rng(Stream::Init, 0))?;
        let prior = config.prior.build(2, 1)?;
        Ok(Self {
            config,
            model,
            prior,
            data,
            snapshots,
            network,
            baseline,
        })
    }

    /// Principal-angle cosines between the learned top-k and the grid
    /// eigensolver's top-k, plus the learned Rayleigh quotients.
    pub fn alignment(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.config.ntk.top_k;
        let grid = QuadratureSet::midpoint_grid(2, self.config.ntk.grid);
        let (_, learned) = learned_basis(&self.model, &self.prior, k, &grid, &self.config.flow)?;
        let cos = principal_cosines(&learned, &self.baseline.functions)?;
        let g = self.network.param_gradients(grid.points());
        let v = learned.dot(&g) / grid.len() as f64;
        let rayleigh = v.rows().into_iter().map(|r| r.dot(&r)).collect();
        Ok((cos, rayleigh))
    }
}

impl Task for NtkTask {
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
        let grads = self.network.param_gradients(inp.points.points());
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
        let objective = ntk_objective(evolved, &inp.draw, &grads)?;
        let back = g.backward(objective.neg())?;
        let phi0 = eval_fourier_rows(&inp.draw.indices, &inp.points, 1)?;
        Ok(StepOutcome {
            grads: vec![p.grads(&back)],
            metrics: vec![objective.item(), norm_drift(&evolved.value(), &phi0, inp.points.len())],
        })
    }

    fn eval_names(&self) -> Vec<String> {
        let k = self.config.ntk.top_k;
        let mut names: Vec<String> = (1..=k).map(|i| format!("cosine_{i}")).collect();
        names.extend((1..=k).map(|i| format!("rayleigh_{i}")));
        names
    }

    fn evaluate(&mut self, _: &SeedSplitter) -> Result<Vec<f64>> {
        let (mut cos, rayleigh) = self.alignment()?;
        cos.extend(rayleigh);
        Ok(cos)
    }
}

/// `|⟨f, A f⟩_kernel − ⟨f, A f⟩_factored|` per row, comparing the pairwise
/// double sum with `‖(1/D) Σ_j f(ω_j) ∇_ξ MLP(ω_j)‖²` on the same points.
pub fn fubini_gap<N: FrozenNetwork + Send + Sync + 'static>(
    net: Arc<N>,
    f: &Array2<f64>,
    points: &QuadratureSet,
) -> Result<Vec<(f64, f64)>> {
    let g = Graph::new();
    let t = g.constant(f.clone());
    let pairwise = ntk_pointwise(net.clone()).quadratic_form(t, points)?.value();
    let factored = KernelOperator::ntk(net).quadratic_form(t, points)?.value();
    Ok(pairwise.iter().zip(factored.iter()).map(|(a, b)| (*a, *b)).collect())
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p onbflow-cli --test acceptance`, or a
//! subset by number, e.g. `cargo test -p onbflow-cli --test acceptance -- 1 3`.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use onbflow_core::autodiff::check::probe_gradients;
use onbflow_core::autodiff::{BoundParams, Graph, ParamId, ParamStore};
use onbflow_core::experiments::ntk::fubini_gap;
use onbflow_core::experiments::{
    euler_factors, relative_drift, Classifier, DiagConfig, DiagTask, KoopmanConfig, KoopmanTask, NtkConfig, NtkTask,
    PcaConfig, PcaTask, Synthetic1D,
};
use onbflow_core::fields::{GeneratorModel, MeanField, MeanFieldConfig, ModelConfig};
use onbflow_core::flow::{flow_step, Method, TimeGrid};
use onbflow_core::objectives::{
    evolve_draw, koopman_objective, koopman_targets, ntk_objective, pca_terms, FlowContext, FrozenNetwork,
    FunctionDataset, TaylorGreen,
};
use onbflow_core::space::{eval_fourier_rows, FourierIndex, IndexPrior, QuadratureSet, StratifiedDraw};
use onbflow_core::training::{Task, Trainer};
use onbflow_core::universality::{random_rotation, verify_universality, Bump};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(cap: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > cap {
        o.pass = false;
    }
    o.detail = format!("{} [{:.1}s, cap {}s]", o.detail, took.as_secs_f64(), cap.as_secs());
    o
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn skew(r: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = gaussian(r, r, rng);
    (&m - &m.t()) / std::f64::consts::SQRT_2
}

fn fourier_frame(n: usize, q: &QuadratureSet) -> Array2<f64> {
    let idx: Vec<FourierIndex> = (0..n as i32)
        .map(|i| FourierIndex::scalar(vec![if i % 2 == 1 { (i + 1) / 2 } else { -(i / 2) }]))
        .collect();
    eval_fourier_rows(&idx, q, 1).unwrap()
}

fn step_value(method: Method, u: &Array2<f64>, s: &Array2<f64>, phi: &Array2<f64>, l: usize) -> Array2<f64> {
    let g = Graph::new();
    let d = u.ncols();
    let out = flow_step(method, g.constant(u.clone()), g.constant(s.clone()), g.constant(phi.clone()), d, l).unwrap();
    (*out.value()).clone()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

// 1. Norms and pairwise inner products survive 20 Cayley steps.
fn structure_preservation() -> Outcome {
    let (d, r, steps, n) = (1024, 10, 20, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let q = QuadratureSet::midpoint_grid(1, d);
    let phi0 = fourier_frame(n, &q);
    let gram0 = phi0.dot(&phi0.t()) / d as f64;
    let grid = TimeGrid::random(steps, &mut rng);
    let mut phi = phi0.clone();
    for l in 0..steps {
        let (_, dt) = grid.step(l);
        let u = gaussian(r, d, &mut rng) * dt.sqrt();
        phi = step_value(Method::Cayley, &u, &skew(r, &mut rng), &phi, l);
    }
    let gram = phi.dot(&phi.t()) / d as f64;
    let norm_dev = (0..n).map(|i| (gram[[i, i]].sqrt() - 1.0).abs()).fold(0.0, f64::max);
    let inner_dev = max_abs(&(&gram - &gram0));
    let moved = max_abs(&(&phi - &phi0));
    outcome(
        norm_dev <= 1e-8 && inner_dev <= 1e-8 && moved > 1e-2,
        format!("max norm deviation {norm_dev:.2e}, max inner-product deviation {inner_dev:.2e} (basis moved by {moved:.2})"),
    )
}

// 2. Measured Euler norm factors.
fn euler_ablation() -> Outcome {
    let mut worst = 0.0f64;
    for sigma in [0.3, 1.0, 2.5, 10.0] {
        for steps in [5, 20] {
            let (fwd, bwd) = euler_factors(sigma, steps, 64).unwrap();
            let dt = 1.0 / steps as f64;
            let want = (1.0 + (dt * sigma) * (dt * sigma)).sqrt();
            for (f, b) in fwd.iter().zip(&bwd) {
                worst = worst.max((f - want).abs()).max((b - 1.0 / want).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("max factor error {worst:.2e}"))
}

// 3. Woodbury step against the explicit dense Cayley matrix.
fn dense_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut trials = 0;
    for r in [2, 5, 10] {
        for _ in 0..50 {
            let d = rng.random_range(r.max(4)..=64);
            let u = gaussian(r, d, &mut rng) * 0.2;
            let s = skew(r, &mut rng);
            let phi = gaussian(3, d, &mut rng);
            let fast = step_value(Method::Cayley, &u, &s, &phi, 0);
            // Row-vector action φ ↦ φ M with M = Ûᵀ Sᵀ Û / D.
            let un = DMatrix::from_fn(r, d, |i, j| u[[i, j]]);
            let sn = DMatrix::from_fn(r, r, |i, j| s[[i, j]]);
            let m = un.transpose() * sn.transpose() * &un / d as f64;
            let eye = DMatrix::<f64>::identity(d, d);
            let inv = (&eye - &m * 0.5).try_inverse().expect("Cayley denominator is invertible");
            let cay = (&eye + &m * 0.5) * inv;
            let pn = DMatrix::from_fn(3, d, |i, j| phi[[i, j]]);
            let dense = pn * cay;
            let err = (0..3)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| (fast[[i, j]] - dense[(i, j)]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err);
            trials += 1;
        }
    }
    outcome(worst <= 1e-10, format!("{trials} trials, max Frobenius difference {worst:.2e}"))
}

fn grad_model(dim: usize, seed: u64) -> GeneratorModel {
    let cfg = ModelConfig {
        dim,
        rank: 4,
        width: 32,
        depth: 2,
        time_freqs: 16,
        feature_levels: 4,
        max_freq: 8.0,
        residual_hidden: vec![16],
        mix_hidden: vec![16],
        bandwidth: 3,
        head_scale: 1.0,
        ..ModelConfig::default()
    };
    GeneratorModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn coordinates(store: &ParamStore, count: usize, rng: &mut ChaCha8Rng) -> Vec<(ParamId, usize, usize)> {
    // Uniform over scalar entries, so large matrices get their share.
    let sizes: Vec<usize> = (0..store.len()).map(|i| store.get(ParamId(i)).len()).collect();
    let total: usize = sizes.iter().sum();
    (0..count)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            let mut id = 0;
            while k >= sizes[id] {
                k -= sizes[id];
                id += 1;
            }
            let cols = store.get(ParamId(id)).ncols();
            (ParamId(id), k / cols, k % cols)
        })
        .collect()
}

const GRAD_EPS: f64 = 1e-6;
const GRAD_FLOOR: f64 = 1e-7;

fn worst_relative(probes: &[onbflow_core::autodiff::check::Probe]) -> f64 {
    probes.iter().map(|p| p.relative_error(GRAD_FLOOR)).fold(0.0, f64::max)
}

struct PcaProbe<'a> {
    q: &'a QuadratureSet,
    cache: &'a onbflow_core::fields::PointCache,
    grid: &'a TimeGrid,
    draw: &'a StratifiedDraw,
    xs: &'a [Array2<f64>],
    model: &'a GeneratorModel,
    mean: &'a MeanField,
}

impl PcaProbe<'_> {
    fn loss<'g>(
        &self,
        g: &'g Graph,
        pt: &BoundParams<'g>,
        pm: &BoundParams<'g>,
        explained: bool,
    ) -> onbflow_core::Result<onbflow_core::autodiff::Tensor<'g>> {
        let ctx = FlowContext { points: self.q, cache: self.cache, grid: self.grid, method: Method::Cayley };
        let evolved = evolve_draw(self.model, g, pt, self.draw, ctx)?;
        let mrow = self.mean.eval_row(g, pm, self.q)?;
        let mut total = g.constant(Array2::zeros((1, 1)));
        for x in self.xs {
            let t = pca_terms(evolved, self.draw, g.constant(x.clone()), mrow, self.q.len())?;
            total = total.add(if explained { t.mean_error.sub(t.explained)? } else { t.mean_error })?;
        }
        Ok(total)
    }
}

// 4. Reverse-mode gradients of the three objectives through five Cayley steps.
fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let grid = TimeGrid::random(5, &mut rng);
    let mut details = Vec::new();
    let mut pass = true;

    // PCA, generator and mean-field coordinates.
    {
        let mut model = grad_model(1, 1);
        let prior = IndexPrior::new(1, 1, 1.5, 0.25).unwrap();
        let draw = StratifiedDraw::new(&prior, 2e-2, 4, &mut rng).unwrap();
        let q = QuadratureSet::stratified(1, 32, &mut rng);
        let cache = model.prepare(&q).unwrap();
        let data = Synthetic1D::new(3);
        let xs: Vec<Array2<f64>> = (0..2).map(|i| data.eval_row(i, &q).unwrap()).collect();
        let mut mean = MeanField::new(1, 1, &MeanFieldConfig { features: 8, sigma: 4.0, hidden: vec![8] }, &mut rng).unwrap();
        let frozen_model = model.clone();
        let frozen_mean = mean.clone();
        let setup = PcaProbe { q: &q, cache: &cache, grid: &grid, draw: &draw, xs: &xs, model: &frozen_model, mean: &frozen_mean };
        let entries = coordinates(model.params(), 20, &mut rng);
        let probes = probe_gradients(model.params_mut(), &entries, GRAD_EPS, |g, pt| {
            let pm = frozen_mean.params().bind_frozen(g);
            setup.loss(g, pt, &pm, true)
        })
        .unwrap();
        let entries_m = coordinates(mean.params(), 20, &mut rng);
        let probes_m = probe_gradients(mean.params_mut(), &entries_m, GRAD_EPS, |g, pm| {
            let pt = frozen_model.params().bind_frozen(g);
            // The mean enters the explained term through a stop-gradient, so its
            // gradient is that of the mean fit alone.
            setup.loss(g, &pt, pm, false)
        })
        .unwrap();
        let (a, b) = (worst_relative(&probes), worst_relative(&probes_m));
        pass &= a <= 1e-3 && b <= 1e-3;
        details.push(format!("PCA θ {a:.1e} ψ {b:.1e}"));
    }

    // NTK with a small frozen classifier.
    {
        let mut model = grad_model(2, 2);
        let prior = IndexPrior::new(2, 1, 2.0, 0.25).unwrap();
        let draw = StratifiedDraw::new(&prior, 2e-2, 4, &mut rng).unwrap();
        let q = QuadratureSet::stratified(2, 32, &mut rng);
        let cache = model.prepare(&q).unwrap();
        let net = Classifier::new(8, &mut rng);
        let grads = net.param_gradients(q.points());
        let frozen = model.clone();
        let entries = coordinates(model.params(), 20, &mut rng);
        let probes = probe_gradients(model.params_mut(), &entries, GRAD_EPS, |g, p| {
            let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
            ntk_objective(evolve_draw(&frozen, g, p, &draw, ctx)?, &draw, &grads)
        })
        .unwrap();
        let a = worst_relative(&probes);
        pass &= a <= 1e-3;
        details.push(format!("NTK {a:.1e}"));
    }

    // Koopman against the Taylor-Green targets.
    {
        let mut model = grad_model(2, 3);
        let prior = IndexPrior::new(2, 1, 2.0, 0.25).unwrap();
        let draw = StratifiedDraw::new(&prior, 2e-2, 4, &mut rng).unwrap();
        let q = QuadratureSet::stratified(2, 32, &mut rng);
        let cache = model.prepare(&q).unwrap();
        let targets = koopman_targets(&draw.indices, &q, &TaylorGreen::default(), 1).unwrap();
        let frozen = model.clone();
        let entries = coordinates(model.params(), 20, &mut rng);
        let probes = probe_gradients(model.params_mut(), &entries, GRAD_EPS, |g, p| {
            let ctx = FlowContext { points: &q, cache: &cache, grid: &grid, method: Method::Cayley };
            koopman_objective(evolve_draw(&frozen, g, p, &draw, ctx)?, &draw, &targets)
        })
        .unwrap();
        let a = worst_relative(&probes);
        pass &= a <= 1e-3;
        details.push(format!("Koopman {a:.1e}"));
    }
    outcome(pass, format!("worst relative error over 20 coordinates: {}", details.join(", ")))
}

// 5. Rank-2 paths reach random rotations at second order.
fn universality() -> Outcome {
    let grid = QuadratureSet::midpoint_grid(1, 64);
    let mut pass = true;
    let mut details = Vec::new();
    for (n, count, tol, seed) in [(4usize, 20u64, 1e-3, 505u64), (8, 5, 5e-3, 506)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst, mut min_order) = (0.0f64, f64::INFINITY);
        for _ in 0..count {
            let target = random_rotation(n, &mut rng);
            let coarse = verify_universality(&target, 200, &grid, Bump::default()).unwrap().frobenius_error;
            let fine = verify_universality(&target, 400, &grid, Bump::default()).unwrap().frobenius_error;
            worst = worst.max(coarse);
            min_order = min_order.min((coarse / fine).log2());
        }
        pass &= worst <= tol && min_order >= 1.8;
        details.push(format!("SO({n}): max error {worst:.2e} (tolerance {tol:.0e}), min order {min_order:.2}"));
    }
    outcome(pass, details.join("; "))
}

fn train<T: Task>(task: T, config: onbflow_core::training::TrainConfig, seed: u64) -> Trainer<T> {
    let mut t = Trainer::new(task, config, seed).unwrap();
    t.run(|_| Ok(())).unwrap();
    t
}

// 6. Diagonalization of a known rank-5 operator.
fn diagonalization() -> Outcome {
    let config = DiagConfig::default();
    assert!(config.train.steps <= 5000);
    let t = train(DiagTask::new(config.clone(), 6).unwrap(), config.train.clone(), 6);
    let objective = t.evals.column("eval_objective").unwrap();
    let bound = t.evals.column("bound").unwrap();
    let excess = objective.iter().zip(&bound).map(|(o, b)| o - b).fold(f64::NEG_INFINITY, f64::max);
    let r = t.task.report().unwrap();
    let lambda = &config.diag.eigenvalues;
    let rel: Vec<f64> = lambda.iter().zip(&r.rayleigh).map(|(l, q)| (q - l).abs() / l).collect();
    let worst_rel = rel.iter().copied().fold(0.0, f64::max);
    let min_align = r.alignment[..3].iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        excess <= 1e-6 && worst_rel <= 0.05 && min_align >= 0.9,
        format!(
            "max objective - bound {excess:.2e}; Rayleigh {:?} (worst relative error {worst_rel:.3}); alignments {:?}",
            r.rayleigh[..5].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            r.alignment[..5].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

// 7. Held-out reconstruction on the 1D jump signals.
fn pca() -> Outcome {
    let config = PcaConfig::default();
    assert!(config.train.steps <= 5000);
    assert_eq!(
        (config.model.rank, config.flow.steps, config.train.points, config.prior.tau, config.prior.tail),
        (30, 20, 64, 1e-3, 16)
    );
    let t = train(PcaTask::new(config.clone(), 7).unwrap(), config.train.clone(), 7);
    let r = t.task.report().unwrap();
    let (l100, f100) = (r.learned.error_at(100), r.fourier.error_at(100));
    let dominated: Vec<(usize, f64, f64)> =
        [4, 8, 16, 32].iter().map(|&c| (c, r.learned.energy_at(c), r.fourier.energy_at(c))).collect();
    let dominates = dominated.iter().all(|(_, l, f)| l > f);
    outcome(
        l100 * 3.0 <= f100 && dominates,
        format!(
            "cutoff 100 error learned {l100:.3e} vs Fourier {f100:.3e} (ratio {:.2}, need >= 3); energy (cutoff, learned, Fourier) {:?}",
            f100 / l100,
            dominated.iter().map(|(c, l, f)| format!("({c}, {l:.4}, {f:.4})")).collect::<Vec<_>>()
        ),
    )
}

// 8. Energy of the learned Koopman rollout against RK composition.
fn koopman() -> Outcome {
    let config = KoopmanConfig::default();
    let t = train(KoopmanTask::new(config.clone(), 8).unwrap(), config.train.clone(), 8);
    let rollout = t.task.rollout(20).unwrap();
    let (learned, rk1) = (relative_drift(&rollout.learned), relative_drift(&rollout.rk1));
    let loss = t.evals.column("prediction_loss").unwrap();
    let (first, last) = (loss[0], *loss.last().unwrap());
    outcome(
        learned <= 1e-6 && rk1 >= 10.0 * learned && first >= 5.0 * last,
        format!(
            "20-step drift learned {learned:.2e}, RK1 {rk1:.2e}; prediction loss {first:.3e} -> {last:.3e} ({:.1}x)",
            first / last
        ),
    )
}

// 9. Tangent-kernel quadratic forms and grid alignment.
fn ntk() -> Outcome {
    let config = NtkConfig::default();
    assert_eq!(config.ntk.stage, 5000);
    let t = train(NtkTask::new(config.clone(), 9).unwrap(), config.train.clone(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let q = QuadratureSet::stratified(2, 64, &mut rng);
    let f = gaussian(4, 64, &mut rng);
    let net: Arc<Classifier> = t.task.network.clone();
    let gap = fubini_gap(net, &f, &q)
        .unwrap()
        .into_iter()
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    let (cos, _) = t.task.alignment().unwrap();
    let min_cos = cos.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        gap <= 1e-6 && min_cos >= 0.8,
        format!("Fubini relative gap {gap:.2e}; principal cosines {cos:.3?}"),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_onbflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("{args:?} exited with {status}"));
    }
    Ok(())
}

// 10. Re-runs with the same config and seed give byte-identical CSVs.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set", "model.width=16", "--set", "model.depth=2", "--set", "model.time_freqs=8",
        "--set", "model.residual_hidden=[8]", "--set", "model.mix_hidden=[8]", "--set", "flow.steps=3",
        "--set", "train.steps=6", "--set", "train.eval_every=3",
    ];
    let runs: Vec<(&str, Vec<&str>, &[&str])> = vec![
        (
            "train-pca",
            [&small[..], &["--set", "pca.eval_samples=4", "--set", "pca.gram_points=256", "--set", "pca.report_samples=8", "--set", "pca.report_points=256", "--set", "pca.finite_samples=64", "--set", "mean.hidden=[8]"]].concat(),
            &["metrics.csv", "eval.csv", "reconstruction.csv"],
        ),
        (
            "train-koopman",
            [&small[..], &["--set", "train.points=64", "--set", "koopman.eval_points=64", "--set", "koopman.rollout_grid=8", "--set", "koopman.rollout_steps=3", "--set", "koopman.snapshots=[0,3]"]].concat(),
            &["metrics.csv", "eval.csv", "rollout.csv"],
        ),
        (
            "train-ntk",
            [&small[..], &["--set", "train.points=32", "--set", "ntk.hidden=8", "--set", "ntk.snapshots=[1,20]", "--set", "ntk.stage=20", "--set", "ntk.grid=8"]].concat(),
            &["metrics.csv", "eval.csv", "alignment.csv"],
        ),
        (
            "train-diag",
            [&small[..], &["--set", "train.points=32", "--set", "diag.eval_points=256"]].concat(),
            &["metrics.csv", "eval.csv", "spectrum.csv"],
        ),
        ("verify-universality", vec!["--set", "targets=2", "--set", "n=3"], &["universality.csv"]),
        ("ablate-integrators", vec![], &["mean_norms.csv", "norms.csv", "gram.csv"]),
    ];
    let mut checked = 0;
    for (cmd, extra, files) in &runs {
        let mut outs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{cmd}-{k}"));
            let mut args = vec![*cmd, "--seed", "7"];
            args.extend(extra.iter());
            if let Err(e) = run_cli(&args, &out) {
                return outcome(false, e);
            }
            outs.push(out);
        }
        for f in files.iter() {
            let a = std::fs::read(outs[0].join(f)).unwrap();
            let b = std::fs::read(outs[1].join(f)).unwrap();
            if a != b || a.is_empty() {
                return outcome(false, format!("{cmd}: {f} differs between identical runs"));
            }
            checked += 1;
        }
    }
    outcome(true, format!("{checked} CSV files byte-identical across {} subcommands", runs.len()))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    type Criterion = (usize, &'static str, u64, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        (1, "structure preservation", 10, structure_preservation),
        (2, "Euler ablation", 5, euler_ablation),
        (3, "dense equivalence", 10, dense_equivalence),
        (4, "gradient correctness", 60, gradient_correctness),
        (5, "universality", 180, universality),
        (6, "diagonalization", 600, diagonalization),
        (7, "1D PCA", 900, pca),
        (8, "Koopman energy", 900, koopman),
        (9, "NTK consistency", 1200, ntk),
        (10, "determinism", 600, determinism),
    ];
    let mut failed = 0;
    for (n, name, cap, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let o = timed(Duration::from_secs(cap), f);
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

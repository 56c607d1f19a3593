//! One function per subcommand.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use onbflow_core::autodiff::linalg;
use onbflow_core::experiments::{
    ablate, euler_factors, relative_drift, AblationConfig, DiagConfig, DiagTask, KoopmanConfig, KoopmanTask,
    NtkConfig, NtkTask, PcaConfig, PcaTask,
};
use onbflow_core::flow::{step_frozen, Method};
use onbflow_core::objectives::FrozenNetwork;
use onbflow_core::seeds::{SeedSplitter, Stream};
use onbflow_core::space::{eval_fourier_rows, gram_rows, FourierIndex, QuadratureSet};
use onbflow_core::training::{Checkpoint, MetricsLog, Task, TrainConfig, Trainer};
use onbflow_core::universality::{random_rotation, verify_universality, Bump};

use crate::config::{echo, seed_value, Layered};
use crate::error::CliError;
use crate::output::OutDir;
use crate::plot::{Chart, Series};

pub struct RunArgs<'a> {
    pub config: Option<&'a Path>,
    pub set: &'a [String],
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub quiet: bool,
}

struct Ctx {
    out: OutDir,
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<Option<String>, CliError> {
    path.map(|p| std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))))
        .transpose()
}

/// Resolves file + overrides + defaults, echoes the result into the output
/// directory and returns it.
fn setup<C>(args: &RunArgs, experiment: &str, base: Option<String>) -> Result<(Ctx, C), CliError>
where
    C: Serialize + for<'de> Deserialize<'de> + Default,
{
    let mut layered = Layered::new(base.as_deref())?;
    for s in args.set {
        layered.set(s)?;
    }
    let file_seed = layered.take("seed").map(|v| seed_value(&v)).transpose()?;
    if let Some(v) = layered.take("experiment") {
        if v.as_str() != Some(experiment) {
            return Err(CliError::Config(format!("config is for experiment {v}, not '{experiment}'")));
        }
    }
    let config: C = layered.resolve()?;
    let seed = args.seed.or(file_seed).unwrap_or(0);
    let text = echo(experiment, seed, &config)?;
    let out = OutDir::create(args.out)?;
    out.text("config.toml", &text)?;
    let ctx = Ctx {
        out,
        seed,
        quiet: args.quiet,
    };
    ctx.say(format!("# effective config\n{text}"));
    Ok((ctx, config))
}

/// Runs the trainer and writes metrics, evaluations, timings and
/// checkpoints.
fn train<T: Task>(ctx: &Ctx, task: T, config: TrainConfig) -> Result<Trainer<T>, CliError> {
    let echo_text = std::fs::read_to_string(ctx.out.path("config.toml"))?;
    let mut trainer = Trainer::new(task, config.clone(), ctx.seed)?;
    let mut timing = MetricsLog::new(vec!["step".into(), "wall_ms".into()]);
    let start = Instant::now();
    let mut last = Instant::now();
    let mut io_error = None;
    trainer.run(|t| {
        let now = Instant::now();
        let ms = (now - last).as_secs_f64() * 1e3;
        last = now;
        timing.push(vec![t.step as f64, ms])?;
        if config.checkpoint_every > 0 && t.step % config.checkpoint_every == 0 && t.step < config.steps {
            if let Err(e) = t.checkpoint(&echo_text).save(&ctx.out.path(&format!("checkpoint_{}.bin", t.step))) {
                io_error.get_or_insert(e);
            }
        }
        if config.eval_every > 0 && t.step % config.eval_every == 0 {
            let eval = t.evals.rows.last().map(|r| format!(" eval {:?}", &r[1..])).unwrap_or_default();
            ctx.say(format!("step {} ({:.1}s){eval}", t.step, start.elapsed().as_secs_f64()));
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    ctx.out.log("metrics.csv", &trainer.metrics)?;
    ctx.out.log("eval.csv", &trainer.evals)?;
    ctx.out.log("timing.csv", &timing)?;
    trainer.checkpoint(&echo_text).save(&ctx.out.path("checkpoint.bin"))?;
    ctx.say(format!("trained {} steps in {:.1}s", trainer.step, start.elapsed().as_secs_f64()));
    Ok(trainer)
}

fn column_series(log: &MetricsLog, x: &str, y: &str, label: &str) -> Series {
    let xs = log.column(x).unwrap_or_default();
    let ys = log.column(y).unwrap_or_default();
    Series::new(label, xs.into_iter().zip(ys).collect())
}

fn single_row(names: &[&str], values: Vec<f64>) -> MetricsLog {
    let mut log = MetricsLog::new(names.iter().map(|s| s.to_string()).collect());
    log.push(values).expect("matching width");
    log
}

fn write_training_plot(ctx: &Ctx, metrics: &MetricsLog) -> Result<(), CliError> {
    let chart = Chart::new("training objective", "step", "objective").with(column_series(metrics, "step", "objective", "objective"));
    ctx.out.chart("objective.svg", &chart)
}

// ---- PCA

pub fn train_pca(args: &RunArgs) -> Result<(), CliError> {
    let (ctx, config): (Ctx, PcaConfig) = setup(args, "pca", read_config(args.config)?)?;
    let task = PcaTask::new(config.clone(), ctx.seed)?;
    let trainer = train(&ctx, task, config.train.clone())?;
    write_training_plot(&ctx, &trainer.metrics)?;
    pca_outputs(&ctx, &trainer.task)
}

fn pca_outputs(ctx: &Ctx, task: &PcaTask) -> Result<(), CliError> {
    let report = task.report()?;
    let table = report.table();
    ctx.out.log("reconstruction.csv", &table)?;
    ctx.out.log("summary.csv", &single_row(&["gram_deviation"], vec![report.gram_deviation]))?;
    let mut chart = Chart::new("held-out reconstruction error", "cutoff", "relative L2 error").log_y();
    for (col, label) in [("learned_error", "learned"), ("fourier_error", "fourier"), ("finite_pca_error", "finite PCA")] {
        chart = chart.with(column_series(&table, "cutoff", col, label));
    }
    ctx.out.chart("reconstruction.svg", &chart)?;
    ctx.say(format!(
        "cutoff 100: learned {:.3e}, fourier {:.3e}, finite PCA {:.3e}",
        report.learned.error_at(100),
        report.fourier.error_at(100),
        report.finite.error_at(100)
    ));
    Ok(())
}

// ---- Koopman

pub fn train_koopman(args: &RunArgs) -> Result<(), CliError> {
    let (ctx, config): (Ctx, KoopmanConfig) = setup(args, "koopman", read_config(args.config)?)?;
    let task = KoopmanTask::new(config.clone(), ctx.seed)?;
    let trainer = train(&ctx, task, config.train.clone())?;
    write_training_plot(&ctx, &trainer.metrics)?;
    koopman_outputs(&ctx, &trainer.task)
}

fn koopman_outputs(ctx: &Ctx, task: &KoopmanTask) -> Result<(), CliError> {
    let report = task.rollout(task.config.koopman.rollout_steps)?;
    let table = report.table();
    ctx.out.log("rollout.csv", &table)?;
    ctx.out.log("snapshots.csv", &report.snapshot_table())?;
    let drifts = [&report.learned, &report.rk1, &report.rk2, &report.rk4].map(|t| relative_drift(t));
    ctx.out.log(
        "drift.csv",
        &single_row(&["learned", "rk1", "rk2", "rk4"], drifts.to_vec()),
    )?;
    let mut chart = Chart::new("L2 energy along the rollout", "step", "energy");
    for (col, label) in [("learned", "learned"), ("rk1", "RK1"), ("rk2", "RK2"), ("rk4", "RK4")] {
        chart = chart.with(column_series(&table, "step", col, label));
    }
    ctx.out.chart("energy.svg", &chart)?;
    ctx.say(format!(
        "relative energy drift: learned {:.3e}, rk1 {:.3e}, rk2 {:.3e}, rk4 {:.3e}",
        drifts[0], drifts[1], drifts[2], drifts[3]
    ));
    Ok(())
}

// ---- NTK

pub fn train_ntk(args: &RunArgs) -> Result<(), CliError> {
    let (ctx, config): (Ctx, NtkConfig) = setup(args, "ntk", read_config(args.config)?)?;
    let task = NtkTask::new(config.clone(), ctx.seed)?;
    let trainer = train(&ctx, task, config.train.clone())?;
    write_training_plot(&ctx, &trainer.metrics)?;
    ntk_outputs(&ctx, &trainer.task)
}

fn ntk_outputs(ctx: &Ctx, task: &NtkTask) -> Result<(), CliError> {
    let mut classifier = MetricsLog::new(["step", "loss", "accuracy"].map(String::from).to_vec());
    for (step, net) in &task.snapshots {
        classifier.push(vec![*step as f64, net.loss_and_grad(&task.data).0, net.accuracy(&task.data)])?;
    }
    ctx.out.log("classifier.csv", &classifier)?;
    let (cos, rayleigh) = task.alignment()?;
    let mut align = MetricsLog::new(["k", "cosine", "learned_rayleigh", "grid_eigenvalue"].map(String::from).to_vec());
    for k in 0..cos.len() {
        align.push(vec![(k + 1) as f64, cos[k], rayleigh[k], task.baseline.eigenvalues[k]])?;
    }
    ctx.out.log("alignment.csv", &align)?;

    let k = task.config.ntk.top_k;
    let grid = QuadratureSet::midpoint_grid(2, task.config.ntk.grid);
    let (_, learned) = onbflow_core::experiments::common::learned_basis(&task.model, &task.prior, k, &grid, &task.config.flow)?;
    let mut header = vec!["x".to_string(), "y".to_string(), "logit".to_string()];
    header.extend((1..=k).map(|i| format!("learned_{i}")));
    header.extend((1..=k).map(|i| format!("grid_{i}")));
    let mut fields = MetricsLog::new(header);
    let logits = task.network.forward(grid.points());
    for (j, p) in grid.points().axis_iter(Axis(0)).enumerate() {
        let mut row = vec![p[0], p[1], logits[[j, 0]]];
        row.extend(learned.column(j).iter());
        row.extend(task.baseline.functions.column(j).iter());
        fields.push(row)?;
    }
    ctx.out.log("eigenfunctions.csv", &fields)?;
    ctx.say(format!("principal cosines against the grid eigensolver: {cos:?}"));
    Ok(())
}

// ---- Diagonalization

pub fn train_diag(args: &RunArgs) -> Result<(), CliError> {
    let (ctx, config): (Ctx, DiagConfig) = setup(args, "diag", read_config(args.config)?)?;
    let task = DiagTask::new(config.clone(), ctx.seed)?;
    let trainer = train(&ctx, task, config.train.clone())?;
    write_training_plot(&ctx, &trainer.metrics)?;
    diag_outputs(&ctx, &trainer.task)
}

fn diag_outputs(ctx: &Ctx, task: &DiagTask) -> Result<(), CliError> {
    let r = task.report()?;
    let mut table = MetricsLog::new(["i", "rayleigh", "eigenvalue", "alignment"].map(String::from).to_vec());
    let lambda = &task.config.diag.eigenvalues;
    for (i, q) in r.rayleigh.iter().enumerate() {
        let lam = lambda.get(i).copied().unwrap_or(0.0);
        let a = r.alignment.get(i).copied().unwrap_or(f64::NAN);
        table.push(vec![(i + 1) as f64, *q, lam, a])?;
    }
    ctx.out.log("spectrum.csv", &table)?;
    ctx.out.log(
        "summary.csv",
        &single_row(&["objective", "bound", "gram_deviation"], vec![r.objective, r.bound, r.gram_deviation]),
    )?;
    ctx.say(format!("objective {:.6} (bound {:.6}), rayleigh {:?}", r.objective, r.bound, &r.rayleigh[..lambda.len().min(r.rayleigh.len())]));
    Ok(())
}

// ---- Checkpoint-driven commands

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String), CliError> {
    let ck = Checkpoint::load(path)?;
    let mut probe = Layered::new(Some(&ck.config))?;
    let experiment = probe
        .take("experiment")
        .and_then(|v| v.as_str().map(String::from))
        .ok_or_else(|| CliError::Config(format!("{} does not record its experiment", path.display())))?;
    Ok((ck, experiment))
}

fn restore<T: Task>(ctx: &Ctx, task: T, train: TrainConfig, ck: &Checkpoint) -> Result<Trainer<T>, CliError> {
    let mut trainer = Trainer::new(task, train, ctx.seed)?;
    trainer.restore(ck)?;
    Ok(trainer)
}

pub fn rollout(args: &RunArgs, checkpoint: &Path) -> Result<(), CliError> {
    let (ck, experiment) = load_checkpoint(checkpoint)?;
    if experiment != "koopman" {
        return Err(CliError::Config(format!("rollout needs a koopman checkpoint, got '{experiment}'")));
    }
    let (ctx, config): (Ctx, KoopmanConfig) = setup(args, "koopman", Some(ck.config.clone()))?;
    let trainer = restore(&ctx, KoopmanTask::new(config.clone(), ctx.seed)?, config.train, &ck)?;
    koopman_outputs(&ctx, &trainer.task)
}

pub fn eval(args: &RunArgs, checkpoint: &Path) -> Result<(), CliError> {
    let (ck, experiment) = load_checkpoint(checkpoint)?;
    let base = Some(ck.config.clone());
    match experiment.as_str() {
        "pca" => {
            let (ctx, c): (Ctx, PcaConfig) = setup(args, "pca", base)?;
            let mut t = restore(&ctx, PcaTask::new(c.clone(), ctx.seed)?, c.train, &ck)?;
            evaluation_row(&ctx, &mut t)?;
            pca_outputs(&ctx, &t.task)
        }
        "koopman" => {
            let (ctx, c): (Ctx, KoopmanConfig) = setup(args, "koopman", base)?;
            let mut t = restore(&ctx, KoopmanTask::new(c.clone(), ctx.seed)?, c.train, &ck)?;
            evaluation_row(&ctx, &mut t)?;
            koopman_outputs(&ctx, &t.task)
        }
        "ntk" => {
            let (ctx, c): (Ctx, NtkConfig) = setup(args, "ntk", base)?;
            let mut t = restore(&ctx, NtkTask::new(c.clone(), ctx.seed)?, c.train, &ck)?;
            evaluation_row(&ctx, &mut t)?;
            ntk_outputs(&ctx, &t.task)
        }
        "diag" => {
            let (ctx, c): (Ctx, DiagConfig) = setup(args, "diag", base)?;
            let mut t = restore(&ctx, DiagTask::new(c.clone(), ctx.seed)?, c.train, &ck)?;
            evaluation_row(&ctx, &mut t)?;
            diag_outputs(&ctx, &t.task)
        }
        other => Err(CliError::Config(format!("unknown experiment '{other}' in checkpoint"))),
    }
}

fn evaluation_row<T: Task>(ctx: &Ctx, t: &mut Trainer<T>) -> Result<(), CliError> {
    t.evaluate()?;
    ctx.out.log("eval.csv", &t.evals)
}

// ---- Universality

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalityConfig {
    /// Size of the rotation group.
    pub n: usize,
    pub steps: usize,
    pub targets: usize,
    /// Midpoint grid carrying the discrete frame.
    pub points: usize,
    /// Also run with twice the steps to estimate the convergence order.
    pub refine: bool,
}

impl Default for UniversalityConfig {
    fn default() -> Self {
        Self {
            n: 4,
            steps: 200,
            targets: 20,
            points: 64,
            refine: true,
        }
    }
}

pub fn verify(args: &RunArgs) -> Result<(), CliError> {
    let (ctx, c): (Ctx, UniversalityConfig) = setup(args, "universality", read_config(args.config)?)?;
    if c.n < 2 || c.steps == 0 || c.targets == 0 {
        return Err(CliError::Config("need n >= 2 and positive steps and targets".into()));
    }
    if c.points < 2 * c.n {
        return Err(CliError::Config(format!("{} points cannot carry an {}-dimensional frame", c.points, c.n)));
    }
    let seeds = SeedSplitter::new(ctx.seed);
    let grid = QuadratureSet::midpoint_grid(1, c.points);
    let mut log = MetricsLog::new(
        ["target", "n", "segments", "steps", "frobenius_error", "frobenius_error_refined", "order", "norm_drift"]
            .map(String::from)
            .to_vec(),
    );
    let mut worst = 0.0f64;
    for i in 0..c.targets {
        let target = random_rotation(c.n, &mut seeds.rng(Stream::Aux, i as u64));
        let r = verify_universality(&target, c.steps, &grid, Bump::default())?;
        let (fine, order) = if c.refine {
            let f = verify_universality(&target, 2 * c.steps, &grid, Bump::default())?.frobenius_error;
            (f, (r.frobenius_error / f).log2())
        } else {
            (f64::NAN, f64::NAN)
        };
        worst = worst.max(r.frobenius_error);
        log.push(vec![
            i as f64,
            c.n as f64,
            r.segments as f64,
            c.steps as f64,
            r.frobenius_error,
            fine,
            order,
            r.norm_drift,
        ])?;
    }
    ctx.out.log("universality.csv", &log)?;
    ctx.say(format!("worst Frobenius error over {} targets in SO({}): {worst:.3e}", c.targets, c.n));
    Ok(())
}

// ---- Integrator ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    pub sigma: f64,
    pub steps: usize,
    pub points: usize,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            steps: 20,
            points: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub ablation: AblationConfig,
    pub factors: FactorConfig,
}

pub fn ablate_integrators(args: &RunArgs) -> Result<(), CliError> {
    let (ctx, c): (Ctx, AblateConfig) = setup(args, "ablation", read_config(args.config)?)?;
    let seeds = SeedSplitter::new(ctx.seed);
    let report = ablate(&c.ablation, &mut seeds.rng(Stream::Aux, 0))?;

    let mut norms_csv = String::from("step,method,function,norm\n");
    for (l, m, f, v) in report.norm_rows() {
        norms_csv.push_str(&format!("{l},{m},{f},{}\n", onbflow_core::training::format_value(v)));
    }
    ctx.out.text("norms.csv", &norms_csv)?;

    let mean = report.mean_norms();
    let mut header = vec!["step".to_string()];
    header.extend(Method::ALL.iter().map(|m| m.name().replace('-', "_")));
    let mut long = MetricsLog::new(header);
    for (l, row) in mean.rows().into_iter().enumerate() {
        let mut r = vec![l as f64];
        r.extend(row.iter());
        long.push(r)?;
    }
    ctx.out.log("mean_norms.csv", &long)?;

    let mut gram_csv = String::from("method,step,i,j,value\n");
    for t in &report.traces {
        for (step, g) in &t.grams {
            for ((i, j), v) in g.indexed_iter() {
                gram_csv.push_str(&format!("{},{step},{i},{j},{}\n", t.method, onbflow_core::training::format_value(*v)));
            }
        }
    }
    ctx.out.text("gram.csv", &gram_csv)?;

    let f = &c.factors;
    let (fwd, bwd) = euler_factors(f.sigma, f.steps, f.points)?;
    let dt = 1.0 / f.steps as f64;
    let expected = (1.0 + (dt * f.sigma).powi(2)).sqrt();
    let mut factors = MetricsLog::new(
        ["step", "forward", "backward", "expected_forward", "expected_backward"].map(String::from).to_vec(),
    );
    for (l, (a, b)) in fwd.iter().zip(&bwd).enumerate() {
        factors.push(vec![(l + 1) as f64, *a, *b, expected, 1.0 / expected])?;
    }
    ctx.out.log("factors.csv", &factors)?;

    let mut chart = Chart::new("mean basis norm", "step", "norm").log_y();
    for (k, m) in Method::ALL.iter().enumerate() {
        let pts = mean.column(k).iter().enumerate().map(|(l, v)| (l as f64, *v)).collect();
        chart = chart.with(Series::new(m.name(), pts));
    }
    ctx.out.chart("norms.svg", &chart)?;
    let last = mean.row(mean.nrows() - 1);
    ctx.say(format!(
        "final mean norm: cayley {:.6}, euler-fwd {:.4}, euler-bwd {:.4}",
        last[0], last[1], last[2]
    ));
    Ok(())
}

// ---- Self test

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

pub fn selftest(args: &RunArgs) -> Result<(), CliError> {
    #[derive(Serialize, Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Empty {}
    let (ctx, _): (Ctx, Empty) = setup(args, "selftest", read_config(args.config)?)?;
    let seeds = SeedSplitter::new(ctx.seed);
    let checks = vec![
        cayley_check(&mut seeds.rng(Stream::Aux, 0))?,
        euler_check()?,
        woodbury_check(&mut seeds.rng(Stream::Aux, 1))?,
        universality_check(&mut seeds.rng(Stream::Aux, 2))?,
        checkpoint_check(&mut seeds.rng(Stream::Aux, 3))?,
    ];
    let mut csv = String::from("check,value,tolerance,passed\n");
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.value <= c.tolerance;
        csv.push_str(&format!("{},{:e},{:e},{ok}\n", c.name, c.value, c.tolerance));
        ctx.say(format!("{} {}: {:.3e} (tolerance {:.0e})", if ok { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance));
        if !ok {
            failed.push(c.name);
        }
    }
    ctx.out.text("selftest.csv", &csv)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("self test failed: {}", failed.join(", "))))
    }
}

fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn skew<R: Rng>(r: usize, rng: &mut R) -> Array2<f64> {
    let m = gaussian(r, r, rng);
    &m - &m.t()
}

fn fourier_frame(n: usize, q: &QuadratureSet) -> Result<Array2<f64>, CliError> {
    let idx: Vec<FourierIndex> = (0..n as i32).map(|i| FourierIndex::scalar(vec![(i + 1) / 2 * if i % 2 == 1 { 1 } else { -1 }])).collect();
    Ok(eval_fourier_rows(&idx, q, 1)?)
}

fn cayley_check<R: Rng>(rng: &mut R) -> Result<Check, CliError> {
    let (d, r, steps) = (128, 4, 10);
    let q = QuadratureSet::midpoint_grid(1, d);
    let phi0 = fourier_frame(8, &q)?;
    let mut phi = phi0.clone();
    for l in 0..steps {
        let u = gaussian(r, d, rng) * (1.0 / steps as f64).sqrt();
        phi = step_frozen(Method::Cayley, &u, &skew(r, rng), phi, d, l)?;
    }
    let dev = (gram_rows(&phi, &phi, d) - gram_rows(&phi0, &phi0, d)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Check {
        name: "cayley_preserves_gram",
        value: dev,
        tolerance: 1e-10,
    })
}

fn euler_check() -> Result<Check, CliError> {
    let (sigma, steps) = (2.0, 10);
    let (fwd, bwd) = euler_factors(sigma, steps, 64)?;
    let want = (1.0 + (sigma / steps as f64).powi(2)).sqrt();
    let dev = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| (f - want).abs().max((b - 1.0 / want).abs()))
        .fold(0.0, f64::max);
    Ok(Check {
        name: "euler_norm_factors",
        value: dev,
        tolerance: 1e-10,
    })
}

fn woodbury_check<R: Rng>(rng: &mut R) -> Result<Check, CliError> {
    let (d, r) = (32, 3);
    let u = gaussian(r, d, rng) * 0.3;
    let s = skew(r, rng);
    let phi = gaussian(4, d, rng);
    let fast = step_frozen(Method::Cayley, &u, &s, phi.clone(), d, 0)?;
    // Dense K acting on row vectors: phi K = phi Uᵀ Sᵀ U / D.
    let k = u.t().dot(&s.t()).dot(&u) / d as f64;
    let eye = Array2::<f64>::eye(d);
    let lhs = (&eye - &(&k * 0.5)).t().to_owned();
    let rhs = phi.dot(&(&eye + &(&k * 0.5))).t().to_owned();
    let dense = linalg::solve(lhs.view(), rhs.view())?.t().to_owned();
    let err = (&fast - &dense).iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Check {
        name: "woodbury_matches_dense",
        value: err,
        tolerance: 1e-10,
    })
}

fn universality_check<R: Rng>(rng: &mut R) -> Result<Check, CliError> {
    let target = random_rotation(3, rng);
    let r = verify_universality(&target, 200, &QuadratureSet::midpoint_grid(1, 32), Bump::default())?;
    Ok(Check {
        name: "universality_so3",
        value: r.frobenius_error,
        tolerance: 1e-3,
    })
}

fn checkpoint_check<R: Rng>(rng: &mut R) -> Result<Check, CliError> {
    let mut ck = Checkpoint {
        config: "seed = 1\n".into(),
        step: 3,
        records: Vec::new(),
    };
    let a = gaussian(3, 5, rng);
    ck.push_array("a", &a);
    ck.push_u64("n", vec![1, 2]);
    let back = Checkpoint::from_bytes(&ck.to_bytes())?;
    let same = *back.array("a")? == a && back.u64s("n")? == [1, 2] && back.step == 3;
    Ok(Check {
        name: "checkpoint_round_trip",
        value: if same { 0.0 } else { 1.0 },
        tolerance: 0.0,
    })
}

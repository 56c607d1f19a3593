mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::RunArgs;

/// Learned orthonormal function-space bases: experiments and checks.
#[derive(Parser)]
#[command(name = "onbflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file with one section per module.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: runs/<subcommand>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct FromCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by a training run.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Functional PCA of the synthetic 1D jump signals.
    TrainPca(Common),
    /// Koopman basis for the Taylor-Green flow.
    TrainKoopman(Common),
    /// Eigenfunctions of a two-moons classifier's tangent kernel.
    TrainNtk(Common),
    /// Diagonalize a known low-rank operator.
    TrainDiag(Common),
    /// Reach random rotations with rank-2 generator paths.
    VerifyUniversality(Common),
    /// Compare Cayley with forward and backward Euler.
    AblateIntegrators(Common),
    /// Roll out a trained Koopman basis.
    Rollout(FromCheckpoint),
    /// Evaluate a training checkpoint.
    Eval(FromCheckpoint),
    /// Fast invariant checks.
    Selftest(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainPca(_) => "train-pca",
            Command::TrainKoopman(_) => "train-koopman",
            Command::TrainNtk(_) => "train-ntk",
            Command::TrainDiag(_) => "train-diag",
            Command::VerifyUniversality(_) => "verify-universality",
            Command::AblateIntegrators(_) => "ablate-integrators",
            Command::Rollout(_) => "rollout",
            Command::Eval(_) => "eval",
            Command::Selftest(_) => "selftest",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::TrainPca(c)
            | Command::TrainKoopman(c)
            | Command::TrainNtk(c)
            | Command::TrainDiag(c)
            | Command::VerifyUniversality(c)
            | Command::AblateIntegrators(c)
            | Command::Selftest(c) => c,
            Command::Rollout(f) | Command::Eval(f) => &f.common,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let c = cli.command.common();
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    let args = RunArgs {
        config: c.config.as_deref(),
        set: &c.set,
        out: &out,
        seed: c.seed,
        quiet: c.quiet,
    };
    let result = match &cli.command {
        Command::TrainPca(_) => commands::train_pca(&args),
        Command::TrainKoopman(_) => commands::train_koopman(&args),
        Command::TrainNtk(_) => commands::train_ntk(&args),
        Command::TrainDiag(_) => commands::train_diag(&args),
        Command::VerifyUniversality(_) => commands::verify(&args),
        Command::AblateIntegrators(_) => commands::ablate_integrators(&args),
        Command::Rollout(f) => commands::rollout(&args, &f.checkpoint),
        Command::Eval(f) => commands::eval(&args, &f.checkpoint),
        Command::Selftest(_) => commands::selftest(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

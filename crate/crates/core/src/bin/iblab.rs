//! Command-line front end. All work happens in `iblab::run`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use iblab::config::{DatasetKind, ExperimentConfig, Overrides};
use iblab::run::{run_subcommand, Command};

#[derive(Parser)]
#[command(name = "iblab", version, about = "Information bottleneck experiments")]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<Dataset>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// normal, dropout, vib, nib or aib
    #[arg(long, global = true)]
    objective: Option<String>,
    /// Strength of the objective (β, or the dropout rate).
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    train_limit: Option<usize>,
    /// Rerun even when a completed run with the same digest exists.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Mnist,
    Synthetic,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Optimal curve of the synthetic task by Blahut-Arimoto.
    BaCurve,
    /// Train one model.
    Train,
    /// Train a grid of β values and seeds.
    Sweep,
    /// Knee of a completed sweep.
    Knee,
    /// Adversarial accuracy of a baseline and the configured objective.
    Attack,
    /// Mutual information estimates of a trained model.
    MiEval,
    /// Summarize every completed run in the output directory.
    Report,
}

fn command(s: Sub) -> Command {
    match s {
        Sub::BaCurve => Command::BaCurve,
        Sub::Train => Command::Train,
        Sub::Sweep => Command::Sweep,
        Sub::Knee => Command::Knee,
        Sub::Attack => Command::Attack,
        Sub::MiEval => Command::MiEval,
        Sub::Report => Command::Report,
    }
}

fn execute(cli: &Cli) -> iblab::Result<()> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        dataset: cli.dataset.map(|d| match d {
            Dataset::Mnist => DatasetKind::Mnist,
            Dataset::Synthetic => DatasetKind::Synthetic,
        }),
        data_dir: cli.data_dir.clone(),
        output_dir: cli.output_dir.clone(),
        seed: cli.seed,
        objective: cli.objective.clone(),
        beta: cli.beta,
        max_epochs: cli.epochs,
        train_limit: cli.train_limit,
    };
    let cfg = base.resolve(&overrides)?;
    let rec = run_subcommand(command(cli.command), &cfg, cli.force)?;
    if rec.cached {
        eprintln!("cached: {}", rec.dir.display());
    }
    match rec.summary.get("text_artifact").and_then(|v| v.as_str()) {
        Some(a) => print!("{}", std::fs::read_to_string(rec.path(a)).map_err(|e| iblab::Error::io(rec.path(a), e))?),
        None => println!("{}", serde_json::to_string_pretty(&rec.summary)?),
    }
    eprintln!("run directory: {}", rec.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

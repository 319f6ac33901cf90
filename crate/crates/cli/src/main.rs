//! `ptal`: runs the point-supervised localization pipeline stage by stage
//! over a data directory.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use ptal_core::config::{PipelineConfig, CONFIG_SCHEMA_VERSION};

use crate::stages::Failure;

#[derive(Debug, Parser)]
#[command(name = "ptal", about = "Point-supervised temporal action localization pipeline")]
struct Cli {
    /// TOML configuration file; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set trainer.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads for per-video work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Directory holding the dataset and stage outputs.
    #[arg(long, default_value = ".", global = true)]
    dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (videos, points, manifest).
    Synth {
        /// Also write noisy proposals derived from the ground truth.
        #[arg(long)]
        noisy_proposals: bool,
    },
    /// Train the single-level base model from point annotations.
    TrainBase,
    /// Turn base scores into proposals.
    Propose,
    /// Refine proposals into one pseudo-label per point.
    Pseudolabel,
    /// Train the pyramid model from pseudo-labels.
    TrainPotloc,
    /// Turn pyramid scores into detections.
    Infer,
    /// Evaluate detections against ground truth and write report.json.
    Eval {
        /// Detections to evaluate (default: detections.jsonl in --dir).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Second detection file to compare against, e.g. proposals.jsonl.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Run the invariant and gradient suites.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smaller instance counts.
        #[arg(long)]
        quick: bool,
    },
    /// Synthesize (unless data exists) and run every stage through eval.
    Run,
    /// Print the effective configuration in canonical form.
    Config,
    /// Write seeded backbone weights as a tensor archive.
    ExportWeights {
        /// Output path stem; `.json` and `.bin` are appended.
        #[arg(long, default_value = "weights")]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?,
        None => String::new(),
    };
    PipelineConfig::from_toml(&text, &cli.overrides).map_err(|e| Failure::usage(format!("config: {e}")))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli)?;
    let dir = cli.dir.as_path();
    match &cli.command {
        Command::Synth { noisy_proposals } => stages::synth(dir, &config, *noisy_proposals),
        Command::TrainBase => stages::train_base(dir, &config),
        Command::Propose => stages::propose(dir, &config),
        Command::Pseudolabel => stages::pseudolabel(dir, &config),
        Command::TrainPotloc => stages::train_potloc(dir, &config),
        Command::Infer => stages::infer(dir, &config),
        Command::Eval {
            detections,
            baseline,
        } => stages::eval(dir, &config, detections.as_deref(), baseline.as_deref()),
        Command::Selfcheck { seed, quick } => stages::selfcheck(*seed, *quick),
        Command::Run => stages::run(dir, &config),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::ExportWeights { out } => stages::export_weights(dir, &config, out),
    }
}

fn main() -> ExitCode {
    let version = format!(
        "{} (config schema {CONFIG_SCHEMA_VERSION})",
        env!("CARGO_PKG_VERSION")
    );
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(jobs);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };

    match pool.install(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

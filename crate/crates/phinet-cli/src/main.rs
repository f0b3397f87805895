use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use phinet_cli::commands::{self, NetworkChoice, PhantomTask};
use phinet_cli::{config, fail};

/// Volumetric MR contrast classification: phantom generation, training,
/// inference, and paired evaluation.
#[derive(Parser)]
#[command(name = "phinet", version)]
struct Cli {
    /// JSON run configuration (model, train, preprocess, phantom, paths).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Random seed. Overrides the config's seed when both are present.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for volume loading and batch inference.
    /// Defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset and its manifest.
    Phantom {
        /// Output directory for volumes plus manifest.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Which labeling task to generate for.
        #[arg(long, value_enum, default_value = "contrast")]
        task: PhantomTask,
        /// Items per class: one value for all classes, or one per class.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        count: Vec<usize>,
    },
    /// Run the preprocessing chain on one volume and write the cube.
    Preprocess {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train a network on a labeled manifest.
    Train {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Best checkpoint path. A companion resume checkpoint is written
        /// next to it with extension .last.ckpt.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// History CSV path. Defaults to the checkpoint path with .csv.
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
        /// Resume from a previous run's .last.ckpt.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Architecture when the config does not specify one.
        #[arg(long, value_enum)]
        network: Option<NetworkChoice>,
    },
    /// Classify volumes with a trained checkpoint; JSON lines on stdout.
    Classify {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Input volumes, classified in the given order.
        #[arg(required = true, value_name = "FILE")]
        inputs: Vec<PathBuf>,
    },
    /// Evaluate a checkpoint over a labeled manifest.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Write the report as JSON here as well.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        /// Write per-item predictions as JSON lines here.
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
    },
    /// Correlation-template classification over a labeled manifest.
    Baseline {
        /// Template manifest (classes plus one template volume each).
        #[arg(long, value_name = "FILE")]
        templates: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
    },
    /// Paired McNemar comparison of two prediction files.
    Mcnemar {
        /// First prediction file (JSON lines from evaluate or baseline).
        #[arg(long, value_name = "FILE")]
        a: PathBuf,
        /// Second prediction file.
        #[arg(long, value_name = "FILE")]
        b: PathBuf,
        /// Manifest holding the true labels.
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(fail::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = config::RunConfig::load(cli.config.as_deref())?;

    match cli.command {
        Command::Phantom { out, task, count } => {
            commands::cmd_phantom(&out, task, &count, &config, cli.seed)
        }
        Command::Preprocess { input, out } => commands::cmd_preprocess(&input, &out, &config),
        Command::Train {
            manifest,
            out,
            history,
            resume,
            network,
        } => commands::cmd_train(
            &manifest,
            &out,
            history.as_deref(),
            resume.as_deref(),
            network,
            &config,
            cli.seed,
        ),
        Command::Classify { checkpoint, inputs } => commands::cmd_classify(&checkpoint, &inputs),
        Command::Evaluate {
            checkpoint,
            manifest,
            json,
            predictions,
        } => commands::cmd_evaluate(&checkpoint, &manifest, json.as_deref(), predictions.as_deref()),
        Command::Baseline {
            templates,
            manifest,
            json,
            predictions,
        } => commands::cmd_baseline(
            &templates,
            &manifest,
            json.as_deref(),
            predictions.as_deref(),
            &config,
        ),
        Command::Mcnemar { a, b, manifest } => commands::cmd_mcnemar(&a, &b, &manifest),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { fail::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(fail::exit_code(&e))
        }
    }
}

//! Command-line entry point wiring the pipeline stages together.
//!
//! Diagnostics go to standard error; each command prints its primary output
//! path on standard out.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use aether::config::PipelineConfig;
use aether::pipeline::{cmd_embed, cmd_eval, cmd_pretrain, cmd_sweep, cmd_synth, EvalTask};
use aether::tasks::SweepAxis;

#[derive(Parser)]
#[command(
    name = "aether",
    about = "Align embedding fields with POI text semantics and evaluate region-level tasks",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the synth and alignment seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results are identical for any
    /// thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the output directory.
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset bundle.
    Synth,
    /// Train the alignment model; writes checkpoint, state, and log.
    Pretrain {
        /// Resume from a saved training-state file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Embed land-use points and regions (aligned and raw baselines).
    Embed,
    /// Train and evaluate a downstream task over the configured seeds.
    Eval {
        /// Task to evaluate: luc or sdm.
        #[arg(long)]
        task: String,
    },
    /// Run a one-factor sensitivity sweep.
    Sweep {
        /// Axis to sweep: lambda, buffers, or fraction.
        #[arg(long)]
        axis: String,
    },
}

fn run(cli: Cli) -> aether::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    if let Some(threads) = cli.threads {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| aether::Error::InvalidConfig {
                    field: "threads".into(),
                    reason: e.to_string(),
                })?;
        }
    }

    match cli.command {
        Command::Synth => {
            let manifest = cmd_synth(&cfg)?;
            println!("{}", manifest.display());
        }
        Command::Pretrain { resume } => {
            let summary = cmd_pretrain(&cfg, resume.as_deref())?;
            log::info!(
                "best epoch {} with cross-modal loss {:.6} ({} POIs dropped)",
                summary.best_epoch,
                summary.best_l_ap,
                summary.dropped_pois
            );
            println!("{}", summary.checkpoint.display());
        }
        Command::Embed => {
            let out = cmd_embed(&cfg)?;
            println!("{}", out.luc_aligned.display());
            println!("{}", out.luc_raw.display());
            println!("{}", out.sdm_aligned.display());
            println!("{}", out.sdm_raw.display());
        }
        Command::Eval { task } => {
            let report = cmd_eval(&cfg, EvalTask::from_str(&task)?)?;
            println!("{}", report.display());
        }
        Command::Sweep { axis } => {
            let out = cmd_sweep(&cfg, SweepAxis::from_str(&axis)?)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use illumrl::commands::{self, Split};
use illumrl::config::{RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(name = "illumrl", version, about = "Adaptive LED illumination experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Training seed; for `sweep`, restricts the sweep to this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on training samples (test samples scale proportionally when
    /// generating).
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate per-LED stacks for the MNIST train and test sets.
    GenerateDataset,
    /// Train the adaptive agent.
    Train {
        /// Exit reward (defaults to train.r_exit).
        #[arg(long)]
        r_exit: Option<f64>,
    },
    /// Train the single-capture baseline.
    Baseline,
    /// Train every (r_exit, seed) pair and plot accuracy against length.
    Sweep {
        /// Redraw the plot from the existing CSVs without training.
        #[arg(long)]
        replot: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Draw the observations and LED patterns of one trajectory.
    RenderTrajectory {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.sweep.seeds = vec![s];
    }
    let out = cli.out.as_path();
    commands::ensure_dir(out)?;
    match cli.command {
        Command::GenerateDataset => {
            let g = commands::generate_dataset(&cfg, out, cli.limit)?;
            println!("wrote {} ({} samples) and {} ({} samples)", g.train.display(), g.n_train, g.test.display(), g.n_test);
        }
        Command::Train { r_exit } => {
            let r = r_exit.unwrap_or(cfg.train.r_exit);
            let o = commands::train(&cfg, out, cfg.train.seed, r, false, cli.limit)?;
            report_training(&o);
        }
        Command::Baseline => {
            let o = commands::train(&cfg, out, cfg.train.seed, cfg.train.r_exit, true, cli.limit)?;
            report_training(&o);
        }
        Command::Sweep { replot: true } => {
            println!("wrote {}", commands::replot(out)?.display());
        }
        Command::Sweep { replot: false } => {
            let s = commands::sweep(&cfg, out, cli.limit)?;
            let failed = s.rows.iter().chain(&s.baseline).filter(|r| !r.ok()).count();
            for p in illumrl::plot::summarize(&s.rows) {
                println!(
                    "r_exit {:<6} runs {} length {:.2} ± {:.2} accuracy {:.4} ± {:.4}",
                    p.r_exit, p.runs, p.mean_length, p.std_length, p.mean_accuracy, p.std_accuracy
                );
            }
            println!("wrote {}, {} and {}; {failed} failed job(s)", s.csv.display(), s.baseline_csv.display(), s.plot.display());
        }
        Command::Evaluate { checkpoint, split } => {
            let r = commands::evaluate_checkpoint(&cfg, out, &checkpoint, split, cli.limit)?;
            println!("{} samples: accuracy {:.4}, mean length {:.3}", r.samples, r.accuracy, r.mean_length);
        }
        Command::RenderTrajectory { checkpoint, index, split } => {
            let r = commands::render_trajectory(&cfg, out, &checkpoint, split, index, cli.limit)?;
            println!("wrote {} and {}", r.image.display(), r.metadata.display());
        }
    }
    Ok(())
}

fn report_training(o: &commands::TrainOutcome) {
    println!(
        "best epoch {}: test accuracy {:.4}, mean length {:.3}; wrote {} and {}",
        o.best_epoch,
        o.test.accuracy,
        o.test.mean_length,
        o.checkpoint.display(),
        o.metrics.display()
    );
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

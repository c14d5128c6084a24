//! `megn`: batch front end for the NLI model and the split-step simulator.

mod output;
mod plot;
mod run;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use megn::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "megn", version, about = "NLI power prediction for shaped, energy-correlated symbol streams")]
struct Cli {
    /// Experiment config (TOML), merged over the built-in defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads. Defaults to the number of cores.
    #[arg(long, global = true, env = "MEGN_WORKERS")]
    workers: Option<usize>,
    /// Override `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the resolved config and the derived SI values.
    Config,
    /// Tabulate kernels and channel functions over delay and frequency.
    Kernels {
        /// Largest delay. Defaults to `model.memory`.
        #[arg(long)]
        max_tau: Option<usize>,
        /// Also tabulate the two-delay kernels at f = 0.
        #[arg(long)]
        double: bool,
    },
    /// Energy covariances of the configured signal, at unit power.
    Correlations {
        /// Largest delay. Defaults to `model.memory`.
        #[arg(long)]
        max_tau: Option<usize>,
        /// Largest second delay of the triple covariances.
        #[arg(long, default_value_t = 0)]
        max_tau_prime: usize,
        /// Also estimate from this many generated blocks.
        #[arg(long)]
        empirical_blocks: Option<usize>,
    },
    /// NLI spectrum, eta and SNR for the configured signal.
    Predict,
    /// Measure eta with the split-step simulator.
    Simulate,
    /// Run every point of the `[sweep]` grid.
    Sweep,
    /// Render CSV outputs as SVG files in the output directory.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("setting up the worker pool")?;
    }
    if let Command::Plot { inputs } = &cli.command {
        return plot::plot_files(inputs, &cli.out);
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = output::Context::new(&cfg, &cli.out);
    match cli.command {
        Command::Config => run::show_config(&cfg),
        Command::Kernels { max_tau, double } => run::kernels(&cfg, &ctx, max_tau, double),
        Command::Correlations { max_tau, max_tau_prime, empirical_blocks } => {
            run::correlations(&cfg, &ctx, max_tau, max_tau_prime, empirical_blocks)
        }
        Command::Predict => run::predict(&cfg, &ctx),
        Command::Simulate => run::simulate(&cfg, &ctx),
        Command::Sweep => run::sweep(&cfg, &ctx),
        Command::Plot { .. } => unreachable!(),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use burgers_cli::commands::{cmd_evolve, cmd_growth, cmd_profile, cmd_spectrum, cmd_verify};
use burgers_cli::ExperimentConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "burgers-spectra", version, about = "Spectral stability experiments for the Burgers vortex")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set grid.n_r=48`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Random seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample the vortex profile g, u^g and the azimuthal velocity.
    Profile,
    /// Spectra, classification and gaps of the planar operators for each alpha.
    Spectrum,
    /// Transient growth curves over the (alpha, k0) sweep.
    Growth,
    /// One linear, stretched or nonlinear evolution run.
    Evolve,
    /// Run the acceptance checks; exits nonzero if any fails.
    Verify,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.sets)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let cfg = config(cli)?;
    let out = &cli.out;
    let print = |files: &[PathBuf]| files.iter().for_each(|f| println!("wrote {}", f.display()));
    match cli.command {
        Command::Profile => print(&cmd_profile(&cfg, out)?),
        Command::Spectrum => print(&cmd_spectrum(&cfg, out)?),
        Command::Growth => print(&cmd_growth(&cfg, out)?),
        Command::Evolve => {
            let (files, fit) = cmd_evolve(&cfg, out)?;
            print(&files);
            if let Some(f) = fit {
                println!("fitted rate {:.6} +- {:.6} on [{}, {}]", f.rate, f.halfwidth, f.window[0], f.window[1]);
            }
        }
        Command::Verify => {
            let (report, path) = cmd_verify(&cfg, out)?;
            for c in &report.criteria {
                println!("{}", c.line());
            }
            println!("wrote {}", path.display());
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

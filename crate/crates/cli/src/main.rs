use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pvar_core::experiment::{
    load_config, load_spec, run_sensitivity, run_sweep, simulate, summarize_dir, write_sensitivity,
    write_simulation, write_sweep,
};

/// Monte Carlo privacy-risk experiments.
#[derive(Debug, Parser)]
#[command(name = "pvar", version)]
struct Cli {
    /// Worker threads for the simulation pool (0 = one per core).
    #[arg(long, global = true, env = "PVAR_WORKERS", default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration and write report.json and trajectories.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid over k_min and epsilon.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-at-a-time sensitivity around the base configuration.
    Sensitivity {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the artifacts in a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn out_dir(flag: Option<PathBuf>, spec: Option<PathBuf>) -> Result<PathBuf> {
    flag.or(spec)
        .context("no output directory: pass --out or set output_dir in the spec")
}

fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let sim = simulate(&cfg)?;
            write_simulation(&out, &sim)?;
            let r = &sim.report;
            println!(
                "p_var_95={:.4} p_var_99={:.4} cp_var_95={:.4} max={:.4}",
                r.p_var_95, r.p_var_99, r.cp_var_95, r.max_loss
            );
            Ok(())
        }
        Command::Sweep { spec, out } => {
            let spec = load_spec(&spec)?;
            let out = out_dir(out, spec.output_dir.clone())?;
            let rows = run_sweep(&spec)?;
            write_sweep(&out, &rows)?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Sensitivity { spec, out } => {
            let spec = load_spec(&spec)?;
            let out = out_dir(out, spec.output_dir.clone())?;
            let rows = run_sensitivity(&spec)?;
            write_sensitivity(&out, &rows)?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Report { input } => {
            print!("{}", summarize_dir(&input)?);
            Ok(())
        }
    })
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

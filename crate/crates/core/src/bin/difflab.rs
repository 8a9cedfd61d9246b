use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use difflab::harness::{self, ExperimentResult, ExperimentSpec};

/// Run and summarize diffusion-sampler experiments.
#[derive(Parser)]
#[command(name = "difflab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a config and write the CSV.
    Run {
        config: PathBuf,
        /// Worker threads (overrides `workers`).
        #[arg(long)]
        workers: Option<usize>,
        /// Master seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// CSV path (overrides `out`; default `results.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a result CSV.
    Report { csv: PathBuf },
    /// Print or save a named preset config.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> difflab::Result<()> {
    match cli.command {
        Command::Run { config, workers, seed, out } => {
            let mut spec = ExperimentSpec::from_file(&config)?;
            if let Some(w) = workers {
                spec.workers = w.max(1);
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let out = out.or(spec.out.take()).unwrap_or_else(|| PathBuf::from("results.csv"));
            spec.out = Some(out.clone());
            let result = harness::run_sweep(&spec)?;
            print!("{}", harness::report(&result));
            eprintln!("wrote {}", out.display());
        }
        Command::Report { csv } => {
            let result = ExperimentResult::read_csv(&csv)?;
            print!("{}", harness::report(&result));
        }
        Command::Preset { name, out } => {
            let text = harness::preset_toml(&name)?;
            match out {
                Some(path) => std::fs::write(&path, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robayes::experiment::{self, run::summary_table, ExperimentConfig, RunOptions};
use robayes::Error;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRAINING: u8 = 3;

#[derive(Parser)]
#[command(
    name = "robayes",
    version,
    about = "Robust Bayesian learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every grid cell and seed of a config.
    Run {
        config: PathBuf,
        /// Output directory (default: out/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Merge metrics.json files from output directories into a long-format table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::Training { .. } | Error::Contract(_) | Error::ShapeMismatch { .. } => EXIT_TRAINING,
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, seed_override: Option<u64>) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(&config)?;
    let out = out.unwrap_or_else(|| {
        let stem = config
            .file_stem()
            .map_or("run".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from("out").join(stem)
    });
    let opts = RunOptions {
        out: out.clone(),
        seed_override,
        threads: None,
    };
    let summary = experiment::run_experiment(&cfg, &opts)?;
    let mut effective = cfg.clone();
    if let Some(s) = seed_override {
        effective.eval.seeds = vec![s];
    }
    print!("{}", summary_table(&effective, &summary)?);
    println!("outputs written to {}", out.display());
    Ok(())
}

fn report(dirs: Vec<PathBuf>, out: Option<PathBuf>) -> Result<(), Error> {
    let rep = experiment::collect(&dirs)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let csv = rep.to_csv()?;
    match out {
        Some(path) => {
            std::fs::write(&path, csv)?;
            print!("{}", rep.table());
        }
        None => {
            print!("{csv}");
            eprint!("{}", rep.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed_override,
        } => run(config, out, seed_override),
        Command::Report { dirs, out } => report(dirs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Training {
                last_good: Some(ck),
                ..
            } = &e
            {
                eprintln!(
                    "last finite posterior: d = {}, |mu|_max = {:.3e}",
                    ck.d,
                    ck.mu.iter().fold(0.0f64, |a, b| a.max(b.abs()))
                );
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uqbench_cli::config::{parse_config, Overrides};
use uqbench_cli::manifest::Status;
use uqbench_cli::{runner, CliError};

#[derive(Parser)]
#[command(name = "uqbench", version, about = "Benchmark epistemic uncertainty estimates against a Bayesian anchor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and write records, tables and a manifest.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the full-scale defaults (more members and repetitions).
        #[arg(long)]
        paper_scale: bool,
    },
    /// Rebuild tables from a record file or a directory of records.
    Report {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration file without running it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        paper_scale: bool,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, seed, workers, out, paper_scale } => {
            let cfg = parse_config(&config, &Overrides { seed, workers, output: out, paper_scale })?;
            let summary = runner::run(&cfg)?;
            println!("{}", summary.root.join("manifest.json").display());
            match summary.manifest.status() {
                Status::Complete => Ok(()),
                status => Err(CliError::Runtime(format!(
                    "run finished with status {status:?}; see {}",
                    summary.root.join("manifest.json").display()
                ))),
            }
        }
        Command::Report { path, out } => {
            for p in runner::report(&path, out.as_deref())? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Validate { config, paper_scale } => {
            let cfg = parse_config(&config, &Overrides { paper_scale, ..Overrides::default() })?;
            let labels: Vec<&str> = cfg.methods.iter().map(|m| m.label()).collect();
            println!(
                "{}: complexity {:?}, methods {}, k {}, seed {}",
                cfg.experiment.name(),
                cfg.complexities,
                labels.join(","),
                cfg.k,
                cfg.master_seed
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

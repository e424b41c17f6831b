use std::path::PathBuf;
use std::process::ExitCode;

use btw::trainloop::Variant;
use btw_cli::{cmd_compare, cmd_gen_data, cmd_train, CliError, DEFAULT_CONFIG};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "btw",
    version,
    about = "Bi-level modality weighting experiments on a small MoE model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `data.*` keys of a config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run one experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run several variants over several seeds and summarize.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "unweighted,btw_local,btw")]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
    },
    /// Print the bundled default config.
    DefaultConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out, force } => cmd_gen_data(&config, &out, force),
        Command::Train { config, out, force } => {
            let result = cmd_train(&config, &out, force)?;
            for (k, v) in result.test_metrics.columns() {
                println!("test {k}: {v:.4}");
            }
            Ok(())
        }
        Command::Compare {
            config,
            out,
            variants,
            seeds,
            jobs,
            force,
        } => {
            let summary = cmd_compare(&config, &variants, &seeds, &out, force, jobs)?;
            print!("{}", summary.to_csv());
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{DEFAULT_CONFIG}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("btw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

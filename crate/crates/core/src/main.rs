use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpm_stream::cli::{self, ExperimentConfig, OUTPUT_DIR_ENV};
use dpm_stream::Error;

/// Streaming DP mixture inference under concept drift.
///
/// Config fields can be overridden with flags mirroring the JSON schema,
/// e.g. `--seed 3`, `--model.alpha 2` or `--algorithms.0.gamma 0.5`.
#[derive(Parser)]
#[command(name = "dpm-stream", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic stream(s) and ground truth.
    Simulate(RunArgs),
    /// Run the algorithm roster and write per-batch metrics and summaries.
    Run(RunArgs),
    /// Aggregate one or more summaries into a comparison table.
    Compare {
        /// `summary.json` files or result directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the default experiment config as JSON.
    DefaultConfig,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match cli::extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => return exit_for(&e),
    };
    let parsed = Cli::parse_from(args);
    match run(parsed.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}

fn run(command: Command, overrides: &[(String, String)]) -> dpm_stream::Result<()> {
    match command {
        Command::Simulate(args) => {
            let cfg = ExperimentConfig::load(args.config.as_deref(), overrides)?;
            let out = cli::resolve_output_dir(&cfg, args.output_dir);
            for path in cli::cmd_simulate(&cfg, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Run(args) => {
            let cfg = ExperimentConfig::load(args.config.as_deref(), overrides)?;
            let out = cli::resolve_output_dir(&cfg, args.output_dir);
            let output = cli::cmd_run(&cfg, &out)?;
            let cmp = cli::compare_summaries(&[output.summary])?;
            print!("{}", cmp.to_markdown());
            println!("results written to {}", out.display());
        }
        Command::Compare { inputs, csv } => {
            let cmp = cli::cmd_compare(&inputs)?;
            print!("{}", cmp.to_markdown());
            if let Some(path) = csv {
                std::fs::write(path, cmp.to_csv())?;
            }
        }
        Command::DefaultConfig => {
            println!(
                "{}",
                serde_json::to_string_pretty(&ExperimentConfig::default())?
            );
        }
    }
    Ok(())
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cotrain_cli::{cmd_eval, cmd_run, cmd_simulate, RunOptions};
use cotrain_core::data::MatrixFormat;

#[derive(Parser)]
#[command(
    name = "cotrain",
    version,
    about = "Co-train a prompt label model with a feature head"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    BinF32,
}

impl From<Format> for MatrixFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => MatrixFormat::Csv,
            Format::BinF32 => MatrixFormat::BinF32,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run co-training from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Write a synthetic corpus described by a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generator seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint against a dataset's gold labels.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        view: u8,
        /// Directory for the report and prediction dump.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            quiet,
        } => cmd_run(&config, &RunOptions { out, seed, quiet }).map(|_| ()),
        Command::Simulate {
            config,
            out,
            seed,
            format,
            quiet,
        } => cmd_simulate(&config, &out, seed, format.into()).map(|manifest| {
            if !quiet {
                eprintln!("wrote {}", manifest.display());
            }
        }),
        Command::Eval {
            checkpoint,
            dataset,
            view,
            out,
            quiet,
        } => cmd_eval(&checkpoint, &dataset, view, out.as_deref()).and_then(|report| {
            let text = serde_json::to_string_pretty(&report)?;
            if !quiet {
                // a closed pipe (e.g. `| head`) is not an error
                match writeln!(std::io::stdout().lock(), "{text}") {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                    _ => {}
                }
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

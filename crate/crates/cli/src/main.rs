mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "aeapt", version, about = "Rank anomalous processes with an autoencoder ensemble")]
pub struct Cli {
    /// Run configuration in `key = value` form.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` and AEAPT_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print every configuration key with its effective value and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset file; `.csv` is dense, anything else sparse.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Anomalous process ids, one per line.
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read one view, or merge four views into ProcessAll, and write it out.
    Ingest {
        #[arg(long, value_name = "FILE", conflicts_with_all = ["pe", "px", "pp", "pn"])]
        input: Option<PathBuf>,
        #[arg(long, value_name = "FILE", requires_all = ["px", "pp", "pn"])]
        pe: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        px: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        pp: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        pn: Option<PathBuf>,
        /// Output format: dense or sparse.
        #[arg(long, default_value = "sparse")]
        to: String,
    },
    /// Generate a planted-anomaly dataset with its labels.
    Synth {
        #[arg(long, default_value_t = 5000)]
        normal: usize,
        #[arg(long, default_value_t = 10)]
        anomalies: usize,
        #[arg(long, default_value_t = 300)]
        attributes: usize,
        /// Generator seed; defaults to the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model on the normal rows and save it.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "AE")]
        arch: String,
    },
    /// Write the anomaly score of every process.
    Score {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Rank with a saved model and report nDCG alongside the AVF baseline.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train every configured architecture and elect the best by nDCG.
    Ensemble {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Draw the ranking band of a saved score file.
    RenderBand {
        /// `id,score` file as written by `score`.
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "ranking")]
        title: String,
    },
    /// Draw original, reconstruction and error grids for one process.
    RenderGrid {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Process id; defaults to the first row.
        #[arg(long)]
        id: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.command.is_none() && !cli.print_config {
        let _ = Cli::command().write_help(&mut std::io::stderr());
        return ExitCode::from(2);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aeapt: error: {}", e.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

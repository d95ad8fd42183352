//! `deltacomp` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "deltacomp",
    version,
    about = "Compress fine-tuned model deltas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write `finetuned - base` as a delta checkpoint.
    Split {
        base: PathBuf,
        finetuned: PathBuf,
        out: PathBuf,
    },
    /// Add a delta checkpoint back onto its base.
    Merge {
        base: PathBuf,
        delta: PathBuf,
        out: PathBuf,
    },
    /// Dropout, quantize and decompose every layer of a delta.
    Compress(CompressArgs),
    /// Expand a compressed artifact to a dense delta checkpoint.
    Decompress { artifact: PathBuf, out: PathBuf },
    /// Run one layer with the base and compressed delta computed separately.
    Forward {
        base: PathBuf,
        artifact: PathBuf,
        inputs: PathBuf,
        #[arg(long)]
        layer: String,
        /// Merge the weights first instead.
        #[arg(long)]
        fused: bool,
        /// Write the output as a checkpoint holding `Y` instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer output loss against the fine-tuned model.
    Eval {
        base: PathBuf,
        finetuned: PathBuf,
        artifact: PathBuf,
        inputs: PathBuf,
        #[arg(long)]
        probe_q: Option<String>,
        #[arg(long)]
        probe_k: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Print the compression report of an artifact.
    Stats {
        artifact: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Unquantized sparsification baseline.
    Baseline {
        delta: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        include: Vec<String>,
    },
    /// Write the toy transformer fixtures.
    GenFixtures {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct CompressArgs {
    delta: PathBuf,
    out: PathBuf,
    #[arg(long)]
    alpha: f64,
    /// Columns per group, `row`, or `auto`.
    #[arg(long, default_value = "row")]
    group_size: String,
    #[arg(long, default_value_t = 4)]
    k: u8,
    #[arg(long, default_value_t = 1)]
    m: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    baseline_bits: u32,
    /// Base model, needed by `--group-size auto`.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    probe_q: Option<String>,
    #[arg(long)]
    probe_k: Option<String>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    calib_fraction: f64,
    /// Only compress layers whose name contains this; repeatable.
    #[arg(long)]
    include: Vec<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    report_csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BaselineMethod {
    Magnitude,
    GlobalDropout,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>().map(std::io::Error::kind)
                == Some(std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

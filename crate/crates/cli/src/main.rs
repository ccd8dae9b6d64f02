//! `memtrack`: generate synthetic sequences, train, track, evaluate,
//! run ablation grids and benchmark the memory read.
//!
//! Exit codes: 0 success, 2 invalid argument, 3 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "memtrack", version, about = "Template-free tracking with a space-time memory read")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic sequences from a spec file.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of sequences.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSONL training log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Track one sequence directory, or every sequence below a root.
    Track {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        /// Results CSV, or a directory of `<name>.csv` for several sequences.
        #[arg(long)]
        out: PathBuf,
        /// Memory frames per step: a count, or `all`.
        #[arg(long)]
        memory_size: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
        /// Ignore label maps when embedding memory frames.
        #[arg(long)]
        no_fb_label: bool,
        /// Run query frames through the memory backbone.
        #[arg(long)]
        share_backbone: bool,
        /// Use the unshifted segment formula for memory selection.
        #[arg(long)]
        literal_eq5: bool,
        /// Tracker keys (post-processing, bank capacity); flags win.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Selection trace file (directory for several sequences).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Writes the similarity column of `--dump-pixel` at `--dump-frame`.
        #[arg(long, requires_all = ["dump_frame", "dump_pixel"])]
        dump_similarity: Option<PathBuf>,
        #[arg(long)]
        dump_frame: Option<usize>,
        #[arg(long)]
        dump_pixel: Option<usize>,
    },
    /// Score results against ground truth and write a JSON report.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the report.
        #[arg(long)]
        seed: Option<u64>,
        /// Tracker config whose hash is recorded in the report.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "synthetic")]
        suite: String,
    },
    /// Train and evaluate every setting of a grid over several seeds.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        /// Seeds 1..=N render the evaluation suites.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time an operation over a list of sizes.
    Bench {
        #[arg(long)]
        op: String,
        /// Memory sizes T.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        /// Feature grid side.
        #[arg(long, default_value_t = 37)]
        grid: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

//! `senseknn` command-line entry point.
//!
//! Exit codes: 0 success, 2 input or parse failure, 3 data inconsistency,
//! 4 bad user argument.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "senseknn", version, about = "kNN word sense disambiguation over contextual embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset statistics for lexical-sample train and/or test files
    Stats(StatsArgs),
    /// Score the kNN classifier for every k, plus the MFS baseline and POS breakdown
    Evaluate(EvaluateArgs),
    /// t-SNE plots of one or more lexelts' training embeddings
    Tsne(TsneArgs),
    /// Most-frequent-sense table, optionally scored on a test set
    Mfs(MfsArgs),
    /// Validate an embedding file and print its header
    InspectEmbeddings(InspectArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub train_xml: Option<PathBuf>,
    #[arg(long)]
    pub train_key: Option<PathBuf>,
    #[arg(long)]
    pub test_xml: Option<PathBuf>,
    #[arg(long)]
    pub test_key: Option<PathBuf>,
    /// Output directory (overridden by SENSEKNN_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset name used in reports; defaults to the file stem
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Print JSON instead of a text table
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training embedding file; repeat for several models
    #[arg(long = "train-emb")]
    pub train_emb: Vec<PathBuf>,
    /// Test embedding file; paired with --train-emb by model tag
    #[arg(long = "test-emb")]
    pub test_emb: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5, 7, 10, 11])]
    pub k: Vec<usize>,
    /// k used for the per-POS breakdown
    #[arg(long, default_value_t = 1)]
    pub pos_k: usize,
    /// Only score the most-frequent-sense baseline; no embeddings needed
    #[arg(long)]
    pub mfs_only: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct TsneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "train-emb")]
    pub train_emb: PathBuf,
    /// Lexelt to plot, e.g. bank.n; repeatable
    #[arg(long, required = true)]
    pub lexelt: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = senseknn_core::plot::DEFAULT_MIN_FREQ)]
    pub min_freq: usize,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// File of `sense-key label` lines for the legend
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MfsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub file: PathBuf,
    /// Print the header as JSON
    #[arg(long)]
    pub json: bool,
    /// Dump all records as line-delimited JSON
    #[arg(long)]
    pub jsonl: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Stats(a) => commands::stats(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Tsne(a) => commands::tsne(&a),
        Command::Mfs(a) => commands::mfs(&a),
        Command::InspectEmbeddings(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

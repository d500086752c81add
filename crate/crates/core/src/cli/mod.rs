//! Command-line front end. `vulnclf --help` lists the commands.
//!
//! Exit status: 0 success, 1 a scanned snippet was classified vulnerable,
//! 2 usage or configuration error, 3 data error.

mod commands;
mod config;
mod scan;

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{read_predictions, task_for_labels, ProjectManifest};
pub use config::{apply_override, DatasetSettings, ProjectConfig, TokenizerSettings};
pub use scan::{collect_snippets, scan_snippets, split_functions, Snippet, Verdict};

use crate::datapipe::{CleanProfile, Task};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "vulnclf",
    version,
    about = "Transformer vulnerability classifier for C/C++ source"
)]
pub struct Cli {
    /// Project configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for model init, shuffling, dropout and dataset splits.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a config value, e.g. `--set train.learning_rate=1e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest, clean, deduplicate, label and split raw datasets.
    BuildDataset(BuildDatasetArgs),
    /// Learn a BPE vocabulary with the domain token registry.
    TrainTokenizer(TrainTokenizerArgs),
    /// Fine-tune a classifier on a built dataset.
    Train(TrainArgs),
    /// Score a checkpoint, or a predictions CSV, on a labeled split.
    Eval(EvalArgs),
    /// Classify source files or stdin.
    Scan(ScanArgs),
    /// Run the five ablation configurations and summarize them.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Input file or directory; repeatable. Defaults to `dataset.inputs`.
    #[arg(long = "input", short = 'i')]
    pub inputs: Vec<PathBuf>,
    /// Force an adapter instead of detecting it from the path.
    #[arg(long, value_parser = ["jsonl", "csv", "dir"])]
    pub adapter: Option<String>,
    /// Column mapping such as `code=func,label=target`.
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long)]
    pub profile: Option<CleanProfile>,
    /// CSV with `cve_id,cwe_id` rows used to fill missing CWE tags.
    #[arg(long)]
    pub cwe_table: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long, overrides_with = "no_obfuscate")]
    pub obfuscate: bool,
    #[arg(long)]
    pub no_obfuscate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    /// Corpus file; `.jsonl` files contribute their `source_text` fields,
    /// anything else is one document. Repeatable.
    #[arg(long = "corpus", required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Domain token list replacing the bundled registry.
    #[arg(long)]
    pub specials: Option<PathBuf>,
    #[arg(long)]
    pub no_domain_tokens: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `build-dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Vocabulary file; defaults to `tokenizer.path`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory (its `test.jsonl` is used) or a JSONL file.
    #[arg(long, required_unless_present = "predictions")]
    pub dataset: Option<PathBuf>,
    /// Defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    /// Score a `label,prediction[,p_0,...]` CSV instead of running a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Also write metrics.json, report.txt and confusion.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Classify each top-level function separately.
    #[arg(long)]
    pub split_functions: bool,
    /// Token budget per snippet; defaults to the configured maximum.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Source files; stdin when empty or `-`.
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the variant configs and tokenizer probes without training.
    #[arg(long)]
    pub dry_run: bool,
}

/// Runs the tool with `args` (including the program name) and returns the
/// exit status. Errors go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write, stdin: &mut dyn Read) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, out, stdin) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write, stdin: &mut dyn Read) -> Result<i32> {
    let cfg = ProjectConfig::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let mut echoed = cli.overrides.clone();
    if let Some(s) = cli.seed {
        echoed.push(format!("seed={s}"));
    }
    let ctx = commands::Context {
        cfg,
        overrides: echoed,
    };
    match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(&ctx, a, out),
        Command::TrainTokenizer(a) => commands::train_tokenizer(&ctx, a, out),
        Command::Train(a) => commands::train(&ctx, a, out),
        Command::Eval(a) => commands::eval(&ctx, a, out),
        Command::Scan(a) => commands::scan(&ctx, a, out, stdin),
        Command::Ablate(a) => commands::ablate(&ctx, a, out),
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    run(std::env::args_os(), &mut out, &mut std::io::stdin().lock())
}

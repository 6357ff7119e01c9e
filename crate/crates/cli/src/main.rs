//! `natpert`: harvest revision histories, mine naturally perturbed
//! paragraph pairs, build paired test sets, and score predictions on them.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Error in how the tool was invoked, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "natpert",
    version,
    about = "Naturally perturbed reading-comprehension test sets from Wikipedia revisions"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct Global {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed for every seeded choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Revision cache directory.
    #[arg(
        long,
        global = true,
        env = "NATPERT_CACHE",
        default_value = "natpert_cache"
    )]
    pub cache: PathBuf,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Clone)]
pub struct TitleArgs {
    /// Page title; repeatable.
    #[arg(long = "title")]
    pub titles: Vec<String>,
    /// File with one page title per line.
    #[arg(long = "titles")]
    pub titles_file: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fetch full revision histories through the MediaWiki API into the cache.
    Harvest {
        #[command(flatten)]
        titles: TitleArgs,
        /// Ignore revisions after this RFC 3339 timestamp.
        #[arg(long)]
        max_timestamp: Option<String>,
        /// Refetch pages that are already cached.
        #[arg(long)]
        refresh: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Load revisions of the given pages from a pages-meta-history XML dump.
    IngestDump {
        /// Dump file, optionally gzip or bzip2 compressed.
        #[arg(long)]
        dump: PathBuf,
        #[command(flatten)]
        titles: TitleArgs,
        #[arg(long)]
        max_timestamp: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Align adjacent cached revisions and write candidate pairs.
    Mine {
        /// Pages to mine; every cached page when omitted.
        #[command(flatten)]
        titles: TitleArgs,
        #[arg(long)]
        min_paragraph_chars: Option<usize>,
        #[arg(long)]
        similarity_threshold: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Match a dataset against candidates and write the paired test sets.
    BuildTestset {
        /// SQuAD-format JSON, or multi-passage JSON-Lines (`.jsonl`).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build naturally perturbed training instances for augmentation.
    Augment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply a synthetic perturbation to every context of a dataset.
    PerturbSynth {
        #[arg(long)]
        method: String,
        #[arg(long)]
        rate: Option<f64>,
        /// Substitution resource (JSON-Lines) for the embedding and synonym methods.
        #[arg(long)]
        resource: Option<PathBuf>,
        /// JSON object overriding the OCR confusion map.
        #[arg(long)]
        ocr_map: Option<PathBuf>,
        /// Force paragraph or sentence-wise application.
        #[arg(long, value_parser = ["paragraph", "sentence"])]
        scope: Option<String>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction file against a dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "f1")]
        metric: String,
        /// JSON list of unanswerability phrase templates.
        #[arg(long)]
        phrases: Option<PathBuf>,
        #[arg(long)]
        model_name: Option<String>,
        /// Original-side dataset, to report the relative change.
        #[arg(long, requires = "original_predictions")]
        original_dataset: Option<PathBuf>,
        #[arg(long, requires = "original_dataset")]
        original_predictions: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Build challenge sets from multi-model predictions.
    Challenge {
        #[command(subcommand)]
        step: ChallengeStep,
    },
    /// Case labels, perturbation magnitude and answer-sentence analyses.
    Analyze {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        perturbed: PathBuf,
        /// JSON manifest listing each model's original and perturbed predictions.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum ChallengeStep {
    /// Pair candidates with dev questions and write the datasets to predict on.
    Pool {
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Orient every pooled pair and write the challenge set.
    Search {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// JSON manifest listing each model's prior-side and current-side predictions.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        f1_threshold: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.global.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool configured once");
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

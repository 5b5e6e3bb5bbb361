//! Command-line front end for the `newsmil` pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or parse
//! error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
    Core(newsmil::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(newsmil::Error::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<newsmil::Error> for CliError {
    fn from(e: newsmil::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "newsmil", version, args_override_self = true, about = "Daily stock direction from news headlines by multiple-instance learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a corpus, train a model and write checkpoint, history and metrics.
    Train(Common),
    /// Evaluate a checkpoint on one split.
    Eval(Common),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Per-split instance-count statistics and histograms.
    Stats(Common),
    /// Write a planted-polarity synthetic corpus.
    Synth(Common),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Offsets the analytic gradient of one family (negative control).
    #[arg(long, hide = true)]
    pub perturb_family: Option<String>,
}

/// Flags shared by every subcommand. Each overrides the config-file key of
/// the same name.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// `key = value` file read before the flags are applied.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long, value_parser = ["mil-rep", "mil-s", "s-avg"])]
    pub variant: Option<String>,
    /// Reject malformed news lines (default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Skip malformed news lines and report how many were dropped.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, value_name = "N", allow_hyphen_values = true)]
    pub news_lag_days: Option<String>,
    /// Write per-headline probabilities (eval).
    #[arg(long)]
    pub instances: bool,
    #[arg(long, value_parser = ["train", "val", "test"])]
    pub split: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub news: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub prices: Option<String>,
    /// Pretrained vectors in GloVe text format.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub stopwords: Option<String>,
    /// Relevance filter word list.
    #[arg(long, value_name = "PATH")]
    pub keywords: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<String>,
    /// Synthetic corpus settings (synth).
    #[arg(long, value_name = "PATH")]
    pub spec: Option<String>,
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub train_end: Option<String>,
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub val_end: Option<String>,
    #[arg(long, value_name = "N")]
    pub embed_dim: Option<String>,
    #[arg(long, value_name = "N")]
    pub hidden_dim: Option<String>,
    #[arg(long, value_name = "N")]
    pub attn_dim: Option<String>,
    #[arg(long, value_name = "N")]
    pub mlp_dim: Option<String>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<String>,
    #[arg(long, value_name = "N")]
    pub max_epochs: Option<String>,
    #[arg(long, value_name = "N")]
    pub patience: Option<String>,
    #[arg(long, value_name = "P")]
    pub keep_prob: Option<String>,
    #[arg(long, value_name = "X")]
    pub lr: Option<String>,
    #[arg(long)]
    pub fine_tune_embeddings: bool,
    #[arg(long, value_name = "N")]
    pub min_count: Option<String>,
    #[arg(long, value_parser = ["close", "adj_close"])]
    pub price_field: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        push("seed", &self.seed);
        push("out", &self.out);
        push("variant", &self.variant);
        push("news-lag-days", &self.news_lag_days);
        push("split", &self.split);
        push("news", &self.news);
        push("prices", &self.prices);
        push("embeddings", &self.embeddings);
        push("stopwords", &self.stopwords);
        push("keywords", &self.keywords);
        push("checkpoint", &self.checkpoint);
        push("spec", &self.spec);
        push("train-end", &self.train_end);
        push("val-end", &self.val_end);
        push("embed-dim", &self.embed_dim);
        push("hidden-dim", &self.hidden_dim);
        push("attn-dim", &self.attn_dim);
        push("mlp-dim", &self.mlp_dim);
        push("batch-size", &self.batch_size);
        push("max-epochs", &self.max_epochs);
        push("patience", &self.patience);
        push("keep-prob", &self.keep_prob);
        push("lr", &self.lr);
        push("min-count", &self.min_count);
        push("price-field", &self.price_field);
        let flag = |on: bool| on.then(|| "true".to_string());
        push("strict", &flag(self.strict));
        push("lenient", &flag(self.lenient));
        push("instances", &flag(self.instances));
        push("fine-tune-embeddings", &flag(self.fine_tune_embeddings));
        out
    }

    /// Config file (if any) with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            cfg.set(key, &value).map_err(|m| CliError::Usage(format!("--{key}: {m}")))?;
        }
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

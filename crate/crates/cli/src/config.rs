//! Run configuration: `key = value` files overridden by command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use newsmil::corpus::{CorpusSource, ParseMode, PriceField, SplitName};
use newsmil::model::{Dims, Variant};
use newsmil::train::{AdadeltaConfig, TrainConfig};

use crate::CliError;

/// Every setting a subcommand may read. Keys match the long flag names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub news: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Unset dimensions fall back to the defaults when training and to the
    /// checkpoint when evaluating.
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub attn_dim: Option<usize>,
    pub mlp_dim: Option<usize>,
    pub variant: Option<Variant>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub keep_prob: f64,
    pub seed: u64,
    pub fine_tune_embeddings: bool,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub min_count: usize,
    pub train_end: Option<NaiveDate>,
    pub val_end: Option<NaiveDate>,
    pub news_lag_days: i64,
    pub strict: bool,
    pub price_field: PriceField,
    pub split: SplitName,
    pub instances: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            news: None,
            prices: None,
            embeddings: None,
            stopwords: None,
            keywords: None,
            checkpoint: None,
            spec: None,
            out: None,
            embed_dim: None,
            hidden_dim: None,
            attn_dim: None,
            mlp_dim: None,
            variant: None,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            keep_prob: train.keep_prob,
            seed: train.seed,
            fine_tune_embeddings: train.fine_tune_embeddings,
            lr: train.optimizer.lr,
            rho: train.optimizer.rho,
            eps: train.optimizer.eps,
            min_count: 5,
            train_end: None,
            val_end: None,
            news_lag_days: 0,
            strict: true,
            price_field: PriceField::Close,
            split: SplitName::Test,
            instances: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("bad value {value:?} for {key} (expected true or false)")),
    }
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| format!("bad date {value:?} for {key} (expected YYYY-MM-DD)"))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn opt_dim(key: &str, value: &str) -> Result<Option<usize>, String> {
    if value.is_empty() {
        return Ok(None);
    }
    match parse_num::<usize>(key, value)? {
        0 => Err(format!("{key} must be positive")),
        n => Ok(Some(n)),
    }
}

impl RunConfig {
    /// Applies one setting. Keys accept `-` or `_`; an empty value clears an
    /// optional setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "news" => self.news = opt_path(value),
            "prices" => self.prices = opt_path(value),
            "embeddings" => self.embeddings = opt_path(value),
            "stopwords" => self.stopwords = opt_path(value),
            "keywords" => self.keywords = opt_path(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "spec" => self.spec = opt_path(value),
            "out" => self.out = opt_path(value),
            "embed-dim" => self.embed_dim = opt_dim(k, value)?,
            "hidden-dim" => self.hidden_dim = opt_dim(k, value)?,
            "attn-dim" => self.attn_dim = opt_dim(k, value)?,
            "mlp-dim" => self.mlp_dim = opt_dim(k, value)?,
            "variant" => {
                self.variant = if value.is_empty() {
                    None
                } else {
                    Some(value.parse().map_err(|e: newsmil::Error| e.to_string())?)
                }
            }
            "batch-size" => self.batch_size = parse_num(k, value)?,
            "max-epochs" => self.max_epochs = parse_num(k, value)?,
            "patience" => self.patience = parse_num(k, value)?,
            "keep-prob" => self.keep_prob = parse_num(k, value)?,
            "seed" => self.seed = parse_num(k, value)?,
            "fine-tune-embeddings" => self.fine_tune_embeddings = parse_bool(k, value)?,
            "lr" => self.lr = parse_num(k, value)?,
            "rho" => self.rho = parse_num(k, value)?,
            "eps" => self.eps = parse_num(k, value)?,
            "min-count" => self.min_count = parse_num(k, value)?,
            "train-end" => self.train_end = (!value.is_empty()).then(|| parse_date(k, value)).transpose()?,
            "val-end" => self.val_end = (!value.is_empty()).then(|| parse_date(k, value)).transpose()?,
            "news-lag-days" => self.news_lag_days = parse_num(k, value)?,
            "strict" => self.strict = parse_bool(k, value)?,
            "lenient" => self.strict = !parse_bool(k, value)?,
            "price-field" => self.price_field = value.parse().map_err(|e: newsmil::Error| e.to_string())?,
            "split" => self.split = value.parse().map_err(|e: newsmil::Error| e.to_string())?,
            "instances" => self.instances = parse_bool(k, value)?,
            _ => return Err(format!("unknown setting {key:?}")),
        }
        Ok(())
    }

    /// Applies a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<(), CliError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| CliError::Usage(format!("{}:{}: {msg}", source.display(), idx + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, found {line:?}")))?;
            self.set(key, value).map_err(fail)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: cannot read config: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn dims(&self) -> Dims {
        let d = Dims::STANDARD;
        Dims {
            embed: self.embed_dim.unwrap_or(d.embed),
            hidden: self.hidden_dim.unwrap_or(d.hidden),
            attn: self.attn_dim.unwrap_or(d.attn),
            mlp: self.mlp_dim.unwrap_or(d.mlp),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant.unwrap_or_default()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            keep_prob: self.keep_prob,
            seed: self.seed,
            variant: self.variant(),
            fine_tune_embeddings: self.fine_tune_embeddings,
            optimizer: AdadeltaConfig { rho: self.rho, eps: self.eps, lr: self.lr },
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir().join("model.ckpt"))
    }

    /// Input files and split dates for ingestion. Missing settings are usage
    /// errors; missing files are data errors.
    pub fn corpus_source(&self) -> Result<CorpusSource, CliError> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone().ok_or_else(|| CliError::Usage(format!("missing required setting {key}")))
        };
        let news = need(&self.news, "news")?;
        let prices = need(&self.prices, "prices")?;
        let train_end = self.train_end.ok_or_else(|| CliError::Usage("missing required setting train-end".into()))?;
        let val_end = self.val_end.ok_or_else(|| CliError::Usage("missing required setting val-end".into()))?;
        if train_end >= val_end {
            return Err(CliError::Usage(format!("train-end {train_end} must precede val-end {val_end}")));
        }
        let mut inputs = vec![&news, &prices];
        inputs.extend(self.keywords.iter());
        inputs.extend(self.stopwords.iter());
        inputs.extend(self.embeddings.iter());
        require_files(inputs)?;
        Ok(CorpusSource {
            news,
            prices,
            keywords: self.keywords.clone(),
            mode: if self.strict { ParseMode::Strict } else { ParseMode::Lenient },
            price_field: self.price_field,
            lag_days: self.news_lag_days,
            train_end,
            val_end,
        })
    }

    /// Every key with its effective value, in a form [`RunConfig::load`] reads back.
    pub fn resolved(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        let dims = self.dims();
        let rows: Vec<(&str, String)> = vec![
            ("news", path(&self.news)),
            ("prices", path(&self.prices)),
            ("embeddings", path(&self.embeddings)),
            ("stopwords", path(&self.stopwords)),
            ("keywords", path(&self.keywords)),
            ("checkpoint", self.checkpoint_path().display().to_string()),
            ("spec", path(&self.spec)),
            ("out", self.out_dir().display().to_string()),
            ("embed-dim", dims.embed.to_string()),
            ("hidden-dim", dims.hidden.to_string()),
            ("attn-dim", dims.attn.to_string()),
            ("mlp-dim", dims.mlp.to_string()),
            ("variant", self.variant().to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("max-epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("keep-prob", self.keep_prob.to_string()),
            ("seed", self.seed.to_string()),
            ("fine-tune-embeddings", self.fine_tune_embeddings.to_string()),
            ("lr", self.lr.to_string()),
            ("rho", self.rho.to_string()),
            ("eps", self.eps.to_string()),
            ("min-count", self.min_count.to_string()),
            ("train-end", date(self.train_end)),
            ("val-end", date(self.val_end)),
            ("news-lag-days", self.news_lag_days.to_string()),
            ("strict", self.strict.to_string()),
            (
                "price-field",
                match self.price_field {
                    PriceField::Close => "close",
                    PriceField::AdjClose => "adj_close",
                }
                .to_string(),
            ),
            ("split", self.split.to_string()),
            ("instances", self.instances.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Writes [`RunConfig::resolved`] to `resolved.conf` in the output directory.
    pub fn echo(&self) -> Result<PathBuf, CliError> {
        let dir = self.out_dir();
        create_dir(&dir)?;
        let path = dir.join("resolved.conf");
        std::fs::write(&path, self.resolved()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<(), CliError> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Data(format!("{}: file not found", p.display())));
        }
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let mut cfg = RunConfig::default();
        let text = "# run\nnews = data/news.tsv\nmax_epochs = 7 # short\n\nvariant = mil-s\nlenient = true\n";
        cfg.apply_text(text, Path::new("a.conf")).unwrap();
        assert_eq!(cfg.news, Some(PathBuf::from("data/news.tsv")));
        assert_eq!(cfg.max_epochs, 7);
        assert_eq!(cfg.variant(), Variant::MilS);
        assert!(!cfg.strict);
    }

    #[test]
    fn errors_name_file_and_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("seed = 1\nbogus = 2\n", Path::new("x.conf")).unwrap_err();
        assert!(err.to_string().starts_with("x.conf:2:"), "{err}");
        let err = cfg.apply_text("seed\n", Path::new("x.conf")).unwrap_err();
        assert!(err.to_string().contains("x.conf:1"), "{err}");
        assert!(cfg.set("hidden-dim", "0").is_err());
        assert!(cfg.set("train-end", "2012/01/01").is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let mut cfg = RunConfig::default();
        for (k, v) in [("news", "n.tsv"), ("train-end", "2012-06-27"), ("keep-prob", "0.25"), ("price-field", "adj_close")] {
            cfg.set(k, v).unwrap();
        }
        let text = cfg.resolved();
        let mut back = RunConfig::default();
        back.apply_text(&text, Path::new("r.conf")).unwrap();
        assert_eq!(back.resolved(), text);
        assert_eq!(back.dims(), Dims::STANDARD);
        assert_eq!(back.price_field, PriceField::AdjClose);
    }

    #[test]
    fn defaults_follow_training_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.min_count, 5);
        assert!(cfg.strict);
    }
}

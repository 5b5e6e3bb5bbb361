//! Subcommand implementations. Data products go to files (and tables to
//! stdout); progress and diagnostics go to stderr.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use newsmil::corpus::{
    load_corpus, synthesize, write_histogram_csv, write_stats_csv, Bag, Dataset, LoadedCorpus, SplitName, SynthSpec,
};
use newsmil::model::{load_checkpoint, run_gradcheck, save_checkpoint, Checkpoint, GradcheckOptions, ModelParams};
use newsmil::tensor::Rng;
use newsmil::textprep::{build_vocab, load_pretrained, EmbeddingMatrix, Stopwords};
use newsmil::train::{evaluate, fit_with, instance_report, write_history_csv, write_instance_csv, write_metrics_csv, Metrics};

use crate::config::{create_dir, require_files, RunConfig};
use crate::{CliError, Command};

pub fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Train(c) => cmd_train(&c.resolve()?),
        Command::Eval(c) => cmd_eval(&c.resolve()?),
        Command::Gradcheck(g) => cmd_gradcheck(&g.common.resolve()?, g.perturb_family.clone()),
        Command::Stats(c) => cmd_stats(&c.resolve()?),
        Command::Synth(c) => cmd_synth(&c.resolve()?, c.seed.is_some()),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|()| w.flush()).map_err(|e| CliError::io(path, e))
}

fn stdout_table(f: impl FnOnce(&mut std::io::StdoutLock) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    f(&mut out)
        .and_then(|()| out.flush())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn stopwords(cfg: &RunConfig) -> Result<Stopwords, CliError> {
    Ok(match &cfg.stopwords {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::english(),
    })
}

fn ingest(cfg: &RunConfig) -> Result<LoadedCorpus, CliError> {
    let corpus = load_corpus(&cfg.corpus_source()?)?;
    eprintln!(
        "ingested {} days (train {}, val {}, test {}); skipped {} malformed lines, filtered {}, dropped {} late and {} unlabeled headlines",
        corpus.days.len(),
        corpus.days.train.len(),
        corpus.days.val.len(),
        corpus.days.test.len(),
        corpus.skipped_lines,
        corpus.filtered_out,
        corpus.dropped_late,
        corpus.dropped_unlabeled
    );
    Ok(corpus)
}

/// Metrics for every nonempty split.
fn split_metrics(params: &ModelParams, data: &Dataset<Bag>) -> Result<Vec<(&'static str, Metrics)>, CliError> {
    let mut rows = Vec::new();
    for split in SplitName::ALL {
        let bags = data.get(split);
        if !bags.is_empty() {
            rows.push((split.as_str(), evaluate(params, bags)?));
        }
    }
    Ok(rows)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let dims = cfg.dims();
    dims.validate()?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let corpus = ingest(cfg)?;
    let out = cfg.out_dir();
    cfg.echo()?;

    let stop = stopwords(cfg)?;
    let vocab = build_vocab(&corpus.days.train_titles(), &stop, cfg.min_count)?;
    let mut rng = Rng::new(cfg.seed);
    let embeddings = match &cfg.embeddings {
        Some(path) => load_pretrained(path, &vocab, dims.embed, &mut rng)?,
        None => EmbeddingMatrix::random(&vocab, dims.embed, &mut rng),
    };
    let data = corpus.days.encode(&vocab, &stop);
    eprintln!(
        "vocabulary {} tokens; bags train {}, val {}, test {}",
        vocab.len(),
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let initial = ModelParams::new(dims, train_cfg.variant, embeddings, &mut rng)?;
    let result = fit_with(initial, &data, &train_cfg, |r| {
        eprintln!("epoch {:>3}  train_loss {:.6}  val_accuracy {:.4}", r.epoch, r.train_loss, r.val_accuracy);
    })?;
    write_file(&out.join("history.csv"), |w| write_history_csv(w, &result.history))?;

    let ckpt_path = cfg.checkpoint_path();
    if let Some(parent) = ckpt_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let checkpoint = Checkpoint::new(result.params, vocab)?;
    save_checkpoint(&ckpt_path, &checkpoint)?;
    let stored = load_checkpoint(&ckpt_path)?;
    let metrics = split_metrics(&stored.params, &data)?;
    write_file(&out.join("metrics.csv"), |w| write_metrics_csv(w, &metrics))?;

    match result.best_epoch {
        Some(e) => eprintln!("best epoch {e}; checkpoint {}", ckpt_path.display()),
        None => eprintln!("no epochs run; checkpoint holds the initial parameters"),
    }
    stdout_table(|w| {
        for (split, m) in &metrics {
            if *split != "train" {
                writeln!(w, "{split}_accuracy {:.6}", m.accuracy)?;
            }
        }
        Ok(())
    })
}

/// Configured dimensions and variant must agree with the checkpoint when set.
fn check_compatible(cfg: &RunConfig, params: &ModelParams) -> Result<(), CliError> {
    let d = params.dims;
    let pairs = [
        ("embed-dim", cfg.embed_dim, d.embed),
        ("hidden-dim", cfg.hidden_dim, d.hidden),
        ("attn-dim", cfg.attn_dim, d.attn),
        ("mlp-dim", cfg.mlp_dim, d.mlp),
    ];
    for (key, configured, stored) in pairs {
        if let Some(c) = configured.filter(|&c| c != stored) {
            return Err(CliError::Usage(format!(
                "{key} mismatch: config has {c}, checkpoint has {stored}"
            )));
        }
    }
    if let Some(v) = cfg.variant.filter(|&v| v != params.variant) {
        return Err(CliError::Usage(format!(
            "variant mismatch: config has {v}, checkpoint has {}",
            params.variant
        )));
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt_path = cfg.checkpoint_path();
    require_files([&ckpt_path])?;
    let Checkpoint { params, vocab } = load_checkpoint(&ckpt_path)?;
    check_compatible(cfg, &params)?;
    let corpus = ingest(cfg)?;

    let mut resolved = cfg.clone();
    resolved.embed_dim = Some(params.dims.embed);
    resolved.hidden_dim = Some(params.dims.hidden);
    resolved.attn_dim = Some(params.dims.attn);
    resolved.mlp_dim = Some(params.dims.mlp);
    resolved.variant = Some(params.variant);
    resolved.echo()?;

    let data = corpus.days.encode(&vocab, &stopwords(cfg)?);
    let bags = data.get(cfg.split);
    if bags.is_empty() {
        return Err(CliError::Usage(format!("split {} has no bags", cfg.split)));
    }
    let metrics = evaluate(&params, bags)?;
    if cfg.instances {
        let path = resolved.out_dir().join(format!("instances_{}.csv", cfg.split));
        let rows = instance_report(&params, bags)?;
        write_file(&path, |w| write_instance_csv(w, &rows))?;
        eprintln!("wrote {} instance rows to {}", rows.len(), path.display());
    }
    stdout_table(|w| write_metrics_csv(w, &[(cfg.split.as_str(), metrics)]))
}

pub fn cmd_gradcheck(cfg: &RunConfig, perturb: Option<String>) -> Result<(), CliError> {
    let opts = GradcheckOptions {
        seeds: (0..5).map(|i| cfg.seed.wrapping_add(i)).collect(),
        variant: cfg.variant(),
        perturb,
        ..GradcheckOptions::default()
    };
    if cfg.out.is_some() {
        cfg.echo()?;
    }
    let report = run_gradcheck(&opts)?;
    stdout_table(|w| {
        writeln!(w, "family,max_rel_error,max_abs_error,entries")?;
        for f in &report.families {
            writeln!(w, "{},{:.3e},{:.3e},{}", f.family, f.max_rel_error, f.max_abs_error, f.entries)?;
        }
        Ok(())
    })?;
    let failures = report.failures();
    if failures.is_empty() {
        eprintln!("gradcheck passed: {} families within {:e}", report.families.len(), report.tolerance);
        return Ok(());
    }
    let listed: Vec<String> = failures
        .iter()
        .map(|f| format!("{} ({:.3e})", f.family, f.max_rel_error))
        .collect();
    Err(CliError::Numeric(format!(
        "gradcheck failed (tolerance {:e}): {}",
        report.tolerance,
        listed.join(", ")
    )))
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = ingest(cfg)?;
    let out = cfg.out_dir();
    cfg.echo()?;
    let rows = corpus.days.stats();
    write_file(&out.join("stats.csv"), |w| write_stats_csv(w, &rows))?;
    for (split, s) in &rows {
        match s {
            Some(s) => write_file(&out.join(format!("histogram_{split}.csv")), |w| write_histogram_csv(w, s))?,
            None => eprintln!("{split} split is empty"),
        }
    }
    stdout_table(|w| write_stats_csv(w, &rows))
}

/// Planted defaults, then the `--spec` file, then `--seed`.
fn synth_spec(cfg: &RunConfig, seed_flag_set: bool) -> Result<SynthSpec, CliError> {
    let mut spec = SynthSpec::planted(cfg.seed);
    if let Some(path) = &cfg.spec {
        require_files([path])?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |m: String| CliError::Usage(format!("{}:{}: {m}", path.display(), idx + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, found {line:?}")))?;
            spec.set(k.trim(), v.trim()).map_err(|e| fail(e.to_string()))?;
        }
    }
    if seed_flag_set {
        spec.seed = cfg.seed;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

pub fn cmd_synth(cfg: &RunConfig, seed_flag_set: bool) -> Result<(), CliError> {
    let spec = synth_spec(cfg, seed_flag_set)?;
    let corpus = synthesize(&spec)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_file(&out.join("news.tsv"), |w| corpus.write_news(w))?;
    write_file(&out.join("prices.csv"), |w| corpus.write_prices(w))?;
    write_file(&out.join("truth.csv"), |w| corpus.truth.write_csv(w))?;
    write_file(&out.join("labels.csv"), |w| corpus.write_labels(w))?;
    write_file(&out.join("split.conf"), |w| {
        writeln!(w, "news = {}", out.join("news.tsv").display())?;
        writeln!(w, "prices = {}", out.join("prices.csv").display())?;
        writeln!(w, "train-end = {}", corpus.days.train_end)?;
        writeln!(w, "val-end = {}", corpus.days.val_end)
    })?;
    eprintln!(
        "wrote {} headlines over {} days (train {}, val {}, test {}) to {}",
        corpus.news.len(),
        corpus.days.len(),
        corpus.days.train.len(),
        corpus.days.val.len(),
        corpus.days.test.len(),
        out.display()
    );
    Ok(())
}

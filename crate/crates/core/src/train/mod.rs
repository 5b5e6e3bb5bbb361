//! Bag-level training: loss, mini-batch Adadelta, early stopping, evaluation.

mod adadelta;
mod metrics;

pub use adadelta::{adadelta_step, Accumulator, AdadeltaConfig, AdadeltaState};
pub use metrics::{predict_class, roc_auc, write_metrics_csv, Metrics};

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::corpus::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::model::{backward, forward, instance_probs, Gradients, Mode, ModelParams, Variant};
use crate::tensor::Rng;

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

pub fn bce_loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `d bce_loss / d ŷ`; zero where the clamp is active.
pub fn bce_grad(y_hat: f64, y: u8) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&y_hat) {
        return 0.0;
    }
    if y == 1 {
        -1.0 / y_hat
    } else {
        1.0 / (1.0 - y_hat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub keep_prob: f64,
    pub seed: u64,
    pub variant: Variant,
    pub fine_tune_embeddings: bool,
    pub optimizer: AdadeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            keep_prob: 0.5,
            seed: 0,
            variant: Variant::MilRep,
            fine_tune_embeddings: false,
            optimizer: AdadeltaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::arg(format!("keep_prob must be in (0, 1], got {}", self.keep_prob)));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.rho) || !(o.eps > 0.0) || !(o.lr >= 0.0) {
            return Err(Error::arg(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

/// Loss and gradient of one bag under a private dropout stream.
fn bag_gradient(params: &ModelParams, bag: &Bag, keep_prob: f64, seed: u64) -> Result<(f64, Gradients)> {
    let mode = Mode::Train { keep_prob };
    let (y, trace) = forward(params, bag, mode, &mut Rng::new(seed))?;
    let grads = backward(params, &trace, bce_grad(y, bag.label))?;
    Ok((bce_loss(y, bag.label), grads))
}

/// One pass over `bags` in a shuffled order. Each mini-batch takes one
/// optimizer step on the gradient of its mean loss. Returns the mean loss.
pub fn train_epoch(
    params: &mut ModelParams,
    state: &mut AdadeltaState,
    bags: &[Bag],
    config: &TrainConfig,
    rng: &mut Rng,
    epoch: usize,
) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    config.validate()?;
    let mut order: Vec<usize> = (0..bags.len()).collect();
    rng.shuffle(&mut order);

    let mut total = 0.0;
    for (b, batch) in order.chunks(config.batch_size).enumerate() {
        let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
        let p: &ModelParams = params;
        let results: Vec<Result<(f64, Gradients)>> = batch
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(&i, &s)| bag_gradient(p, &bags[i], config.keep_prob, s))
            .collect();

        let mut grads = Gradients::zeros_like(params);
        let mut batch_loss = 0.0;
        for r in results {
            let (l, g) = r?;
            batch_loss += l;
            grads.add_assign(&g);
        }
        grads.scale(1.0 / batch.len() as f64);
        if !batch_loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss or gradient at epoch {epoch}, batch {b}")));
        }
        adadelta_step(state, params, &grads)?;
        if !params.is_finite() {
            return Err(Error::Numeric(format!("non-finite parameters at epoch {epoch}, batch {b}")));
        }
        total += batch_loss;
    }
    Ok(total / bags.len() as f64)
}

/// Infer-mode bag probabilities, in input order.
pub fn predict(params: &ModelParams, bags: &[Bag]) -> Result<Vec<f64>> {
    bags.par_iter()
        .map(|bag| forward(params, bag, Mode::Infer, &mut Rng::new(0)).map(|(y, _)| y))
        .collect()
}

pub fn evaluate(params: &ModelParams, bags: &[Bag]) -> Result<Metrics> {
    if bags.is_empty() {
        return Err(Error::arg("cannot evaluate an empty bag list"));
    }
    let probs = predict(params, bags)?;
    if let Some(i) = probs.iter().position(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!("non-finite prediction for bag {}", bags[i].day)));
    }
    let labels: Vec<u8> = bags.iter().map(|b| b.label).collect();
    let losses: Vec<f64> = probs.iter().zip(&labels).map(|(&p, &y)| bce_loss(p, y)).collect();
    Ok(Metrics::from_predictions(&probs, &labels, &losses))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

impl FitResult {
    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.history[e - 1].val_accuracy)
    }
}

/// Trains from `initial`, keeping the parameters with the best validation
/// accuracy (earliest on ties). Shuffling and dropout use `config.seed`.
pub fn fit(initial: ModelParams, data: &Dataset<Bag>, config: &TrainConfig) -> Result<FitResult> {
    fit_with(initial, data, config, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    initial: ModelParams,
    data: &Dataset<Bag>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::arg(format!(
            "training needs nonempty train and validation splits (got {} and {})",
            data.train.len(),
            data.val.len()
        )));
    }
    config.validate()?;
    if initial.variant != config.variant {
        return Err(Error::Consistency(format!(
            "parameters are {} but the config asks for {}",
            initial.variant, config.variant
        )));
    }
    let mut params = initial;
    params.embeddings.trainable = config.fine_tune_embeddings;
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut state = AdadeltaState::new(&params, config.optimizer);
    let mut rng = Rng::new(config.seed);

    for epoch in 1..=config.max_epochs {
        let train_loss = train_epoch(&mut params, &mut state, &data.train, config, &mut rng, epoch)?;
        let val_accuracy = evaluate(&params, &data.val)?.accuracy;
        let record = EpochRecord { epoch, train_loss, val_accuracy };
        on_epoch(&record);
        history.push(record);
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = params.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    Ok(FitResult { params: best, best_epoch, history })
}

/// `epoch,train_loss,val_accuracy`.
pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_accuracy")?;
    for r in history {
        writeln!(w, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.val_accuracy)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRow {
    pub date: NaiveDate,
    /// Position of the instance within its bag.
    pub instance_index: usize,
    pub p_hat: f64,
    pub headline: String,
}

/// Every instance's `p̂`, bags in input order, instances sorted by descending
/// `p̂` within each bag (ties by index).
pub fn instance_report(params: &ModelParams, bags: &[Bag]) -> Result<Vec<InstanceRow>> {
    let per_bag: Vec<Result<Vec<InstanceRow>>> = bags
        .par_iter()
        .map(|bag| {
            let probs = instance_probs(params, bag)?;
            let mut rows: Vec<InstanceRow> = probs
                .into_iter()
                .enumerate()
                .map(|(i, p)| InstanceRow {
                    date: bag.day,
                    instance_index: i,
                    p_hat: p,
                    headline: bag.headlines.get(i).cloned().unwrap_or_default(),
                })
                .collect();
            rows.sort_by(|a, b| b.p_hat.total_cmp(&a.p_hat).then(a.instance_index.cmp(&b.instance_index)));
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_bag {
        out.extend(rows?);
    }
    Ok(out)
}

/// `date,instance_index,p_hat,headline`, with headlines quoted when needed.
pub fn write_instance_csv<W: Write>(w: W, rows: &[InstanceRow]) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["date", "instance_index", "p_hat", "headline"])?;
    for r in rows {
        csv.write_record([
            r.date.to_string(),
            r.instance_index.to_string(),
            format!("{:.6}", r.p_hat),
            r.headline.clone(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

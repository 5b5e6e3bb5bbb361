//! Finite-difference verification of every analytic gradient family.

use chrono::NaiveDate;

use super::{backward, forward, Dims, Gradients, Mode, ModelParams, Variant, Weights};
use crate::corpus::Bag;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Rng};
use crate::textprep::{EmbeddingMatrix, TitleSeq, Vocabulary, UNK_TOKEN};
use crate::train::{bce_grad, bce_loss, BCE_EPS};

/// Denominator floor in `|a − n| / max(|a|, |n|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub const EMBEDDING_FAMILY: &str = "embeddings";

const TOY_DIMS: Dims = Dims { embed: 4, hidden: 3, attn: 3, mlp: 3 };
const TOY_VOCAB: usize = 10;
const TOY_BAGS: usize = 2;
const TOY_MAX_INSTANCES: usize = 3;
const TOY_MAX_TOKENS: usize = 5;
const TOY_KEEP_PROB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seeds: Vec<u64>,
    pub variant: Variant,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Adds a constant to every analytic entry of this family; a negative control.
    pub perturb: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seeds: (0..5).collect(),
            variant: Variant::MilRep,
            step: 1e-5,
            tolerance: 1e-5,
            perturb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyError {
    pub family: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    /// One entry per family, in tensor order with embeddings last.
    pub families: Vec<FamilyError>,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&FamilyError> {
        self.families
            .iter()
            .filter(|f| !(f.max_rel_error <= self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Random toy model (trainable embeddings) and two labelled bags.
pub fn toy_problem(seed: u64, variant: Variant) -> Result<(ModelParams, Vec<Bag>)> {
    let mut rng = Rng::new(seed);
    let mut tokens = vec![UNK_TOKEN.to_string()];
    tokens.extend((1..TOY_VOCAB).map(|i| format!("t{i}")));
    let vocab = Vocabulary::from_tokens(tokens, 1)?;
    let mut emb = EmbeddingMatrix::random(&vocab, TOY_DIMS.embed, &mut rng);
    emb.vectors = emb.vectors.map(|v| v * 10.0);
    emb.trainable = true;
    let mut params = ModelParams::new(TOY_DIMS, variant, emb, &mut rng)?;
    for t in params.weights.slices_mut() {
        t.iter_mut().for_each(|v| *v += rng.uniform(-0.1, 0.1));
    }

    let day0 = NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date");
    let mut bags = Vec::with_capacity(TOY_BAGS);
    for b in 0..TOY_BAGS {
        let n = rng.range_inclusive(1, TOY_MAX_INSTANCES);
        let mut instances = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rng.range_inclusive(1, TOY_MAX_TOKENS);
            let ids = (0..len).map(|_| rng.range_inclusive(0, TOY_VOCAB - 1) as u32).collect();
            instances.push(TitleSeq::new(ids)?);
        }
        bags.push(Bag {
            day: day0 + chrono::Days::new(b as u64),
            headlines: vec![String::new(); n],
            instances,
            label: u8::from(rng.bernoulli(0.5)),
        });
    }
    Ok((params, bags))
}

fn mask_seed(seed: u64, bag: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(bag as u64)
}

fn bag_logits(params: &ModelParams, bags: &[Bag], seed: u64) -> Result<Vec<f64>> {
    let mut logits = Vec::with_capacity(bags.len());
    for (i, bag) in bags.iter().enumerate() {
        let mode = Mode::Train { keep_prob: TOY_KEEP_PROB };
        let (_, trace) = forward(params, bag, mode, &mut Rng::new(mask_seed(seed, i)))?;
        logits.push(trace.bag.logit);
    }
    Ok(logits)
}

/// `softplus(a) − softplus(b)` without cancellation.
fn softplus_diff(a: f64, b: f64) -> f64 {
    let sig_b = 1.0 / (1.0 + (-b).exp());
    (sig_b * (a - b).exp_m1()).ln_1p()
}

/// `BCE(σ(plus)) − BCE(σ(minus))` for one bag. Away from the clamp the loss
/// is `softplus(∓s)`, which is differenced directly in logit space.
fn loss_difference(plus: f64, minus: f64, label: u8) -> f64 {
    let (yp, ym) = (sigmoid(plus), sigmoid(minus));
    let inside = |y: f64| (BCE_EPS..=1.0 - BCE_EPS).contains(&y);
    if !(inside(yp) && inside(ym)) {
        return bce_loss(yp, label) - bce_loss(ym, label);
    }
    if label == 1 {
        softplus_diff(-plus, -minus)
    } else {
        softplus_diff(plus, minus)
    }
}

fn analytic(params: &ModelParams, bags: &[Bag], seed: u64) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(params);
    for (i, bag) in bags.iter().enumerate() {
        let mode = Mode::Train { keep_prob: TOY_KEEP_PROB };
        let (y, trace) = forward(params, bag, mode, &mut Rng::new(mask_seed(seed, i)))?;
        g.add_assign(&backward(params, &trace, bce_grad(y, bag.label))?);
    }
    Ok(g)
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

fn central_difference(
    params: &mut ModelParams,
    bags: &[Bag],
    seed: u64,
    step: f64,
    x: f64,
    set: impl Fn(&mut ModelParams, f64),
) -> Result<f64> {
    set(params, x + step);
    let plus = bag_logits(params, bags, seed);
    set(params, x - step);
    let minus = bag_logits(params, bags, seed);
    set(params, x);
    let (plus, minus) = (plus?, minus?);
    let delta: f64 = bags
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(bag, (&p, &m))| loss_difference(p, m, bag.label))
        .sum();
    let diff = delta / (2.0 * step);
    if !diff.is_finite() {
        return Err(Error::Numeric("finite difference produced a non-finite value".into()));
    }
    Ok(diff)
}

fn merge(into: &mut FamilyError, a: f64, n: f64) {
    into.max_rel_error = into.max_rel_error.max(rel_error(a, n));
    into.max_abs_error = into.max_abs_error.max((a - n).abs());
    into.entries += 1;
}

/// Compares analytic and central-difference gradients of the summed bag loss
/// for every family over all seeds, reporting the worst entry per family.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.seeds.is_empty() || !(opts.step > 0.0) {
        return Err(Error::arg("gradcheck needs at least one seed and a positive step"));
    }
    let mut names: Vec<String> = Weights::names().into_iter().map(String::from).collect();
    names.push(EMBEDDING_FAMILY.to_string());
    if let Some(p) = &opts.perturb {
        if !names.contains(p) {
            return Err(Error::arg(format!("unknown parameter family {p:?}")));
        }
    }
    let mut families: Vec<FamilyError> = names
        .iter()
        .map(|n| FamilyError { family: n.clone(), max_rel_error: 0.0, max_abs_error: 0.0, entries: 0 })
        .collect();
    let bias = |name: &str| if opts.perturb.as_deref() == Some(name) { 1e-3 } else { 0.0 };

    for &seed in &opts.seeds {
        let (mut params, bags) = toy_problem(seed, opts.variant)?;
        let grads = analytic(&params, &bags, seed)?;
        let tensors = grads.weights.tensors();
        for (fi, t) in tensors.iter().enumerate() {
            let offset = bias(t.name);
            for k in 0..t.data.len() {
                let x = params.weights.tensors()[fi].data[k];
                let n = central_difference(&mut params, &bags, seed, opts.step, x, |p, v| {
                    p.weights.slices_mut()[fi][k] = v;
                })?;
                merge(&mut families[fi], t.data[k] + offset, n);
            }
        }

        let offset = bias(EMBEDDING_FAMILY);
        let d = params.embeddings.dim();
        let fam = families.last_mut().expect("embedding family");
        for k in 0..params.embeddings.vectors.data().len() {
            let (row, col) = (k / d, k % d);
            let a = grads.embeddings.get(&(row as u32)).map_or(0.0, |r| r[col]) + offset;
            let x = params.embeddings.vectors.data()[k];
            let n = central_difference(&mut params, &bags, seed, opts.step, x, |p, v| {
                p.embeddings.vectors.data_mut()[k] = v;
            })?;
            merge(fam, a, n);
        }
    }
    Ok(GradcheckReport { tolerance: opts.tolerance, families })
}

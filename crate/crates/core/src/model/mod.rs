//! The multiple-instance network and its parameters.
//!
//! A headline is embedded, encoded by a bidirectional LSTM, pooled by word
//! attention into an instance vector `n`, and scored by a one-hidden-layer
//! classifier giving `p̂`. A day is represented by `z = mean(p̂ · n)` and scored
//! by a logistic layer. The `mil-s` variant replaces the encoder with the mean
//! word embedding; `s-avg` additionally drops the instance classifier and uses
//! the plain mean of instance vectors.

mod checkpoint;
mod gradcheck;
mod layers;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{run_gradcheck, toy_problem, FamilyError, GradcheckOptions, GradcheckReport, REL_ERROR_FLOOR};
pub use layers::{
    aggregate_bag, aggregate_backward, attend, attend_backward, bag_backward, bag_predict,
    bilstm_backward, bilstm_encode, embed_lookup, instance_backward, instance_prob, lstm_run,
    lstm_step, lstm_step_backward, AttnTrace, BagCache, BiLstmTrace, InstanceCache, LstmStep,
};
pub use network::{backward, forward, instance_probs, ForwardTrace, InstanceForward, Mode};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng};
use crate::textprep::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Word vector size `d`.
    pub embed: usize,
    /// LSTM hidden units per direction `u`.
    pub hidden: usize,
    /// Attention size `A`.
    pub attn: usize,
    /// Instance-classifier hidden units `H`.
    pub mlp: usize,
}

impl Dims {
    pub const STANDARD: Dims = Dims {
        embed: 100,
        hidden: 50,
        attn: 100,
        mlp: 150,
    };

    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.hidden == 0 || self.attn == 0 || self.mlp == 0 {
            return Err(Error::arg(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Bi-LSTM + attention instances, probability-weighted bag vector.
    #[default]
    MilRep,
    /// Mean-embedding instances, probability-weighted bag vector.
    MilS,
    /// Mean-embedding instances, plain mean bag vector.
    SAvg,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MilRep => "mil-rep",
            Variant::MilS => "mil-s",
            Variant::SAvg => "s-avg",
        }
    }

    /// Length of the instance vector `n` (and of `z`).
    pub fn rep_dim(self, dims: &Dims) -> usize {
        match self {
            Variant::MilRep => 2 * dims.hidden,
            Variant::MilS | Variant::SAvg => dims.embed,
        }
    }

    pub fn uses_encoder(self) -> bool {
        self == Variant::MilRep
    }

    pub fn uses_instance_classifier(self) -> bool {
        self != Variant::SAvg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mil-rep" => Ok(Variant::MilRep),
            "mil-s" => Ok(Variant::MilS),
            "s-avg" => Ok(Variant::SAvg),
            _ => Err(Error::arg(format!(
                "unknown variant {s:?} (expected mil-rep, mil-s or s-avg)"
            ))),
        }
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::uniform(rows, cols, limit, rng)
}

fn glorot_vec(len: usize, rng: &mut Rng) -> Vec<f64> {
    glorot(1, len, rng).data().to_vec()
}

/// Gate weights act on `[h_prev, e]`, shape `(u, u + d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        LstmParams {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
        }
    }

    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let cols = hidden + input;
        LstmParams {
            w_f: glorot(hidden, cols, rng),
            w_i: glorot(hidden, cols, rng),
            w_c: glorot(hidden, cols, rng),
            w_o: glorot(hidden, cols, rng),
            ..LstmParams::zeros(hidden, input)
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    /// `(A, 2u)`.
    pub w: Matrix,
    pub b: Vec<f64>,
    /// Context vector scoring `u_t` into a scalar.
    pub ctx: Vec<f64>,
}

impl AttnParams {
    pub fn zeros(attn: usize, input: usize) -> Self {
        AttnParams {
            w: Matrix::zeros(attn, input),
            b: vec![0.0; attn],
            ctx: vec![0.0; attn],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceClassifierParams {
    /// `(H, rep_dim)`.
    pub w_hid: Matrix,
    pub b_hid: Vec<f64>,
    pub w_news: Vec<f64>,
    pub b_news: f64,
}

impl InstanceClassifierParams {
    pub fn zeros(mlp: usize, input: usize) -> Self {
        InstanceClassifierParams {
            w_hid: Matrix::zeros(mlp, input),
            b_hid: vec![0.0; mlp],
            w_news: vec![0.0; mlp],
            b_news: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagClassifierParams {
    pub w_day: Vec<f64>,
    pub b_day: f64,
}

/// Every dense learned tensor; also the shape of a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub attn: AttnParams,
    pub inst: InstanceClassifierParams,
    pub bag: BagClassifierParams,
}

const FWD_NAMES: [&str; 8] = [
    "fwd.w_f", "fwd.w_i", "fwd.w_c", "fwd.w_o", "fwd.b_f", "fwd.b_i", "fwd.b_c", "fwd.b_o",
];
const BWD_NAMES: [&str; 8] = [
    "bwd.w_f", "bwd.w_i", "bwd.w_c", "bwd.w_o", "bwd.b_f", "bwd.b_i", "bwd.b_c", "bwd.b_o",
];

/// Read-only view of one named tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

fn lstm_views<'a>(p: &'a LstmParams, names: &[&'static str; 8], out: &mut Vec<TensorView<'a>>) {
    let u = p.hidden();
    for (name, w) in names.iter().zip([&p.w_f, &p.w_i, &p.w_c, &p.w_o]) {
        out.push(TensorView { name, shape: w.shape(), data: w.data() });
    }
    for (name, b) in names[4..].iter().zip([&p.b_f, &p.b_i, &p.b_c, &p.b_o]) {
        out.push(TensorView { name, shape: (u, 1), data: b });
    }
}

fn lstm_slices_mut<'a>(p: &'a mut LstmParams, out: &mut Vec<&'a mut [f64]>) {
    out.push(p.w_f.data_mut());
    out.push(p.w_i.data_mut());
    out.push(p.w_c.data_mut());
    out.push(p.w_o.data_mut());
    out.push(&mut p.b_f);
    out.push(&mut p.b_i);
    out.push(&mut p.b_c);
    out.push(&mut p.b_o);
}

impl Weights {
    pub fn zeros(dims: &Dims, variant: Variant) -> Self {
        let rep = variant.rep_dim(dims);
        Weights {
            fwd: LstmParams::zeros(dims.hidden, dims.embed),
            bwd: LstmParams::zeros(dims.hidden, dims.embed),
            attn: AttnParams::zeros(dims.attn, 2 * dims.hidden),
            inst: InstanceClassifierParams::zeros(dims.mlp, rep),
            bag: BagClassifierParams {
                w_day: vec![0.0; rep],
                b_day: 0.0,
            },
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &Dims, variant: Variant, rng: &mut Rng) -> Self {
        let rep = variant.rep_dim(dims);
        let mut w = Weights::zeros(dims, variant);
        w.fwd = LstmParams::init(dims.hidden, dims.embed, rng);
        w.bwd = LstmParams::init(dims.hidden, dims.embed, rng);
        w.attn.w = glorot(dims.attn, 2 * dims.hidden, rng);
        w.attn.ctx = glorot_vec(dims.attn, rng);
        w.inst.w_hid = glorot(dims.mlp, rep, rng);
        w.inst.w_news = glorot_vec(dims.mlp, rng);
        w.bag.w_day = glorot_vec(rep, rng);
        w
    }

    /// Named tensors in fixed order: forward LSTM, backward LSTM, attention,
    /// instance classifier, bag classifier.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::with_capacity(25);
        lstm_views(&self.fwd, &FWD_NAMES, &mut out);
        lstm_views(&self.bwd, &BWD_NAMES, &mut out);
        let a = &self.attn;
        out.push(TensorView { name: "attn.w", shape: a.w.shape(), data: a.w.data() });
        out.push(TensorView { name: "attn.b", shape: (a.b.len(), 1), data: &a.b });
        out.push(TensorView { name: "attn.ctx", shape: (a.ctx.len(), 1), data: &a.ctx });
        let i = &self.inst;
        out.push(TensorView { name: "inst.w_hid", shape: i.w_hid.shape(), data: i.w_hid.data() });
        out.push(TensorView { name: "inst.b_hid", shape: (i.b_hid.len(), 1), data: &i.b_hid });
        out.push(TensorView { name: "inst.w_news", shape: (1, i.w_news.len()), data: &i.w_news });
        out.push(TensorView { name: "inst.b_news", shape: (1, 1), data: std::slice::from_ref(&i.b_news) });
        let b = &self.bag;
        out.push(TensorView { name: "bag.w_day", shape: (1, b.w_day.len()), data: &b.w_day });
        out.push(TensorView { name: "bag.b_day", shape: (1, 1), data: std::slice::from_ref(&b.b_day) });
        out
    }

    /// Mutable slices in the same order as [`Weights::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(25);
        lstm_slices_mut(&mut self.fwd, &mut out);
        lstm_slices_mut(&mut self.bwd, &mut out);
        out.push(self.attn.w.data_mut());
        out.push(&mut self.attn.b);
        out.push(&mut self.attn.ctx);
        out.push(self.inst.w_hid.data_mut());
        out.push(&mut self.inst.b_hid);
        out.push(&mut self.inst.w_news);
        out.push(std::slice::from_mut(&mut self.inst.b_news));
        out.push(&mut self.bag.w_day);
        out.push(std::slice::from_mut(&mut self.bag.b_day));
        out
    }

    pub fn names() -> Vec<&'static str> {
        Weights::zeros(&Dims { embed: 1, hidden: 1, attn: 1, mlp: 1 }, Variant::MilRep)
            .tensors()
            .iter()
            .map(|t| t.name)
            .collect()
    }

    pub fn same_shape(&self, other: &Weights) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.shape == b.shape)
    }

    /// `self += other`, element by element.
    pub fn add_assign(&mut self, other: &Weights) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.slices_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub variant: Variant,
    pub embeddings: EmbeddingMatrix,
    pub weights: Weights,
}

impl ModelParams {
    pub fn new(dims: Dims, variant: Variant, embeddings: EmbeddingMatrix, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        if embeddings.dim() != dims.embed {
            return Err(Error::Consistency(format!(
                "embedding dimension {} does not match configured d = {}",
                embeddings.dim(),
                dims.embed
            )));
        }
        Ok(ModelParams {
            dims,
            variant,
            embeddings,
            weights: Weights::init(&dims, variant, rng),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.vocab_size()
    }

    pub fn rep_dim(&self) -> usize {
        self.variant.rep_dim(&self.dims)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.embeddings.vectors.is_finite()
    }
}

/// Gradient of a scalar loss: dense weights plus the embedding rows actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Weights,
    pub embeddings: BTreeMap<u32, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            weights: Weights::zeros(&params.dims, params.variant),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn add_embedding_row(&mut self, id: u32, grad: &[f64]) {
        let row = self
            .embeddings
            .entry(id)
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (r, g) in row.iter_mut().zip(grad) {
            *r += g;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.weights.add_assign(&other.weights);
        for (&id, row) in &other.embeddings {
            self.add_embedding_row(id, row);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.scale(factor);
        for row in self.embeddings.values_mut() {
            row.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.embeddings.values().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.weights.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0))
            && self.embeddings.values().flatten().all(|&v| v == 0.0)
    }
}

use super::layers::{
    aggregate_backward, aggregate_bag, attend, attend_backward, bag_backward, bag_predict,
    bilstm_backward, bilstm_encode, embed_lookup, instance_backward, instance_prob, AttnTrace,
    BagCache, BiLstmTrace, InstanceCache,
};
use super::{Gradients, ModelParams, Variant};
use crate::corpus::Bag;
use crate::error::{Error, Result};
use crate::tensor::{dropout_mask, DropoutMask, Rng};
use crate::textprep::TitleSeq;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Dropout masks are drawn with this keep probability.
    Train { keep_prob: f64 },
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceForward {
    pub ids: Vec<u32>,
    pub embedded: Vec<Vec<f64>>,
    /// Present for `mil-rep` only.
    pub encoder: Option<BiLstmTrace>,
    pub attention: Option<AttnTrace>,
    /// Instance vector `n`.
    pub rep: Vec<f64>,
    pub mask: Option<DropoutMask>,
    /// Absent for `s-avg`.
    pub classifier: Option<InstanceCache>,
}

impl InstanceForward {
    /// Weight of this instance in the bag vector.
    pub fn weight(&self) -> f64 {
        self.classifier.as_ref().map_or(1.0, |c| c.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub variant: Variant,
    pub rep_dim: usize,
    pub instances: Vec<InstanceForward>,
    pub z: Vec<f64>,
    pub z_mask: Option<DropoutMask>,
    pub bag: BagCache,
}

impl ForwardTrace {
    pub fn y_hat(&self) -> f64 {
        self.bag.y
    }

    pub fn is_finite(&self) -> bool {
        let fin = |v: &[f64]| v.iter().all(|x| x.is_finite());
        self.bag.y.is_finite()
            && self.bag.logit.is_finite()
            && fin(&self.z)
            && self.instances.iter().all(|i| {
                fin(&i.rep)
                    && i.classifier.as_ref().is_none_or(|c| c.p.is_finite() && fin(&c.hidden))
                    && i.attention.as_ref().is_none_or(|a| fin(&a.alpha) && fin(&a.scores))
                    && i.encoder
                        .as_ref()
                        .is_none_or(|e| e.states.iter().all(|s| fin(s)))
            })
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let scale = 1.0 / rows.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

fn draw_mask(len: usize, mode: Mode, rng: &mut Rng) -> Result<Option<DropoutMask>> {
    match mode {
        Mode::Train { keep_prob } => dropout_mask(len, keep_prob, rng).map(Some),
        Mode::Infer => Ok(None),
    }
}

fn encode_instance(params: &ModelParams, seq: &TitleSeq) -> Result<InstanceForward> {
    let embedded = embed_lookup(seq, &params.embeddings)?;
    let w = &params.weights;
    let (encoder, attention, rep) = if params.variant.uses_encoder() {
        let enc = bilstm_encode(&w.fwd, &w.bwd, &embedded)?;
        let att = attend(&w.attn, &enc.states)?;
        let rep = att.output.clone();
        (Some(enc), Some(att), rep)
    } else {
        (None, None, mean_rows(&embedded))
    };
    Ok(InstanceForward {
        ids: seq.ids().to_vec(),
        embedded,
        encoder,
        attention,
        rep,
        mask: None,
        classifier: None,
    })
}

/// Runs the whole network on one bag. In train mode one mask per instance
/// vector is drawn in instance order, then one for `z`.
pub fn forward(params: &ModelParams, bag: &Bag, mode: Mode, rng: &mut Rng) -> Result<(f64, ForwardTrace)> {
    forward_instances(params, &bag.instances, mode, rng)
}

pub fn forward_instances(
    params: &ModelParams,
    instances: &[TitleSeq],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, ForwardTrace)> {
    if instances.is_empty() {
        return Err(Error::arg("bag has no instances"));
    }
    let w = &params.weights;
    let mut traced = Vec::with_capacity(instances.len());
    for seq in instances {
        let mut inst = encode_instance(params, seq)?;
        if params.variant.uses_instance_classifier() {
            inst.mask = draw_mask(inst.rep.len(), mode, rng)?;
            inst.classifier = Some(instance_prob(&w.inst, &inst.rep, inst.mask.as_ref())?);
        }
        traced.push(inst);
    }
    let items: Vec<(f64, &[f64])> = traced.iter().map(|i| (i.weight(), i.rep.as_slice())).collect();
    let z = aggregate_bag(&items)?;
    let z_mask = draw_mask(z.len(), mode, rng)?;
    let bag = bag_predict(&w.bag, &z, z_mask.as_ref())?;
    let trace = ForwardTrace {
        variant: params.variant,
        rep_dim: params.rep_dim(),
        instances: traced,
        z,
        z_mask,
        bag,
    };
    Ok((trace.bag.y, trace))
}

/// Instance probabilities `p̂` in infer mode, in instance order.
pub fn instance_probs(params: &ModelParams, bag: &Bag) -> Result<Vec<f64>> {
    bag.instances
        .iter()
        .map(|seq| {
            let inst = encode_instance(params, seq)?;
            Ok(instance_prob(&params.weights.inst, &inst.rep, None)?.p)
        })
        .collect()
}

/// Exact gradients of a loss with `dL/dŷ = dy` through the cached forward pass.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, dy: f64) -> Result<Gradients> {
    if trace.variant != params.variant || trace.rep_dim != params.rep_dim() {
        return Err(Error::Consistency(format!(
            "trace from {} (rep {}) does not match params {} (rep {})",
            trace.variant,
            trace.rep_dim,
            params.variant,
            params.rep_dim()
        )));
    }
    let vocab = params.vocab_size();
    if let Some(&id) = trace
        .instances
        .iter()
        .flat_map(|i| &i.ids)
        .find(|&&id| id as usize >= vocab)
    {
        return Err(Error::Consistency(format!(
            "trace uses token id {id} beyond vocabulary size {vocab}"
        )));
    }

    let w = &params.weights;
    let mut g = Gradients::zeros_like(params);
    let dz = bag_backward(&w.bag, &trace.bag, trace.z_mask.as_ref(), dy, &mut g.weights.bag);

    let items: Vec<(f64, &[f64])> = trace
        .instances
        .iter()
        .map(|i| (i.weight(), i.rep.as_slice()))
        .collect();
    let (d_weights, d_reps) = aggregate_backward(&items, &dz);

    for ((inst, dp), mut d_rep) in trace.instances.iter().zip(d_weights).zip(d_reps) {
        if let Some(cache) = &inst.classifier {
            let dn = instance_backward(&w.inst, cache, inst.mask.as_ref(), dp, &mut g.weights.inst);
            for (a, b) in d_rep.iter_mut().zip(dn) {
                *a += b;
            }
        }
        let d_embedded: Vec<Vec<f64>> = match (&inst.encoder, &inst.attention) {
            (Some(enc), Some(att)) => {
                let d_states = attend_backward(&w.attn, &enc.states, att, &d_rep, &mut g.weights.attn);
                let gw = &mut g.weights;
                bilstm_backward(&w.fwd, &w.bwd, enc, &d_states, &mut gw.fwd, &mut gw.bwd)
            }
            _ => {
                let scale = 1.0 / inst.ids.len() as f64;
                let row: Vec<f64> = d_rep.iter().map(|d| d * scale).collect();
                vec![row; inst.ids.len()]
            }
        };
        for (&id, de) in inst.ids.iter().zip(&d_embedded) {
            g.add_embedding_row(id, de);
        }
    }
    Ok(g)
}

//! Per-stage forward computations with the caches their backward rules need.
//!
//! Each `*_backward` takes the upstream gradient, accumulates parameter
//! gradients into a zero-initialized parameter struct, and returns the
//! gradient with respect to the stage input.

use super::{AttnParams, BagClassifierParams, InstanceClassifierParams, LstmParams};
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, softmax, DropoutMask};
use crate::textprep::{EmbeddingMatrix, TitleSeq};

pub fn embed_lookup(seq: &TitleSeq, emb: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    seq.ids()
        .iter()
        .map(|&id| {
            let id = id as usize;
            if id >= emb.vocab_size() {
                return Err(Error::Index {
                    index: id,
                    len: emb.vocab_size(),
                });
            }
            Ok(emb.vectors.row(id).to_vec())
        })
        .collect()
}

/// Activations of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    /// `[h_prev, e]`.
    pub input: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_step(p: &LstmParams, h_prev: &[f64], c_prev: &[f64], e: &[f64]) -> Result<LstmStep> {
    let u = p.hidden();
    if h_prev.len() != u || c_prev.len() != u || e.len() != p.input() {
        return Err(Error::Dimension {
            op: "lstm_step",
            left: (u, p.input()),
            right: (h_prev.len().max(c_prev.len()), e.len()),
        });
    }
    let mut input = Vec::with_capacity(u + e.len());
    input.extend_from_slice(h_prev);
    input.extend_from_slice(e);

    let gate = |w: &crate::tensor::Matrix, b: &[f64]| -> Vec<f64> {
        w.affine(&input, b).into_iter().map(sigmoid).collect()
    };
    let f = gate(&p.w_f, &p.b_f);
    let i = gate(&p.w_i, &p.b_i);
    let o = gate(&p.w_o, &p.b_o);
    let c_tilde: Vec<f64> = p.w_c.affine(&input, &p.b_c).into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..u).map(|k| f[k] * c_prev[k] + i[k] * c_tilde[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..u).map(|k| o[k] * tanh_c[k]).collect();
    Ok(LstmStep {
        input,
        c_prev: c_prev.to_vec(),
        f,
        i,
        c_tilde,
        o,
        c,
        tanh_c,
        h,
    })
}

/// Returns `(dh_prev, dc_prev, de)`.
pub fn lstm_step_backward(
    p: &LstmParams,
    s: &LstmStep,
    dh: &[f64],
    dc: &[f64],
    g: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let u = p.hidden();
    let mut da_f = vec![0.0; u];
    let mut da_i = vec![0.0; u];
    let mut da_c = vec![0.0; u];
    let mut da_o = vec![0.0; u];
    let mut dc_prev = vec![0.0; u];
    for k in 0..u {
        let (f, i, o, ct, tc) = (s.f[k], s.i[k], s.o[k], s.c_tilde[k], s.tanh_c[k]);
        da_o[k] = dh[k] * tc * o * (1.0 - o);
        let dc_total = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_f[k] = dc_total * s.c_prev[k] * f * (1.0 - f);
        da_i[k] = dc_total * ct * i * (1.0 - i);
        da_c[k] = dc_total * i * (1.0 - ct * ct);
        dc_prev[k] = dc_total * f;
    }

    let mut dx = vec![0.0; s.input.len()];
    for (w, gw, gb, da) in [
        (&p.w_f, &mut g.w_f, &mut g.b_f, &da_f),
        (&p.w_i, &mut g.w_i, &mut g.b_i, &da_i),
        (&p.w_c, &mut g.w_c, &mut g.b_c, &da_c),
        (&p.w_o, &mut g.w_o, &mut g.b_o, &da_o),
    ] {
        gw.add_outer(da, &s.input);
        for (b, d) in gb.iter_mut().zip(da) {
            *b += d;
        }
        w.matvec_t_acc(da, &mut dx);
    }
    let de = dx.split_off(u);
    (dx, dc_prev, de)
}

/// Runs an LSTM from the zero state over `inputs` in the given order.
pub fn lstm_run(p: &LstmParams, inputs: &[Vec<f64>]) -> Result<Vec<LstmStep>> {
    let u = p.hidden();
    let mut steps: Vec<LstmStep> = Vec::with_capacity(inputs.len());
    let zero = vec![0.0; u];
    for e in inputs {
        let step = match steps.last() {
            Some(prev) => lstm_step(p, &prev.h, &prev.c, e)?,
            None => lstm_step(p, &zero, &zero, e)?,
        };
        steps.push(step);
    }
    Ok(steps)
}

/// Backpropagates through a whole run; `dh_seq[t]` is the external gradient on `h_t`.
/// Returns the input gradients in run order.
fn lstm_run_backward(
    p: &LstmParams,
    steps: &[LstmStep],
    dh_seq: &[Vec<f64>],
    g: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let u = p.hidden();
    let mut dh_next = vec![0.0; u];
    let mut dc_next = vec![0.0; u];
    let mut de = vec![Vec::new(); steps.len()];
    for t in (0..steps.len()).rev() {
        let dh: Vec<f64> = dh_seq[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (dh_prev, dc_prev, de_t) = lstm_step_backward(p, &steps[t], &dh, &dc_next, g);
        dh_next = dh_prev;
        dc_next = dc_prev;
        de[t] = de_t;
    }
    de
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmTrace {
    /// Forward direction, positions `0..T`.
    pub fwd: Vec<LstmStep>,
    /// Backward direction in processing order: entry `j` read position `T-1-j`.
    pub bwd: Vec<LstmStep>,
    /// `[→h_t, ←h_t]` per position.
    pub states: Vec<Vec<f64>>,
}

pub fn bilstm_encode(fwd: &LstmParams, bwd: &LstmParams, e_seq: &[Vec<f64>]) -> Result<BiLstmTrace> {
    if e_seq.is_empty() {
        return Err(Error::arg("cannot encode an empty sequence"));
    }
    let t_len = e_seq.len();
    let f_steps = lstm_run(fwd, e_seq)?;
    let reversed: Vec<Vec<f64>> = e_seq.iter().rev().cloned().collect();
    let b_steps = lstm_run(bwd, &reversed)?;
    let states = (0..t_len)
        .map(|t| {
            let mut s = f_steps[t].h.clone();
            s.extend_from_slice(&b_steps[t_len - 1 - t].h);
            s
        })
        .collect();
    Ok(BiLstmTrace {
        fwd: f_steps,
        bwd: b_steps,
        states,
    })
}

/// Returns the gradient for each input position.
pub fn bilstm_backward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    trace: &BiLstmTrace,
    d_states: &[Vec<f64>],
    g_fwd: &mut LstmParams,
    g_bwd: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let u = fwd.hidden();
    let t_len = d_states.len();
    let dh_f: Vec<Vec<f64>> = d_states.iter().map(|d| d[..u].to_vec()).collect();
    let dh_b: Vec<Vec<f64>> = (0..t_len).map(|j| d_states[t_len - 1 - j][u..].to_vec()).collect();
    let de_f = lstm_run_backward(fwd, &trace.fwd, &dh_f, g_fwd);
    let de_b = lstm_run_backward(bwd, &trace.bwd, &dh_b, g_bwd);
    (0..t_len)
        .map(|t| {
            de_f[t]
                .iter()
                .zip(&de_b[t_len - 1 - t])
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnTrace {
    /// `u_t = tanh(W h_t + b)`.
    pub u: Vec<Vec<f64>>,
    /// `s_t = ctx · u_t`.
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `n = Σ α_t h_t`.
    pub output: Vec<f64>,
}

pub fn attend(p: &AttnParams, h_seq: &[Vec<f64>]) -> Result<AttnTrace> {
    if h_seq.is_empty() {
        return Err(Error::arg("cannot attend over an empty sequence"));
    }
    if let Some(h) = h_seq.iter().find(|h| h.len() != p.w.cols()) {
        return Err(Error::Dimension {
            op: "attend",
            left: p.w.shape(),
            right: (h.len(), 1),
        });
    }
    let u: Vec<Vec<f64>> = h_seq
        .iter()
        .map(|h| p.w.affine(h, &p.b).into_iter().map(f64::tanh).collect())
        .collect();
    let scores: Vec<f64> = u.iter().map(|ut| dot(&p.ctx, ut)).collect();
    let alpha = softmax(&scores)?;
    let mut output = vec![0.0; p.w.cols()];
    for (a, h) in alpha.iter().zip(h_seq) {
        for (o, v) in output.iter_mut().zip(h) {
            *o += a * v;
        }
    }
    Ok(AttnTrace {
        u,
        scores,
        alpha,
        output,
    })
}

/// Returns the gradient for each encoder state.
pub fn attend_backward(
    p: &AttnParams,
    h_seq: &[Vec<f64>],
    tr: &AttnTrace,
    d_out: &[f64],
    g: &mut AttnParams,
) -> Vec<Vec<f64>> {
    let d_alpha: Vec<f64> = h_seq.iter().map(|h| dot(d_out, h)).collect();
    let mean: f64 = tr.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    h_seq
        .iter()
        .enumerate()
        .map(|(t, h)| {
            let mut dh: Vec<f64> = d_out.iter().map(|d| tr.alpha[t] * d).collect();
            let ds = tr.alpha[t] * (d_alpha[t] - mean);
            let du: Vec<f64> = tr.u[t]
                .iter()
                .zip(&p.ctx)
                .map(|(ut, c)| ds * c * (1.0 - ut * ut))
                .collect();
            for (gc, ut) in g.ctx.iter_mut().zip(&tr.u[t]) {
                *gc += ds * ut;
            }
            g.w.add_outer(&du, h);
            for (gb, d) in g.b.iter_mut().zip(&du) {
                *gb += d;
            }
            p.w.matvec_t_acc(&du, &mut dh);
            dh
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCache {
    /// Classifier input after dropout.
    pub input: Vec<f64>,
    /// `tanh(W_hid · input + b_hid)`.
    pub hidden: Vec<f64>,
    pub p: f64,
}

pub fn instance_prob(
    p: &InstanceClassifierParams,
    n: &[f64],
    mask: Option<&DropoutMask>,
) -> Result<InstanceCache> {
    if n.len() != p.w_hid.cols() || mask.is_some_and(|m| m.len() != n.len()) {
        return Err(Error::Dimension {
            op: "instance_prob",
            left: p.w_hid.shape(),
            right: (n.len(), 1),
        });
    }
    let input = match mask {
        Some(m) => m.apply(n),
        None => n.to_vec(),
    };
    let hidden: Vec<f64> = p.w_hid.affine(&input, &p.b_hid).into_iter().map(f64::tanh).collect();
    let prob = sigmoid(dot(&p.w_news, &hidden) + p.b_news);
    Ok(InstanceCache { input, hidden, p: prob })
}

/// Returns the gradient on the unmasked instance vector.
pub fn instance_backward(
    p: &InstanceClassifierParams,
    cache: &InstanceCache,
    mask: Option<&DropoutMask>,
    dp: f64,
    g: &mut InstanceClassifierParams,
) -> Vec<f64> {
    let dlogit = dp * cache.p * (1.0 - cache.p);
    g.b_news += dlogit;
    let dpre: Vec<f64> = cache
        .hidden
        .iter()
        .zip(&p.w_news)
        .zip(g.w_news.iter_mut())
        .map(|((h, w), gw)| {
            *gw += dlogit * h;
            dlogit * w * (1.0 - h * h)
        })
        .collect();
    g.w_hid.add_outer(&dpre, &cache.input);
    for (gb, d) in g.b_hid.iter_mut().zip(&dpre) {
        *gb += d;
    }
    let mut dn = vec![0.0; cache.input.len()];
    p.w_hid.matvec_t_acc(&dpre, &mut dn);
    if let Some(m) = mask {
        for (d, k) in dn.iter_mut().zip(m.values()) {
            *d *= k;
        }
    }
    dn
}

/// `z = (1/n) Σ p̂ᵢ nᵢ`.
pub fn aggregate_bag(items: &[(f64, &[f64])]) -> Result<Vec<f64>> {
    let first = items.first().ok_or_else(|| Error::arg("cannot aggregate an empty bag"))?;
    let dim = first.1.len();
    let scale = 1.0 / items.len() as f64;
    let mut z = vec![0.0; dim];
    for (p, n) in items {
        if n.len() != dim {
            return Err(Error::Dimension {
                op: "aggregate_bag",
                left: (dim, 1),
                right: (n.len(), 1),
            });
        }
        for (zk, v) in z.iter_mut().zip(n.iter()) {
            *zk += p * v;
        }
    }
    z.iter_mut().for_each(|v| *v *= scale);
    Ok(z)
}

/// Returns `(dL/dp̂ᵢ, dL/dnᵢ)`.
pub fn aggregate_backward(items: &[(f64, &[f64])], dz: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let scale = 1.0 / items.len() as f64;
    items
        .iter()
        .map(|(p, n)| {
            let dp = scale * dot(dz, n);
            let dn = dz.iter().map(|d| scale * p * d).collect();
            (dp, dn)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagCache {
    /// `z` after dropout.
    pub input: Vec<f64>,
    pub logit: f64,
    pub y: f64,
}

pub fn bag_predict(p: &BagClassifierParams, z: &[f64], mask: Option<&DropoutMask>) -> Result<BagCache> {
    if z.len() != p.w_day.len() || mask.is_some_and(|m| m.len() != z.len()) {
        return Err(Error::Dimension {
            op: "bag_predict",
            left: (1, p.w_day.len()),
            right: (z.len(), 1),
        });
    }
    let input = match mask {
        Some(m) => m.apply(z),
        None => z.to_vec(),
    };
    let logit = dot(&p.w_day, &input) + p.b_day;
    Ok(BagCache {
        input,
        logit,
        y: sigmoid(logit),
    })
}

/// Returns the gradient on the unmasked `z`.
pub fn bag_backward(
    p: &BagClassifierParams,
    cache: &BagCache,
    mask: Option<&DropoutMask>,
    dy: f64,
    g: &mut BagClassifierParams,
) -> Vec<f64> {
    let dlogit = dy * cache.y * (1.0 - cache.y);
    g.b_day += dlogit;
    for (gw, x) in g.w_day.iter_mut().zip(&cache.input) {
        *gw += dlogit * x;
    }
    let mut dz: Vec<f64> = p.w_day.iter().map(|w| dlogit * w).collect();
    if let Some(m) = mask {
        for (d, k) in dz.iter_mut().zip(m.values()) {
            *d *= k;
        }
    }
    dz
}

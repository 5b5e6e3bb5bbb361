//! Adadelta with a global learning-rate multiplier on the computed update.
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1 − ρ) g²
//! Δ      ← −sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
//! E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δ²
//! x      ← x + lr · Δ
//! ```

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            eps: 1e-6,
            lr: 0.1,
        }
    }
}

/// Running averages for one scalar parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub sq_grad: f64,
    pub sq_update: f64,
}

impl Accumulator {
    /// Applies one update to `x` and returns the unscaled step Δ.
    #[inline]
    pub fn step(&mut self, x: &mut f64, g: f64, cfg: &AdadeltaConfig) -> f64 {
        self.sq_grad = cfg.rho * self.sq_grad + (1.0 - cfg.rho) * g * g;
        let delta = -((self.sq_update + cfg.eps).sqrt() / (self.sq_grad + cfg.eps).sqrt()) * g;
        self.sq_update = cfg.rho * self.sq_update + (1.0 - cfg.rho) * delta * delta;
        *x += cfg.lr * delta;
        delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    /// One accumulator vector per dense weight tensor, in `Weights::tensors` order.
    dense: Vec<Vec<Accumulator>>,
    /// Row-major `|V| × d`, allocated on the first embedding update.
    embeddings: Vec<Accumulator>,
}

impl AdadeltaState {
    pub fn new(params: &ModelParams, config: AdadeltaConfig) -> Self {
        AdadeltaState {
            config,
            dense: params
                .weights
                .tensors()
                .iter()
                .map(|t| vec![Accumulator::default(); t.data.len()])
                .collect(),
            embeddings: Vec::new(),
        }
    }

    pub fn dense(&self) -> &[Vec<Accumulator>] {
        &self.dense
    }

    pub fn embeddings(&self) -> &[Accumulator] {
        &self.embeddings
    }
}

/// Updates every dense tensor, and the embedding table when it is trainable.
pub fn adadelta_step(state: &mut AdadeltaState, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
    if !params.weights.same_shape(&grads.weights)
        || state.dense.len() != grads.weights.tensors().len()
        || state
            .dense
            .iter()
            .zip(params.weights.tensors())
            .any(|(acc, t)| acc.len() != t.data.len())
    {
        return Err(Error::Consistency(
            "optimizer state, parameters and gradients differ in shape".into(),
        ));
    }
    let d = params.embeddings.dim();
    let v = params.embeddings.vocab_size();
    if let Some((&id, row)) = grads
        .embeddings
        .iter()
        .find(|(&id, row)| id as usize >= v || row.len() != d)
    {
        return Err(Error::Consistency(format!(
            "embedding gradient row {id} has length {} (table {v} x {d})",
            row.len()
        )));
    }

    let cfg = state.config;
    for ((acc, x), g) in state
        .dense
        .iter_mut()
        .zip(params.weights.slices_mut())
        .zip(grads.weights.tensors())
    {
        for ((a, xi), &gi) in acc.iter_mut().zip(x.iter_mut()).zip(g.data) {
            a.step(xi, gi, &cfg);
        }
    }

    if params.embeddings.trainable {
        if state.embeddings.len() != v * d {
            state.embeddings = vec![Accumulator::default(); v * d];
        }
        let table = params.embeddings.vectors.data_mut();
        for row in 0..v {
            let g = grads.embeddings.get(&(row as u32));
            for k in 0..d {
                let idx = row * d + k;
                let gi = g.map_or(0.0, |r| r[k]);
                state.embeddings[idx].step(&mut table[idx], gi, &cfg);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar recurrence, written independently of `Accumulator`.
    fn scalar_reference(grads: &[f64], x0: f64, rho: f64, eps: f64, lr: f64) -> Vec<(f64, f64)> {
        let (mut eg, mut edx, mut x) = (0.0f64, 0.0f64, x0);
        let mut out = Vec::new();
        for &g in grads {
            eg = rho * eg + (1.0 - rho) * g * g;
            let rms_dx = (edx + eps).sqrt();
            let rms_g = (eg + eps).sqrt();
            let delta = -(rms_dx / rms_g) * g;
            edx = rho * edx + (1.0 - rho) * delta * delta;
            x += lr * delta;
            out.push((x, delta));
        }
        out
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdadeltaConfig::default();
        for g in [0.3, -2.0, 1e-4] {
            let mut acc = Accumulator::default();
            let mut x = 1.0;
            let delta = acc.step(&mut x, g, &cfg);
            let expect = -(1e-6f64).sqrt() * g / (0.05 * g * g + 1e-6).sqrt();
            assert!((delta - expect).abs() <= 1e-15 * expect.abs().max(1.0));
            assert!((x - (1.0 + 0.1 * expect)).abs() <= 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let cfg = AdadeltaConfig::default();
        let mut acc = Accumulator::default();
        let mut x = 0.123;
        acc.step(&mut x, 0.0, &cfg);
        assert_eq!(x, 0.123);
        assert_eq!(acc, Accumulator::default());
    }

    #[test]
    fn constant_gradient_matches_reference() {
        let cfg = AdadeltaConfig::default();
        let grads = vec![0.7; 100];
        let reference = scalar_reference(&grads, 2.0, cfg.rho, cfg.eps, cfg.lr);
        let mut acc = Accumulator::default();
        let mut x = 2.0;
        for (g, (rx, rd)) in grads.iter().zip(&reference) {
            let d = acc.step(&mut x, *g, &cfg);
            assert!((x - rx).abs() <= 1e-12);
            assert!((d - rd).abs() <= 1e-12);
        }
        // steps keep growing in magnitude under a constant gradient
        assert!(reference[99].1.abs() > reference[0].1.abs());
    }
}

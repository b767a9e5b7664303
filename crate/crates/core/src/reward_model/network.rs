//! Siamese scorer: hash embeddings, mean pooling, a two-layer tanh head.
//!
//! Dropout sits after pooling, after the hidden activation, and on the input
//! of the final linear layer. Gradients are computed by hand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenize::TokenizedDesign;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_VOCAB_SIZE: u32 = 4096;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const EMBED_INIT_STD: f64 = 0.1;

/// Row-major weights. `w1` is `embed_dim x hidden_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelParams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub embedding: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl RewardModelParams {
    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden_dim: usize, dropout_rate: f64) -> Self {
        RewardModelParams {
            vocab_size,
            embed_dim,
            hidden_dim,
            dropout_rate,
            embedding: vec![0.0; vocab_size * embed_dim],
            w1: vec![0.0; embed_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        }
    }

    /// Gaussian embeddings with unit variance, Glorot-uniform head weights, zero biases.
    pub fn init(vocab_size: usize, embed_dim: usize, hidden_dim: usize, dropout_rate: f64, seed: u64) -> Self {
        let mut p = Self::zeros(vocab_size, embed_dim, hidden_dim, dropout_rate);
        let mut rng = rng_from(seed);
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("finite std");
        for w in &mut p.embedding {
            *w = normal.sample(&mut rng);
        }
        let a1 = (6.0 / (embed_dim + hidden_dim) as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden_dim + 1) as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.random_range(-a2..a2);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout_rate", format!("{} not in [0, 1)", self.dropout_rate)));
        }
        let shapes = [
            ("embedding", self.embedding.len(), self.vocab_size * self.embed_dim),
            ("w1", self.w1.len(), self.embed_dim * self.hidden_dim),
            ("b1", self.b1.len(), self.hidden_dim),
            ("w2", self.w2.len(), self.hidden_dim),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::validation(name, format!("has {got} weights, expected {want}")));
            }
        }
        if !self.flat().all(f64::is_finite) {
            return Err(Error::validation("weights", "non-finite value"));
        }
        Ok(())
    }

    fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.embedding
            .iter()
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .chain(std::iter::once(self.b2))
    }

    pub fn num_weights(&self) -> usize {
        self.embedding.len() + self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Content hash of every weight, for cheap "did the model change" checks.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.num_weights() * 8);
        for w in self.flat() {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        crate::rng::stable_hash(&bytes)
    }

    fn embedding_row(&self, id: u32) -> &[f64] {
        let id = id as usize % self.vocab_size;
        &self.embedding[id * self.embed_dim..(id + 1) * self.embed_dim]
    }
}

/// Per-element multipliers for the three dropout sites (0 or `1/(1-rate)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output_in: Vec<f64>,
}

impl DropoutMask {
    pub fn sample(params: &RewardModelParams, seed: u64) -> Self {
        let rate = params.dropout_rate;
        let mut rng = rng_from(seed);
        let keep = 1.0 / (1.0 - rate);
        let mut site = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let pooled = site(params.embed_dim);
        let hidden = site(params.hidden_dim);
        let output_in = site(params.hidden_dim);
        DropoutMask { pooled, hidden, output_in }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pooled: Vec<f64>,
    pooled_masked: Vec<f64>,
    hidden: Vec<f64>,
    head_in: Vec<f64>,
    pub(crate) score: f64,
}

pub(crate) fn forward(params: &RewardModelParams, design: &TokenizedDesign, mask: Option<&DropoutMask>) -> Forward {
    let (d, h) = (params.embed_dim, params.hidden_dim);
    let mut pooled = vec![0.0; d];
    if design.is_empty() {
        return Forward {
            pooled: pooled.clone(),
            pooled_masked: pooled,
            hidden: vec![0.0; h],
            head_in: vec![0.0; h],
            score: params.b2,
        };
    }
    for &id in &design.token_ids {
        for (acc, w) in pooled.iter_mut().zip(params.embedding_row(id)) {
            *acc += w;
        }
    }
    let n = design.len() as f64;
    pooled.iter_mut().for_each(|x| *x /= n);
    let pooled_masked: Vec<f64> = match mask {
        Some(m) => pooled.iter().zip(&m.pooled).map(|(x, k)| x * k).collect(),
        None => pooled.clone(),
    };
    let mut hidden = params.b1.clone();
    for (i, x) in pooled_masked.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (acc, w) in hidden.iter_mut().zip(&params.w1[i * h..(i + 1) * h]) {
            *acc += x * w;
        }
    }
    hidden.iter_mut().for_each(|a| *a = a.tanh());
    let head_in: Vec<f64> = match mask {
        Some(m) => hidden.iter().zip(&m.hidden).zip(&m.output_in).map(|((x, k2), k3)| x * k2 * k3).collect(),
        None => hidden.clone(),
    };
    let score = params.b2 + head_in.iter().zip(&params.w2).map(|(x, w)| x * w).sum::<f64>();
    Forward { pooled, pooled_masked, hidden, head_in, score }
}

/// Gradient buffers with the same layout as [`RewardModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    pub fn zeros_like(p: &RewardModelParams) -> Self {
        Gradients {
            embedding: vec![0.0; p.embedding.len()],
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: 0.0,
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.embedding.iter_mut().chain(&mut self.w1).chain(&mut self.b1).chain(&mut self.w2) {
            *g *= k;
        }
        self.b2 *= k;
    }
}

/// Accumulate `d_score * d(score)/d(params)` into `grads`.
#[allow(clippy::needless_range_loop)] // parallel arrays share one index
pub(crate) fn backward(
    params: &RewardModelParams,
    design: &TokenizedDesign,
    mask: Option<&DropoutMask>,
    fwd: &Forward,
    d_score: f64,
    grads: &mut Gradients,
) {
    let (d, h) = (params.embed_dim, params.hidden_dim);
    grads.b2 += d_score;
    if design.is_empty() || d_score == 0.0 {
        return;
    }
    let mut d_pre = vec![0.0; h];
    for j in 0..h {
        grads.w2[j] += d_score * fwd.head_in[j];
        let mut g = d_score * params.w2[j];
        if let Some(m) = mask {
            g *= m.hidden[j] * m.output_in[j];
        }
        d_pre[j] = g * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
        grads.b1[j] += d_pre[j];
    }
    let mut d_pooled = vec![0.0; d];
    for i in 0..d {
        let x = fwd.pooled_masked[i];
        let row = &params.w1[i * h..(i + 1) * h];
        let g_row = &mut grads.w1[i * h..(i + 1) * h];
        let mut acc = 0.0;
        for j in 0..h {
            g_row[j] += x * d_pre[j];
            acc += row[j] * d_pre[j];
        }
        d_pooled[i] = match mask {
            Some(m) => acc * m.pooled[i],
            None => acc,
        };
    }
    let inv_n = 1.0 / design.len() as f64;
    debug_assert_eq!(fwd.pooled.len(), d);
    for &id in &design.token_ids {
        let id = id as usize % params.vocab_size;
        for (g, dp) in grads.embedding[id * d..(id + 1) * d].iter_mut().zip(&d_pooled) {
            *g += dp * inv_n;
        }
    }
}

/// Scalar score; `None` disables dropout.
pub fn score(params: &RewardModelParams, design: &TokenizedDesign, mask: Option<&DropoutMask>) -> f64 {
    forward(params, design, mask).score
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bradley-Terry preference that `a` beats `b`, dropout disabled.
pub fn preference(params: &RewardModelParams, a: &TokenizedDesign, b: &TokenizedDesign) -> f64 {
    sigmoid(score(params, a, None) - score(params, b, None))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Population variance over the passes.
    pub variance: f64,
    pub samples: Vec<f64>,
}

pub fn mc_pass_seed(seed: u64, pass: usize) -> u64 {
    derive_seed(seed, &[pass as u64])
}

/// `passes` dropout-enabled forward passes; pass `m` uses the mask seeded by `(seed, m)`.
pub fn mc_uncertainty(params: &RewardModelParams, design: &TokenizedDesign, passes: usize, seed: u64) -> Result<McEstimate> {
    if passes < 2 {
        return Err(Error::TooFew { what: "dropout passes", needed: 2, got: passes });
    }
    let samples: Vec<f64> = (0..passes)
        .map(|m| {
            let mask = DropoutMask::sample(params, mc_pass_seed(seed, m));
            score(params, design, Some(&mask))
        })
        .collect();
    let (mean, variance) = mean_and_variance(&samples);
    Ok(McEstimate { mean, variance, samples })
}

/// Shifted two-pass statistics, so identical samples give exactly zero variance.
pub(crate) fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let x0 = xs[0];
    let mean_d = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - x0 - mean_d).powi(2)).sum::<f64>() / n;
    (x0 + mean_d, var)
}

//! Two-tier pair labels and pair construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tokenize::{TokenizedDesign, Tokenizer};
use crate::dse::DseCorpus;
use crate::error::{Error, Result};
use crate::oracle::QorVector;
use crate::pareto::dominates;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_pair: f64,
    pub lambda_cons: f64,
    pub delta_gap: f64,
    /// Keep tie-tier pairs with label 0.0 instead of dropping them.
    pub keep_ties: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_pair: 1.0, lambda_cons: 0.5, delta_gap: 0.10, keep_ties: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_pair", self.lambda_pair), ("lambda_cons", self.lambda_cons), ("delta_gap", self.delta_gap)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, format!("{v} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Dominance,
    Latency,
    Tie,
}

impl Tier {
    pub fn label(self) -> f64 {
        match self {
            Tier::Dominance => 1.0,
            Tier::Latency => 0.5,
            Tier::Tie => 0.0,
        }
    }
}

/// Tier of the ordered pair `(i, j)`.
pub fn two_tier(qi: &QorVector, qj: &QorVector) -> Tier {
    if dominates(qi, qj) {
        Tier::Dominance
    } else if qi.latency_cycles < qj.latency_cycles {
        Tier::Latency
    } else {
        Tier::Tie
    }
}

/// Largest per-metric relative difference, each normalized by `max(m_i, m_j, 1)`.
pub fn relative_gap(qi: &QorVector, qj: &QorVector) -> f64 {
    qi.to_array()
        .iter()
        .zip(qj.to_array())
        .map(|(a, b)| (a - b).abs() / a.max(b).max(1.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub kernel: String,
    pub design_i: Arc<TokenizedDesign>,
    pub design_j: Arc<TokenizedDesign>,
    pub label: f64,
    pub tier: Tier,
}

/// Ordered index pairs `(i, j, tier)` over `qors` that pass the gap and tie filters.
pub fn pair_indices(qors: &[QorVector], cfg: &LossConfig) -> Vec<(usize, usize, Tier)> {
    let mut out = Vec::new();
    for (i, qi) in qors.iter().enumerate() {
        for (j, qj) in qors.iter().enumerate() {
            if i == j || relative_gap(qi, qj) < cfg.delta_gap {
                continue;
            }
            let tier = two_tier(qi, qj);
            if tier == Tier::Tie && !cfg.keep_ties {
                continue;
            }
            out.push((i, j, tier));
        }
    }
    out
}

/// Ordered pairs over `items` (all from one kernel) that pass the gap filter.
pub fn pairs_from_labeled(kernel: &str, items: &[(Arc<TokenizedDesign>, QorVector)], cfg: &LossConfig) -> Vec<PairExample> {
    let qors: Vec<QorVector> = items.iter().map(|(_, q)| *q).collect();
    pair_indices(&qors, cfg)
        .into_iter()
        .map(|(i, j, tier)| PairExample {
            kernel: kernel.to_string(),
            design_i: Arc::clone(&items[i].0),
            design_j: Arc::clone(&items[j].0),
            label: tier.label(),
            tier,
        })
        .collect()
}

/// Pairs over the functional designs of one corpus.
pub fn build_pairs(corpus: &DseCorpus, tokenizer: &Tokenizer, cfg: &LossConfig) -> Vec<PairExample> {
    let items: Vec<(Arc<TokenizedDesign>, QorVector)> = corpus
        .entries
        .iter()
        .filter(|e| e.functional)
        .map(|e| (tokenizer.tokenize_shared(&e.design.rendered_code), e.qor))
        .collect();
    pairs_from_labeled(&corpus.kernel.name, &items, cfg)
}

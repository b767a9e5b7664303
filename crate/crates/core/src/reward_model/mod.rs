//! Comparative reward model.
//!
//! A Siamese Bradley-Terry scorer over pragma-aware token sequences, trained on
//! two-tier QoR pairs with a dropout-consistency regularizer. Monte-Carlo
//! dropout over the same network supplies the uncertainty used for routing.

mod network;
mod pairs;
mod tokenize;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use network::{
    mc_pass_seed, mc_uncertainty, preference, score, sigmoid, DropoutMask, Gradients, McEstimate, RewardModelParams,
    DEFAULT_DROPOUT, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM, DEFAULT_VOCAB_SIZE,
};
pub use pairs::{build_pairs, pair_indices, pairs_from_labeled, relative_gap, two_tier, LossConfig, PairExample, Tier};
pub use tokenize::{split_tokens, TokenizedDesign, Tokenizer, DEFAULT_MAX_LEN, DEFAULT_VOCAB_SALT, PAD_ID, PRAGMA_ID};
pub use train::{
    accuracy_csv, bce_with_logit, fine_tune, loss_and_grads, split_kernels, tier_accuracy, train, Adam, EpochLog,
    LossBreakdown, OptimizerConfig, TierAccuracy, TrainOutcome, ACCURACY_CSV_HEADER,
};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: u32,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            dropout_rate: DEFAULT_DROPOUT,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Tokenizer plus weights: everything needed to score rendered code.
impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= 2 {
            return Err(Error::validation("vocab_size", "must exceed the two reserved ids"));
        }
        if self.embed_dim == 0 {
            return Err(Error::validation("embed_dim", "must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::validation("hidden_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout_rate", format!("{} not in [0, 1)", self.dropout_rate)));
        }
        if self.max_len == 0 {
            return Err(Error::validation("max_len", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub tokenizer: Tokenizer,
    pub params: RewardModelParams,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    model: RewardModel,
}

impl RewardModel {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = RewardModelParams::init(cfg.vocab_size as usize, cfg.embed_dim, cfg.hidden_dim, cfg.dropout_rate, seed);
        params.validate()?;
        Ok(RewardModel { tokenizer: Tokenizer::new(cfg.vocab_size, cfg.max_len), params })
    }

    pub fn tokenize(&self, code: &str) -> TokenizedDesign {
        self.tokenizer.tokenize(code)
    }

    pub fn score_code(&self, code: &str) -> f64 {
        score(&self.params, &self.tokenize(code), None)
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint { version: CHECKPOINT_VERSION, model: self.clone() };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported reward-model version {}", ck.version)));
        }
        if ck.model.tokenizer.vocab_size as usize != ck.model.params.vocab_size {
            return Err(Error::Checkpoint("tokenizer and embedding vocabularies differ".into()));
        }
        ck.model.params.validate()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

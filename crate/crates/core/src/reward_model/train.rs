//! Pairwise loss with its analytic gradient, Adam, and the training loop.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, score, sigmoid, DropoutMask, Gradients, RewardModelParams};
use super::pairs::{LossConfig, PairExample, Tier};
use super::tokenize::TokenizedDesign;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// `softplus(l) - y*l`, the binary cross-entropy of `sigmoid(l)` against `y`.
pub fn bce_with_logit(logit: f64, y: f64) -> f64 {
    let softplus = if logit > 0.0 { logit + (-logit).exp().ln_1p() } else { logit.exp().ln_1p() };
    softplus - y * logit
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub pair: f64,
    pub consistency: f64,
}

/// Mask seeds for pair `k` of a batch: shared, then the two independent ones.
fn pair_mask_seeds(mask_seed: u64, k: usize) -> [u64; 3] {
    [0, 1, 2].map(|m| derive_seed(mask_seed, &[k as u64, m]))
}

fn masks_for(params: &RewardModelParams, mask_seed: Option<u64>, k: usize) -> Option<[DropoutMask; 3]> {
    let seed = mask_seed?;
    if params.dropout_rate == 0.0 {
        return None;
    }
    Some(pair_mask_seeds(seed, k).map(|s| DropoutMask::sample(params, s)))
}

/// Mean loss over `batch` and its gradient. `mask_seed = None` disables dropout.
pub fn loss_and_grads(
    params: &RewardModelParams,
    batch: &[&PairExample],
    cfg: &LossConfig,
    mask_seed: Option<u64>,
) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(Error::TooFew { what: "pairs in batch", needed: 1, got: 0 });
    }
    let mut grads = Gradients::zeros_like(params);
    let mut sum = LossBreakdown::default();
    for (k, pair) in batch.iter().enumerate() {
        let masks = masks_for(params, mask_seed, k);
        let (shared, own_i, own_j) = match &masks {
            Some([a, b, c]) => (Some(a), Some(b), Some(c)),
            None => (None, None, None),
        };
        let fi = forward(params, &pair.design_i, shared);
        let fj = forward(params, &pair.design_j, shared);
        let logit = fi.score - fj.score;
        let pair_term = bce_with_logit(logit, pair.label);
        sum.pair += pair_term;
        let mut d_logit = cfg.lambda_pair * (sigmoid(logit) - pair.label);
        if let Some((mi, mj)) = own_i.zip(own_j) {
            let gi = forward(params, &pair.design_i, Some(mi));
            let gj = forward(params, &pair.design_j, Some(mj));
            let resid = logit - (gi.score - gj.score);
            sum.consistency += resid * resid;
            d_logit += 2.0 * cfg.lambda_cons * resid;
            let d_indep = -2.0 * cfg.lambda_cons * resid;
            backward(params, &pair.design_i, Some(mi), &gi, d_indep, &mut grads);
            backward(params, &pair.design_j, Some(mj), &gj, -d_indep, &mut grads);
        }
        backward(params, &pair.design_i, shared, &fi, d_logit, &mut grads);
        backward(params, &pair.design_j, shared, &fj, -d_logit, &mut grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    sum.pair /= n;
    sum.consistency /= n;
    sum.total = cfg.lambda_pair * sum.pair + cfg.lambda_cons * sum.consistency;
    Ok((sum, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of kernels (not pairs) held out for testing.
    pub test_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { epochs: 20, lr: 2e-3, batch_size: 16, beta1: 0.9, beta2: 0.999, eps: 1e-8, test_fraction: 0.1 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", format!("{} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::validation("test_fraction", format!("{} not in [0, 1)", self.test_fraction)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(name, format!("{b} not in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Adam state over the flattened parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &RewardModelParams, lr: f64, cfg: &OptimizerConfig) -> Self {
        Adam {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut RewardModelParams, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let update = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..w.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        };
        update(&mut params.embedding, &grads.embedding, &mut self.m.embedding, &mut self.v.embedding);
        update(&mut params.w1, &grads.w1, &mut self.m.w1, &mut self.v.w1);
        update(&mut params.b1, &grads.b1, &mut self.m.b1, &mut self.v.b1);
        update(&mut params.w2, &grads.w2, &mut self.m.w2, &mut self.v.w2);
        update(
            std::slice::from_mut(&mut params.b2),
            &[grads.b2],
            std::slice::from_mut(&mut self.m.b2),
            std::slice::from_mut(&mut self.v.b2),
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TierAccuracy {
    pub dominance: Option<f64>,
    pub latency: Option<f64>,
}

/// Fraction of dominance-tier and latency-tier pairs with `p_ij > 0.5`,
/// dropout disabled. Tie-tier pairs carry no direction and are not counted.
pub fn tier_accuracy(params: &RewardModelParams, pairs: &[&PairExample]) -> TierAccuracy {
    let mut cache: HashMap<*const TokenizedDesign, f64> = HashMap::new();
    let mut s = |d: &std::sync::Arc<TokenizedDesign>| *cache.entry(std::sync::Arc::as_ptr(d)).or_insert_with(|| score(params, d, None));
    let (mut dom, mut lat) = ((0usize, 0usize), (0usize, 0usize));
    for p in pairs {
        let slot = match p.tier {
            Tier::Dominance => &mut dom,
            Tier::Latency => &mut lat,
            Tier::Tie => continue,
        };
        slot.1 += 1;
        if s(&p.design_i) > s(&p.design_j) {
            slot.0 += 1;
        }
    }
    let frac = |(hit, n): (usize, usize)| (n > 0).then(|| hit as f64 / n as f64);
    TierAccuracy { dominance: frac(dom), latency: frac(lat) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: TierAccuracy,
    pub test: TierAccuracy,
    pub loss: f64,
}

pub const ACCURACY_CSV_HEADER: &str = "epoch,train_acc_dom,test_acc_dom,train_acc_lat,test_acc_lat,loss";

pub fn accuracy_csv(log: &[EpochLog]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from(ACCURACY_CSV_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            row.epoch,
            cell(row.train.dominance),
            cell(row.test.dominance),
            cell(row.train.latency),
            cell(row.test.latency),
            row.loss
        ));
    }
    out
}

/// Held-out kernel names: `ceil(fraction * n)` of the sorted kernel set after a
/// seeded shuffle, always leaving at least one kernel for training.
pub fn split_kernels(pairs: &[PairExample], test_fraction: f64, seed: u64) -> BTreeSet<String> {
    let mut kernels: Vec<&String> = pairs.iter().map(|p| &p.kernel).collect::<BTreeSet<_>>().into_iter().collect();
    kernels.shuffle(&mut rng_from(seed));
    let n = kernels.len();
    let n_test = ((test_fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
    kernels.into_iter().take(n_test).cloned().collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: RewardModelParams,
    pub log: Vec<EpochLog>,
    pub test_kernels: BTreeSet<String>,
    pub n_train: usize,
    pub n_test: usize,
}

impl TrainOutcome {
    pub fn final_test(&self) -> Option<TierAccuracy> {
        self.log.last().map(|r| r.test)
    }
}

/// Adam over shuffled minibatches; one log row per epoch, evaluated after it.
pub fn train(
    mut params: RewardModelParams,
    pairs: &[PairExample],
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    opt.validate()?;
    loss_cfg.validate()?;
    let test_kernels = split_kernels(pairs, opt.test_fraction, derive_seed(seed, &[0]));
    let (test, train_set): (Vec<&PairExample>, Vec<&PairExample>) = pairs.iter().partition(|p| test_kernels.contains(&p.kernel));
    if train_set.is_empty() {
        return Err(Error::TooFew { what: "training pairs", needed: 1, got: 0 });
    }
    let mut adam = Adam::new(&params, opt.lr, opt);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng_from(derive_seed(seed, &[1, epoch as u64])));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(opt.batch_size).enumerate() {
            let batch: Vec<&PairExample> = chunk.iter().map(|&k| train_set[k]).collect();
            let mask_seed = derive_seed(seed, &[2, epoch as u64, b as u64]);
            let (loss, grads) = loss_and_grads(&params, &batch, loss_cfg, Some(mask_seed))?;
            adam.step(&mut params, &grads);
            loss_sum += loss.total;
            batches += 1;
        }
        let row = EpochLog {
            epoch: epoch + 1,
            train: tier_accuracy(&params, &train_set),
            test: tier_accuracy(&params, &test),
            loss: loss_sum / batches as f64,
        };
        log::debug!("epoch {} loss {:.4} test {:?}", row.epoch, row.loss, row.test);
        log.push(row);
    }
    Ok(TrainOutcome { params, log, test_kernels, n_train: train_set.len(), n_test: test.len() })
}

/// `steps` Adam steps at `lr` on minibatches drawn with replacement from `pairs`.
pub fn fine_tune(
    params: &mut RewardModelParams,
    pairs: &[PairExample],
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    lr: f64,
    steps: usize,
    seed: u64,
) -> Result<()> {
    if pairs.is_empty() || steps == 0 {
        return Ok(());
    }
    let mut adam = Adam::new(params, lr, opt);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..steps {
        if order.len() < opt.batch_size {
            let mut fresh: Vec<usize> = (0..pairs.len()).collect();
            fresh.shuffle(&mut rng_from(derive_seed(seed, &[0, step as u64])));
            order.extend(fresh);
        }
        let take = opt.batch_size.min(order.len());
        let batch: Vec<&PairExample> = order.drain(..take).map(|k| &pairs[k]).collect();
        let (_, grads) = loss_and_grads(params, &batch, loss_cfg, Some(derive_seed(seed, &[1, step as u64])))?;
        adam.step(params, &grads);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward_model::tokenize::Tokenizer;

    #[test]
    fn bce_matches_naive_formula() {
        for (l, y) in [(0.3, 1.0), (-2.0, 0.5), (5.0, 0.0), (-40.0, 1.0)] {
            let p = sigmoid(l);
            let naive: f64 = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(l, y) - naive).abs() < 1e-9 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn bce_plateau_is_ln2() {
        assert!((bce_with_logit(0.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-4);
    }

    fn toy_pairs(n_kernels: usize) -> Vec<PairExample> {
        let tk = Tokenizer::new(128, 64);
        let mut out = Vec::new();
        for k in 0..n_kernels {
            let good = tk.tokenize_shared(&format!("k{k} body\n#pragma HLS PIPELINE II=1"));
            let bad = tk.tokenize_shared(&format!("k{k} body"));
            out.push(PairExample { kernel: format!("k{k}"), design_i: good, design_j: bad, label: 1.0, tier: Tier::Dominance });
        }
        out
    }

    #[test]
    fn no_dropout_means_no_consistency_term() {
        let mut p = RewardModelParams::init(128, 8, 6, 0.0, 1);
        let pairs = toy_pairs(3);
        let batch: Vec<&PairExample> = pairs.iter().collect();
        let (loss, _) = loss_and_grads(&p, &batch, &LossConfig::default(), Some(4)).unwrap();
        assert_eq!(loss.consistency, 0.0);
        p.dropout_rate = 0.3;
        let (loss, _) = loss_and_grads(&p, &batch, &LossConfig::default(), None).unwrap();
        assert_eq!(loss.consistency, 0.0);
        assert!((loss.total - loss.pair).abs() < 1e-15);
        let (loss, _) = loss_and_grads(&p, &batch, &LossConfig::default(), Some(4)).unwrap();
        assert!(loss.consistency > 0.0 && loss.pair >= 0.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let p = RewardModelParams::init(128, 8, 6, 0.2, 1);
        assert!(loss_and_grads(&p, &[], &LossConfig::default(), None).is_err());
    }

    #[test]
    fn zero_epochs_and_zero_lr() {
        let p = RewardModelParams::init(128, 8, 6, 0.2, 1);
        let pairs = toy_pairs(4);
        let opt = OptimizerConfig { epochs: 0, ..OptimizerConfig::default() };
        let out = train(p.clone(), &pairs, &LossConfig::default(), &opt, 3).unwrap();
        assert_eq!(out.params, p);
        assert!(out.log.is_empty());
        let opt = OptimizerConfig { epochs: 4, lr: 0.0, ..OptimizerConfig::default() };
        let out = train(p.clone(), &pairs, &LossConfig::default(), &opt, 3).unwrap();
        assert_eq!(out.params, p);
        assert!(out.log.windows(2).all(|w| w[0].train == w[1].train && w[0].test == w[1].test));
    }

    #[test]
    fn split_is_by_kernel() {
        let pairs = toy_pairs(10);
        let test = split_kernels(&pairs, 0.1, 5);
        assert_eq!(test.len(), 1);
        assert!(split_kernels(&toy_pairs(1), 0.1, 5).is_empty());
        let opt = OptimizerConfig { epochs: 1, ..OptimizerConfig::default() };
        let out = train(RewardModelParams::init(128, 8, 6, 0.2, 1), &pairs, &LossConfig::default(), &opt, 5).unwrap();
        assert_eq!((out.n_train, out.n_test), (9, 1));
    }

    #[test]
    fn training_learns_a_pragma_preference() {
        let pairs = toy_pairs(6);
        let opt = OptimizerConfig { epochs: 60, lr: 1e-2, batch_size: 4, ..OptimizerConfig::default() };
        let out = train(RewardModelParams::init(128, 8, 6, 0.1, 2), &pairs, &LossConfig::default(), &opt, 9).unwrap();
        assert_eq!(out.log.last().unwrap().train.dominance, Some(1.0));
        assert!(out.log.last().unwrap().loss < out.log[0].loss);
        let again = train(RewardModelParams::init(128, 8, 6, 0.1, 2), &pairs, &LossConfig::default(), &opt, 9).unwrap();
        assert_eq!(again.params, out.params);
    }

    #[test]
    fn accuracy_csv_layout() {
        let row = EpochLog {
            epoch: 1,
            train: TierAccuracy { dominance: Some(1.0), latency: None },
            test: TierAccuracy { dominance: Some(0.5), latency: Some(0.25) },
            loss: 0.7,
        };
        assert_eq!(accuracy_csv(&[row]), format!("{ACCURACY_CSV_HEADER}\n1,1.000000,0.500000,,0.250000,0.700000\n"));
    }

    #[test]
    fn fine_tune_moves_weights_only_when_asked() {
        let mut p = RewardModelParams::init(128, 8, 6, 0.2, 1);
        let before = p.clone();
        fine_tune(&mut p, &[], &LossConfig::default(), &OptimizerConfig::default(), 1e-3, 10, 0).unwrap();
        assert_eq!(p, before);
        fine_tune(&mut p, &toy_pairs(2), &LossConfig::default(), &OptimizerConfig::default(), 1e-3, 10, 0).unwrap();
        assert_ne!(p, before);
    }
}

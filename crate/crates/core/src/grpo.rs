//! Group-relative policy optimization over a factored categorical policy.
//!
//! The policy stands in for a code-generating language model: per kernel it
//! holds one categorical per pragma dimension, plus two shared Bernoulli
//! logits for emitting a well-formed `<think>`/`<final_code>` wrapper and for
//! introducing a dynamic allocation (which fails compilation). Every sampled
//! candidate is exactly log-probable, so ratios and KL terms are exact.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{render_design, DesignPoint, DesignSpace, KernelDescriptor};
use crate::error::{Error, Result};
use crate::oracle::{analytic_qor, SynthesisBackend};
use crate::reward_model::{sigmoid, LossConfig, OptimizerConfig, RewardModel};
use crate::rng::{derive_seed, rng_from};
use crate::router::{
    compute_rq, maybe_online_update, ReplayBuffer, RouterCandidate, RouterTelemetry, RqOutcome, UncertaintyConfig,
};

pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub lambda_f: f64,
    pub lambda_comp: f64,
    pub lambda_c: f64,
    pub lambda_q: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { lambda_f: 0.1, lambda_comp: 0.2, lambda_c: 0.3, lambda_q: 0.4 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            ("lambda_f", self.lambda_f),
            ("lambda_comp", self.lambda_comp),
            ("lambda_c", self.lambda_c),
            ("lambda_q", self.lambda_q),
        ];
        for (name, x) in w {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::validation(name, format!("{x} must be finite and non-negative")));
            }
        }
        if w.iter().all(|(_, x)| *x == 0.0) {
            return Err(Error::validation("lambda_q", "all reward weights are zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub ppo_epochs: usize,
    pub adv_eps: f64,
    pub policy_lr: f64,
    pub steps: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig { group_size: 4, clip_eps: 0.2, kl_beta: 0.02, ppo_epochs: 2, adv_eps: 1e-4, policy_lr: 0.05, steps: 1000 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::validation("group_size", format!("{} is below 2", self.group_size)));
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return Err(Error::validation("clip_eps", "must be positive"));
        }
        for (name, x) in [("kl_beta", self.kl_beta), ("adv_eps", self.adv_eps), ("policy_lr", self.policy_lr)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::validation(name, format!("{x} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Per-kernel logits, one vector per design-space dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelLogits {
    pub dims: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPolicy {
    pub kernels: BTreeMap<String, KernelLogits>,
    pub format_logit: f64,
    pub alloc_logit: f64,
}

#[derive(Serialize, Deserialize)]
struct PolicyCheckpoint {
    version: u32,
    #[serde(flatten)]
    policy: SimPolicy,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[k] - lse
}

/// `KL(p || q)` for categoricals given by logits.
pub fn categorical_kl(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let p = softmax(p_logits);
    (0..p.len())
        .filter(|&k| p[k] > 0.0)
        .map(|k| p[k] * (log_softmax(p_logits, k) - log_softmax(q_logits, k)))
        .sum::<f64>()
        .max(0.0)
}

/// Gradient of `KL(softmax(z) || q)` with respect to `z`.
fn categorical_kl_grad(p_logits: &[f64], q_logits: &[f64]) -> Vec<f64> {
    let p = softmax(p_logits);
    let kl = categorical_kl(p_logits, q_logits);
    (0..p.len())
        .map(|k| p[k] * (log_softmax(p_logits, k) - log_softmax(q_logits, k) - kl))
        .collect()
}

fn bernoulli_logits(z: f64) -> [f64; 2] {
    [0.0, z]
}

/// One sampled candidate's actions: a choice index per dimension plus the two flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub choices: Vec<usize>,
    pub well_formed: bool,
    pub dynamic_alloc: bool,
}

impl SimPolicy {
    /// Uniform categoricals for every kernel; both flags at probability 1/2.
    pub fn uniform(kernels: &[Arc<KernelDescriptor>]) -> Self {
        let kernels = kernels
            .iter()
            .map(|k| {
                let dims = DesignSpace::new(k).choice_counts().into_iter().map(|n| vec![0.0; n]).collect();
                (k.name.clone(), KernelLogits { dims })
            })
            .collect();
        SimPolicy { kernels, format_logit: 0.0, alloc_logit: 0.0 }
    }

    fn logits(&self, kernel: &str) -> Result<&KernelLogits> {
        self.kernels.get(kernel).ok_or_else(|| Error::UnknownKernel(kernel.to_string()))
    }

    pub fn sample(&self, kernel: &str, rng: &mut impl Rng) -> Result<Action> {
        let kl = self.logits(kernel)?;
        let choices = kl
            .dims
            .iter()
            .map(|z| {
                let p = softmax(z);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return k;
                    }
                }
                p.len() - 1
            })
            .collect();
        let well_formed = rng.random::<f64>() < sigmoid(self.format_logit);
        let dynamic_alloc = rng.random::<f64>() < sigmoid(self.alloc_logit);
        Ok(Action { choices, well_formed, dynamic_alloc })
    }

    pub fn log_prob(&self, kernel: &str, action: &Action) -> Result<f64> {
        let kl = self.logits(kernel)?;
        let mut lp: f64 = kl.dims.iter().zip(&action.choices).map(|(z, &a)| log_softmax(z, a)).sum();
        lp += log_softmax(&bernoulli_logits(self.format_logit), action.well_formed as usize);
        lp += log_softmax(&bernoulli_logits(self.alloc_logit), action.dynamic_alloc as usize);
        Ok(lp)
    }

    /// Exact `KL(self || reference)` summed over the kernel's dimensions and both flags.
    pub fn kl_to(&self, reference: &SimPolicy, kernel: &str) -> Result<f64> {
        let (a, b) = (self.logits(kernel)?, reference.logits(kernel)?);
        let mut kl: f64 = a.dims.iter().zip(&b.dims).map(|(p, q)| categorical_kl(p, q)).sum();
        kl += categorical_kl(&bernoulli_logits(self.format_logit), &bernoulli_logits(reference.format_logit));
        kl += categorical_kl(&bernoulli_logits(self.alloc_logit), &bernoulli_logits(reference.alloc_logit));
        Ok(kl)
    }

    /// Probability of the exact choice tuple (flags excluded).
    pub fn choice_prob(&self, kernel: &str, choices: &[usize]) -> Result<f64> {
        let kl = self.logits(kernel)?;
        Ok(kl.dims.iter().zip(choices).map(|(z, &a)| log_softmax(z, a)).sum::<f64>().exp())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PolicyCheckpoint { version: POLICY_VERSION, policy: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: PolicyCheckpoint = serde_json::from_str(text)?;
        if ck.version != POLICY_VERSION {
            return Err(Error::Checkpoint(format!("unsupported policy version {}", ck.version)));
        }
        Ok(ck.policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// 1 iff the text is exactly a non-empty `<think>` block followed by a
/// non-empty `<final_code>` block, with only whitespace around them.
pub fn check_format(text: &str) -> u8 {
    fn block<'a>(s: &'a str, tag: &str) -> Option<(&'a str, &'a str)> {
        let s = s.trim_start().strip_prefix(&format!("<{tag}>"))?;
        let close = format!("</{tag}>");
        let end = s.find(&close)?;
        let body = &s[..end];
        if body.trim().is_empty() || body.contains(&format!("<{tag}>")) {
            return None;
        }
        Some((body, &s[end + close.len()..]))
    }
    let ok = (|| {
        let (think, rest) = block(text, "think")?;
        if think.contains("<final_code>") {
            return None;
        }
        let (_, rest) = block(rest, "final_code")?;
        rest.trim().is_empty().then_some(())
    })();
    ok.is_some() as u8
}

/// Simulated model output for a sampled action.
pub fn candidate_text(design: &DesignPoint, action: &Action) -> String {
    let pragmas = design.rendered_code.lines().filter(|l| l.trim_start().starts_with("#pragma HLS")).count();
    let mut code = design.rendered_code.clone();
    if action.dynamic_alloc {
        code = code.replacen('{', "{\n  int *scratch = (int *)malloc(64 * sizeof(int));", 1);
    }
    let close = if action.well_formed { "</think>" } else { "" };
    format!("<think>\nApply {pragmas} pragmas to {}.\n{close}\n<final_code>\n{code}</final_code>\n", design.kernel.name)
}

pub fn total_reward(r_f: f64, r_comp: f64, r_c: f64, r_q: f64, w: &RewardWeights) -> f64 {
    w.lambda_f * r_f + w.lambda_comp * r_comp + w.lambda_c * r_c + w.lambda_q * r_q
}

/// `(r_i - mean) / (population std + adv_eps)`.
pub fn group_advantages(rewards: &[f64], adv_eps: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    rewards.iter().map(|r| (r - mean) / (std + adv_eps)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    pub action: Action,
    pub old_log_prob: f64,
    pub r_f: f64,
    pub r_comp: f64,
    pub r_c: f64,
    pub r_q: f64,
    pub total: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub kernel: String,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub group: GroupSample,
    pub rq: RqOutcome,
    /// `KL(policy || reference)` after the update.
    pub kl: f64,
    /// Importance ratios seen in each PPO epoch.
    pub ratios: Vec<Vec<f64>>,
}

/// Ascent direction of the clipped surrogate minus the KL penalty.
fn surrogate_grad(
    policy: &SimPolicy,
    reference: &SimPolicy,
    kernel: &str,
    group: &GroupSample,
    cfg: &GrpoConfig,
) -> Result<(SimPolicy, Vec<f64>)> {
    let mut grad = policy.clone();
    let kl_now = policy.logits(kernel)?;
    let kl_ref = reference.logits(kernel)?;
    for z in grad.kernels.get_mut(kernel).expect("kernel present").dims.iter_mut() {
        z.iter_mut().for_each(|g| *g = 0.0);
    }
    grad.format_logit = 0.0;
    grad.alloc_logit = 0.0;
    let g_dims = &mut grad.kernels.get_mut(kernel).expect("kernel present").dims;
    let g = group.candidates.len() as f64;
    let mut ratios = Vec::with_capacity(group.candidates.len());
    let mut g_format = 0.0;
    let mut g_alloc = 0.0;
    for c in &group.candidates {
        let ratio = (policy.log_prob(kernel, &c.action)? - c.old_log_prob).exp();
        ratios.push(ratio);
        let a = c.advantage;
        let clipped = (a > 0.0 && ratio > 1.0 + cfg.clip_eps) || (a < 0.0 && ratio < 1.0 - cfg.clip_eps);
        if clipped || a == 0.0 {
            continue;
        }
        let w = ratio * a / g;
        for ((z, gz), &act) in kl_now.dims.iter().zip(g_dims.iter_mut()).zip(&c.action.choices) {
            let p = softmax(z);
            for k in 0..p.len() {
                gz[k] += w * ((k == act) as u8 as f64 - p[k]);
            }
        }
        g_format += w * (c.action.well_formed as u8 as f64 - sigmoid(policy.format_logit));
        g_alloc += w * (c.action.dynamic_alloc as u8 as f64 - sigmoid(policy.alloc_logit));
    }
    if cfg.kl_beta > 0.0 {
        for ((z, q), gz) in kl_now.dims.iter().zip(&kl_ref.dims).zip(g_dims.iter_mut()) {
            for (gk, dk) in gz.iter_mut().zip(categorical_kl_grad(z, q)) {
                *gk -= cfg.kl_beta * dk;
            }
        }
        g_format -= cfg.kl_beta * categorical_kl_grad(&bernoulli_logits(policy.format_logit), &bernoulli_logits(reference.format_logit))[1];
        g_alloc -= cfg.kl_beta * categorical_kl_grad(&bernoulli_logits(policy.alloc_logit), &bernoulli_logits(reference.alloc_logit))[1];
    }
    grad.format_logit = g_format;
    grad.alloc_logit = g_alloc;
    Ok((grad, ratios))
}

fn apply_ascent(policy: &mut SimPolicy, grad: &SimPolicy, kernel: &str, lr: f64) {
    let g = &grad.kernels[kernel];
    for (z, gz) in policy.kernels.get_mut(kernel).expect("kernel present").dims.iter_mut().zip(&g.dims) {
        for (zk, gk) in z.iter_mut().zip(gz) {
            *zk += lr * gk;
        }
    }
    policy.format_logit += lr * grad.format_logit;
    policy.alloc_logit += lr * grad.alloc_logit;
}

/// Everything one step needs besides the policy and the kernel.
pub struct StepContext<'a> {
    pub reference: &'a SimPolicy,
    pub backend: &'a dyn SynthesisBackend,
    pub model: &'a RewardModel,
    pub buffer: &'a mut ReplayBuffer,
    pub ucfg: &'a UncertaintyConfig,
    pub cfg: &'a GrpoConfig,
    pub weights: &'a RewardWeights,
}

/// Sample a group, score it, and apply `ppo_epochs` clipped updates.
pub fn grpo_step(policy: &mut SimPolicy, kernel: &Arc<KernelDescriptor>, ctx: StepContext<'_>, seed: u64) -> Result<StepOutcome> {
    let name = kernel.name.as_str();
    let space = DesignSpace::new(kernel);
    let mut rng = rng_from(derive_seed(seed, &[0]));
    let mut designs = Vec::with_capacity(ctx.cfg.group_size);
    let mut records = Vec::with_capacity(ctx.cfg.group_size);
    let mut verdicts = Vec::with_capacity(ctx.cfg.group_size);
    for _ in 0..ctx.cfg.group_size {
        let action = policy.sample(name, &mut rng)?;
        let old_log_prob = policy.log_prob(name, &action)?;
        let design = render_design(kernel, &space.config_from_indices(&action.choices))?.with_dynamic_alloc(action.dynamic_alloc);
        let verdict = ctx.backend.evaluate(&design);
        let text = candidate_text(&design, &action);
        records.push(CandidateRecord {
            r_f: check_format(&text) as f64,
            r_comp: verdict.compiled as u8 as f64,
            r_c: verdict.functional as u8 as f64,
            text,
            action,
            old_log_prob,
            r_q: 0.0,
            total: 0.0,
            advantage: 0.0,
        });
        verdicts.push(verdict);
        designs.push(design);
    }
    let cands: Vec<RouterCandidate<'_>> = designs
        .iter()
        .zip(&verdicts)
        .map(|(d, v)| RouterCandidate { design: d, functional: v.functional })
        .collect();
    let rq = compute_rq(&cands, ctx.model, ctx.backend, ctx.buffer, ctx.ucfg, derive_seed(seed, &[1]))?;
    for (c, &r) in records.iter_mut().zip(&rq.r_q) {
        c.r_q = r;
        c.total = total_reward(c.r_f, c.r_comp, c.r_c, c.r_q, ctx.weights);
    }
    let totals: Vec<f64> = records.iter().map(|c| c.total).collect();
    for (c, a) in records.iter_mut().zip(group_advantages(&totals, ctx.cfg.adv_eps)) {
        c.advantage = a;
    }
    let group = GroupSample { kernel: kernel.name.clone(), candidates: records };
    let mut ratios = Vec::with_capacity(ctx.cfg.ppo_epochs);
    for _ in 0..ctx.cfg.ppo_epochs {
        let (grad, r) = surrogate_grad(policy, ctx.reference, name, &group, ctx.cfg)?;
        apply_ascent(policy, &grad, name, ctx.cfg.policy_lr);
        ratios.push(r);
    }
    let kl = policy.kl_to(ctx.reference, name)?;
    Ok(StepOutcome { group, rq, kl, ratios })
}

/// One row of the training telemetry CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoStepRow {
    pub step: usize,
    pub kernel: String,
    pub mean_r_f: f64,
    pub mean_r_comp: f64,
    pub mean_r_c: f64,
    /// Mean r_q over the functionally correct candidates (0 when there are none).
    pub mean_r_q: f64,
    pub mean_total: f64,
    pub trigger_rate: f64,
    pub kl: f64,
    pub synth_seconds_cum: f64,
    /// Mean r_q over the whole group, non-members counted as 0.
    pub mean_r_q_group: f64,
    pub n_correct: usize,
}

pub const GRPO_CSV_HEADER: &str =
    "step,kernel,mean_r_f,mean_r_comp,mean_r_c,mean_r_q,mean_total,trigger_rate,kl,synth_seconds_cum,mean_r_q_group,n_correct";

pub fn grpo_csv(rows: &[GrpoStepRow]) -> String {
    let mut out = String::from(GRPO_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.8},{:.1},{:.6},{}\n",
            r.step,
            r.kernel,
            r.mean_r_f,
            r.mean_r_comp,
            r.mean_r_c,
            r.mean_r_q,
            r.mean_total,
            r.trigger_rate,
            r.kl,
            r.synth_seconds_cum,
            r.mean_r_q_group,
            r.n_correct
        ));
    }
    out
}

/// Parse rows written by [`grpo_csv`].
pub fn parse_grpo_csv(text: &str) -> Result<Vec<GrpoStepRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse { line: n + 1, message: m.to_string() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(bad("expected 12 columns"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(&format!("column {} is not a number", i + 1)));
        rows.push(GrpoStepRow {
            step: f[0].parse().map_err(|_| bad("step is not an integer"))?,
            kernel: f[1].to_string(),
            mean_r_f: num(2)?,
            mean_r_comp: num(3)?,
            mean_r_c: num(4)?,
            mean_r_q: num(5)?,
            mean_total: num(6)?,
            trigger_rate: num(7)?,
            kl: num(8)?,
            synth_seconds_cum: num(9)?,
            mean_r_q_group: num(10)?,
            n_correct: f[11].parse().map_err(|_| bad("n_correct is not an integer"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub grpo: GrpoConfig,
    pub weights: RewardWeights,
    pub uncertainty: UncertaintyConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub policy: SimPolicy,
    pub model: RewardModel,
    pub buffer: ReplayBuffer,
    pub rows: Vec<GrpoStepRow>,
    pub router: RouterTelemetry,
    /// Candidates generated, i.e. synthesis calls an all-real run would make.
    pub candidates: usize,
    pub online_updates: usize,
}

/// Round-robin GRPO over `kernels` for `cfg.grpo.steps` steps.
pub fn run_training(
    kernels: &[Arc<KernelDescriptor>],
    initial: SimPolicy,
    model: RewardModel,
    backend: &dyn SynthesisBackend,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainingRun> {
    if kernels.is_empty() {
        return Err(Error::TooFew { what: "kernels", needed: 1, got: 0 });
    }
    cfg.grpo.validate()?;
    cfg.weights.validate()?;
    cfg.uncertainty.validate()?;
    let reference = initial.clone();
    let mut run = TrainingRun {
        policy: initial,
        model,
        buffer: ReplayBuffer::new(),
        rows: Vec::with_capacity(cfg.grpo.steps),
        router: RouterTelemetry::default(),
        candidates: 0,
        online_updates: 0,
    };
    for step in 0..cfg.grpo.steps {
        let kernel = &kernels[step % kernels.len()];
        let ctx = StepContext {
            reference: &reference,
            backend,
            model: &run.model,
            buffer: &mut run.buffer,
            ucfg: &cfg.uncertainty,
            cfg: &cfg.grpo,
            weights: &cfg.weights,
        };
        let out = grpo_step(&mut run.policy, kernel, ctx, derive_seed(seed, &[step as u64]))?;
        let g = out.group.candidates.len() as f64;
        let mean = |f: fn(&CandidateRecord) -> f64| out.group.candidates.iter().map(f).sum::<f64>() / g;
        let correct: Vec<f64> = out.group.candidates.iter().filter(|c| c.r_c > 0.0).map(|c| c.r_q).collect();
        let router_row = run.router.record(step + 1, out.group.candidates.len(), &out.rq, backend.cost_seconds());
        run.candidates += out.group.candidates.len();
        run.rows.push(GrpoStepRow {
            step: step + 1,
            kernel: kernel.name.clone(),
            mean_r_f: mean(|c| c.r_f),
            mean_r_comp: mean(|c| c.r_comp),
            mean_r_c: mean(|c| c.r_c),
            mean_r_q: if correct.is_empty() { 0.0 } else { correct.iter().sum::<f64>() / correct.len() as f64 },
            mean_total: mean(|c| c.total),
            trigger_rate: router_row.trigger_rate,
            kl: out.kl,
            synth_seconds_cum: router_row.synth_seconds_cum,
            mean_r_q_group: mean(|c| c.r_q),
            n_correct: correct.len(),
        });
        let updated = maybe_online_update(
            &mut run.model,
            &run.buffer,
            &cfg.uncertainty,
            &cfg.loss,
            &cfg.optimizer,
            step + 1,
            derive_seed(seed, &[u64::MAX, step as u64]),
        )?;
        if updated {
            run.online_updates += 1;
            log::info!("online reward-model update at step {} ({} buffered designs)", step + 1, run.buffer.len());
        }
    }
    Ok(run)
}

/// Expected analytic latency of the policy's pragma choices on `kernel`,
/// by exact enumeration of the design space.
pub fn expected_oracle_latency(policy: &SimPolicy, kernel: &Arc<KernelDescriptor>) -> Result<f64> {
    let space = DesignSpace::new(kernel);
    let counts = space.choice_counts();
    let probs: Vec<Vec<f64>> = policy.logits(&kernel.name)?.dims.iter().map(|z| softmax(z)).collect();
    let mut idx = vec![0usize; counts.len()];
    let mut total = 0.0;
    loop {
        let p: f64 = idx.iter().zip(&probs).map(|(&i, p)| p[i]).product();
        if p > 0.0 {
            total += p * analytic_qor(kernel, &space.config_from_indices(&idx)).latency_cycles as f64;
        }
        let mut d = counts.len();
        loop {
            if d == 0 {
                return Ok(total);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

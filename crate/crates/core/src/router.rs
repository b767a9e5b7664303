//! Proxy QoR reward: round-robin pairwise aggregation over the functionally
//! correct members of a group, with MC-dropout gating to real synthesis.
//!
//! Gating is per candidate. A pair where both members have real QoR is
//! compared on ground truth; any other pair uses the mean preference over the
//! dropout passes. Pass `m` uses the same mask for every candidate of a step,
//! so `p_ij + p_ji = 1` holds pass by pass.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design_space::{render_design, DesignPoint, KernelDescriptor, PragmaConfig};
use crate::error::{Error, Result};
use crate::oracle::{QorVector, SynthesisBackend};
use crate::pareto::dominates;
use crate::reward_model::{
    fine_tune, mc_uncertainty, pairs_from_labeled, sigmoid, LossConfig, OptimizerConfig, PairExample, RewardModel,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub tau_u: f64,
    pub m_passes: usize,
    pub k_update: usize,
    pub online_lr: f64,
    pub online_steps: usize,
    pub online_updates: bool,
    /// Synthesize every correct candidate regardless of uncertainty.
    pub force_real: bool,
    /// When any member is synthesized, synthesize the rest of the group too.
    pub escalate_pairs: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            tau_u: 0.1,
            m_passes: 10,
            k_update: 100,
            online_lr: 2e-6,
            online_steps: 50,
            online_updates: true,
            force_real: false,
            escalate_pairs: false,
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_u.is_nan() || self.tau_u <= 0.0 {
            return Err(Error::validation("tau_u", format!("{} must be positive", self.tau_u)));
        }
        if self.m_passes < 2 {
            return Err(Error::validation("m_passes", format!("{} is below 2", self.m_passes)));
        }
        if self.k_update == 0 {
            return Err(Error::validation("k_update", "must be positive"));
        }
        Ok(())
    }
}

/// One persisted buffer line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferRecord {
    pub kernel: String,
    pub config: PragmaConfig,
    pub qor: QorVector,
}

/// Ground-truth designs, deduplicated by `(kernel, config)`, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    entries: Vec<(DesignPoint, QorVector)>,
    index: HashMap<(String, PragmaConfig), usize>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(DesignPoint, QorVector)] {
        &self.entries
    }

    pub fn get(&self, design: &DesignPoint) -> Option<QorVector> {
        self.index
            .get(&(design.kernel.name.clone(), design.config.clone()))
            .map(|&k| self.entries[k].1)
    }

    /// Returns false (and keeps the old entry) on a duplicate key.
    pub fn insert(&mut self, design: DesignPoint, qor: QorVector) -> bool {
        let key = (design.kernel.name.clone(), design.config.clone());
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.entries.len());
        self.entries.push((design, qor));
        true
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (d, q) in &self.entries {
            let rec = BufferRecord { kernel: d.kernel.name.clone(), config: d.config.clone(), qor: *q };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, kernels: &[Arc<KernelDescriptor>]) -> Result<Self> {
        let by_name: HashMap<&str, &Arc<KernelDescriptor>> = kernels.iter().map(|k| (k.name.as_str(), k)).collect();
        let mut buf = ReplayBuffer::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: BufferRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            let kernel = by_name.get(rec.kernel.as_str()).ok_or_else(|| Error::UnknownKernel(rec.kernel.clone()))?;
            buf.insert(render_design(kernel, &rec.config)?, rec.qor);
        }
        Ok(buf)
    }

    /// Two-tier pairs within each kernel, kernels in name order.
    pub fn pairs(&self, model: &RewardModel, cfg: &LossConfig) -> Vec<PairExample> {
        let mut by_kernel: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for (d, q) in &self.entries {
            by_kernel
                .entry(d.kernel.name.as_str())
                .or_default()
                .push((model.tokenizer.tokenize_shared(&d.rendered_code), *q));
        }
        by_kernel
            .into_iter()
            .flat_map(|(k, items)| pairs_from_labeled(k, &items, cfg))
            .collect()
    }
}

/// Ground-truth preference: dominance, then strict latency, else 0.5.
pub fn real_preference(qi: &QorVector, qj: &QorVector) -> f64 {
    if dominates(qi, qj) {
        1.0
    } else if dominates(qj, qi) {
        0.0
    } else if qi.latency_cycles < qj.latency_cycles {
        1.0
    } else if qi.latency_cycles > qj.latency_cycles {
        0.0
    } else {
        0.5
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RouterCandidate<'a> {
    pub design: &'a DesignPoint,
    pub functional: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RqOutcome {
    pub r_q: Vec<f64>,
    pub n_correct: usize,
    /// Members whose dropout variance exceeded the threshold (or all, when forced).
    pub n_flagged: usize,
    /// Backend calls made in this step (buffer hits excluded).
    pub synth_calls: usize,
    pub real_qor: Vec<Option<QorVector>>,
    pub uncertainty: Vec<Option<f64>>,
}

impl RqOutcome {
    pub fn trigger_rate(&self) -> f64 {
        if self.n_correct == 0 {
            0.0
        } else {
            self.n_flagged as f64 / self.n_correct as f64
        }
    }
}

fn synthesize(design: &DesignPoint, backend: &dyn SynthesisBackend, buffer: &mut ReplayBuffer, calls: &mut usize) -> Result<QorVector> {
    if let Some(q) = buffer.get(design) {
        return Ok(q);
    }
    let qor = backend
        .evaluate(design)
        .qor
        .ok_or_else(|| Error::validation("candidate", "backend returned no QoR for a functional design"))?;
    *calls += 1;
    buffer.insert(design.clone(), qor);
    Ok(qor)
}

/// r_q for every candidate; non-members of the correct set get 0.
pub fn compute_rq(
    candidates: &[RouterCandidate<'_>],
    model: &RewardModel,
    backend: &dyn SynthesisBackend,
    buffer: &mut ReplayBuffer,
    ucfg: &UncertaintyConfig,
    seed: u64,
) -> Result<RqOutcome> {
    let n = candidates.len();
    let members: Vec<usize> = (0..n).filter(|&i| candidates[i].functional).collect();
    let mut out = RqOutcome {
        r_q: vec![0.0; n],
        n_correct: members.len(),
        real_qor: vec![None; n],
        uncertainty: vec![None; n],
        ..RqOutcome::default()
    };
    match members.len() {
        0 => return Ok(out),
        1 => {
            out.r_q[members[0]] = 1.0;
            return Ok(out);
        }
        _ => {}
    }
    let mut samples: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut flagged = Vec::new();
    for &i in &members {
        let tokens = model.tokenize(&candidates[i].design.rendered_code);
        let est = mc_uncertainty(&model.params, &tokens, ucfg.m_passes, seed)?;
        out.uncertainty[i] = Some(est.variance);
        if ucfg.force_real || est.variance > ucfg.tau_u {
            flagged.push(i);
        }
        samples.insert(i, est.samples);
    }
    out.n_flagged = flagged.len();
    let to_synth: Vec<usize> = if ucfg.escalate_pairs && !flagged.is_empty() { members.clone() } else { flagged };
    let mut calls = 0;
    for i in to_synth {
        out.real_qor[i] = Some(synthesize(candidates[i].design, backend, buffer, &mut calls)?);
    }
    out.synth_calls = calls;
    let denom = (members.len() - 1) as f64;
    for &i in &members {
        let mut total = 0.0;
        for &j in &members {
            if i == j {
                continue;
            }
            total += match (out.real_qor[i], out.real_qor[j]) {
                (Some(qi), Some(qj)) => real_preference(&qi, &qj),
                _ => {
                    let (si, sj) = (&samples[&i], &samples[&j]);
                    si.iter().zip(sj).map(|(a, b)| sigmoid(a - b)).sum::<f64>() / si.len() as f64
                }
            };
        }
        out.r_q[i] = total / denom;
    }
    Ok(out)
}

/// Fine-tune on buffer pairs when `global_step` is a positive multiple of
/// `k_update`. Returns whether the weights were updated.
pub fn maybe_online_update(
    model: &mut RewardModel,
    buffer: &ReplayBuffer,
    ucfg: &UncertaintyConfig,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    global_step: usize,
    seed: u64,
) -> Result<bool> {
    if !ucfg.online_updates || global_step == 0 || !global_step.is_multiple_of(ucfg.k_update) {
        return Ok(false);
    }
    let pairs = buffer.pairs(model, loss_cfg);
    if pairs.is_empty() {
        return Ok(false);
    }
    let seed = derive_seed(seed, &[global_step as u64]);
    fine_tune(&mut model.params, &pairs, loss_cfg, opt, ucfg.online_lr, ucfg.online_steps, seed)?;
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterStepRow {
    pub step: usize,
    pub group_size: usize,
    pub n_correct: usize,
    pub n_flagged: usize,
    pub trigger_rate: f64,
    pub synth_calls_cum: usize,
    pub synth_seconds_cum: f64,
}

pub const ROUTER_CSV_HEADER: &str = "step,group_size,n_correct,n_flagged,trigger_rate,synth_calls_cum,synth_seconds_cum";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouterTelemetry {
    pub rows: Vec<RouterStepRow>,
}

impl RouterTelemetry {
    pub fn record(&mut self, step: usize, group_size: usize, outcome: &RqOutcome, cost_seconds: f64) -> RouterStepRow {
        let calls = self.rows.last().map_or(0, |r| r.synth_calls_cum) + outcome.synth_calls;
        let row = RouterStepRow {
            step,
            group_size,
            n_correct: outcome.n_correct,
            n_flagged: outcome.n_flagged,
            trigger_rate: outcome.trigger_rate(),
            synth_calls_cum: calls,
            synth_seconds_cum: calls as f64 * cost_seconds,
        };
        self.rows.push(row);
        row
    }

    pub fn synth_calls(&self) -> usize {
        self.rows.last().map_or(0, |r| r.synth_calls_cum)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ROUTER_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{:.1}\n",
                r.step, r.group_size, r.n_correct, r.n_flagged, r.trigger_rate, r.synth_calls_cum, r.synth_seconds_cum
            ));
        }
        out
    }
}

/// Parse rows written by [`RouterTelemetry::to_csv`].
pub fn parse_router_csv(text: &str) -> Result<Vec<RouterStepRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { line: n + 1, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 columns".into()));
        }
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad(format!("column {} is not an integer", i + 1)));
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(format!("column {} is not a number", i + 1)));
        rows.push(RouterStepRow {
            step: int(0)?,
            group_size: int(1)?,
            n_correct: int(2)?,
            n_flagged: int(3)?,
            trigger_rate: num(4)?,
            synth_calls_cum: int(5)?,
            synth_seconds_cum: num(6)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRate {
    pub first_step: usize,
    pub last_step: usize,
    pub mean_trigger_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerReport {
    pub windows: Vec<WindowRate>,
    pub synth_calls: usize,
    pub synth_seconds: f64,
}

/// Mean trigger rate per non-overlapping window of `window` rows (the last
/// window may be shorter) and total simulated synthesis time.
pub fn trigger_rate_report(rows: &[RouterStepRow], window: usize, cost_seconds: f64) -> Result<TriggerReport> {
    if window == 0 {
        return Err(Error::validation("window", "must be positive"));
    }
    if rows.is_empty() {
        return Err(Error::TooFew { what: "telemetry rows", needed: 1, got: 0 });
    }
    let windows = rows
        .chunks(window)
        .map(|c| WindowRate {
            first_step: c[0].step,
            last_step: c[c.len() - 1].step,
            mean_trigger_rate: c.iter().map(|r| r.trigger_rate).sum::<f64>() / c.len() as f64,
        })
        .collect();
    let synth_calls = rows.last().map_or(0, |r| r.synth_calls_cum);
    Ok(TriggerReport { windows, synth_calls, synth_seconds: synth_calls as f64 * cost_seconds })
}

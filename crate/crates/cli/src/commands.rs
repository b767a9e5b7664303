//! The pipeline subcommands. Each reads and writes files under `cfg.out` and
//! returns the text it prints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use qorseek_core::design_space::KernelDescriptor;
use qorseek_core::dse::{run_dse, CorpusRecord, DseCorpus};
use qorseek_core::grpo::{grpo_csv, run_training, SimPolicy};
use qorseek_core::pareto::{qd_sample, NormalizationBounds};
use qorseek_core::reward_model::{
    accuracy_csv, build_pairs, pair_indices, train, RewardModel, Tier, TierAccuracy,
};
use qorseek_core::rng::{derive_seed, stable_hash};
use qorseek_core::QorVector;
use serde::{Deserialize, Serialize};

use crate::config::{load_kernels, RunConfig};
use crate::error::{CliError, Result};
use crate::io::*;
use crate::report::CostReport;

/// Stream tags separating the seeds of different commands.
const SEED_DSE: u64 = 1;
const SEED_RM_INIT: u64 = 2;
const SEED_RM_TRAIN: u64 = 3;
const SEED_GRPO: u64 = 4;

pub const DSE_SUMMARY_HEADER: &str = "kernel,evaluated,functional,front_size,qd_near,final_hv";

/// Per-kernel seed, independent of which other kernels are in the run.
fn kernel_seed(seed: u64, name: &str) -> u64 {
    derive_seed(seed, &[SEED_DSE, stable_hash(name.as_bytes())])
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn cmd_dse(cfg: &RunConfig) -> Result<String> {
    let kernels = load_kernels(&cfg.kernels)?;
    let backend = cfg.oracle.backend();
    let mut corpus_text = String::new();
    let mut summary = format!("{DSE_SUMMARY_HEADER}\n");
    let mut printed = String::new();

    for k in &kernels {
        let corpus = run_dse(k, &backend, cfg.dse.budget, kernel_seed(cfg.seed, &k.name), &cfg.dse)?;
        for r in corpus.records() {
            corpus_text.push_str(&serde_json::to_string(&r)?);
            corpus_text.push('\n');
        }

        let mut hv = String::from("step,ehvi,hv\n");
        for row in &corpus.log {
            let ehvi = row.ehvi.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(hv, "{},{},{}", row.step, ehvi, row.hv);
        }
        write_output(&artifact(&cfg.out, HV_DIR).join(format!("{}.csv", k.name)), &hv)?;

        let functional: Vec<QorVector> = corpus.entries.iter().filter(|e| e.functional).map(|e| e.qor).collect();
        let (front, near) = match NormalizationBounds::from_qors(&functional) {
            Some(b) => {
                let sel = qd_sample(&functional, &cfg.qd, &b);
                (sel.front.len(), sel.near.len())
            }
            None => (0, 0),
        };
        let final_hv = corpus.log.last().map_or(0.0, |r| r.hv);
        let _ = writeln!(summary, "{},{},{},{},{},{}", k.name, corpus.entries.len(), functional.len(), front, near, final_hv);
        let _ = writeln!(
            printed,
            "{}: {} evaluated, {} functional, front size {}, qd sample size {} ({} near-front), hv {:.6e}",
            k.name,
            corpus.entries.len(),
            functional.len(),
            front,
            front + near,
            near,
            final_hv
        );
    }
    write_output(&artifact(&cfg.out, CORPUS_FILE), &corpus_text)?;
    write_output(&artifact(&cfg.out, DSE_SUMMARY_FILE), &summary)?;
    let _ = writeln!(printed, "wrote {} kernels to {}", kernels.len(), cfg.out.display());
    Ok(printed)
}

/// Load the corpus file and rebuild one corpus per kernel, in kernel-name order.
pub fn load_corpora(cfg: &RunConfig) -> Result<Vec<DseCorpus>> {
    let path = artifact(&cfg.out, CORPUS_FILE);
    let text = read_input(&path)?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: CorpusRecord = serde_json::from_str(line).map_err(|e| qorseek_core::Error::Parse {
            line: n + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(CliError::missing(&path, "corpus is empty"));
    }
    let kernels = load_kernels(&cfg.kernels)?;
    let by_name: BTreeMap<&str, &Arc<KernelDescriptor>> = kernels.iter().map(|k| (k.name.as_str(), k)).collect();
    let names: std::collections::BTreeSet<&str> = records.iter().map(|r| r.kernel.as_str()).collect();
    names
        .into_iter()
        .map(|name| {
            let k = by_name.get(name).ok_or_else(|| {
                CliError::missing(&path, format!("corpus kernel `{name}` is not among the configured kernel files"))
            })?;
            Ok(DseCorpus::from_records(k, &records)?)
        })
        .collect()
}

/// One line of `pairs.jsonl`; `i` and `j` are corpus steps of the same kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub kernel: String,
    pub i: usize,
    pub j: usize,
    pub tier: Tier,
    pub label: f64,
}

pub fn cmd_pairs(cfg: &RunConfig) -> Result<String> {
    let corpora = load_corpora(cfg)?;
    let mut text = String::new();
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for c in &corpora {
        let functional: Vec<_> = c.entries.iter().filter(|e| e.functional).collect();
        let qors: Vec<QorVector> = functional.iter().map(|e| e.qor).collect();
        for (i, j, tier) in pair_indices(&qors, &cfg.loss) {
            let rec = PairRecord { kernel: c.kernel.name.clone(), i: functional[i].step, j: functional[j].step, tier, label: tier.label() };
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
            let name = match tier {
                Tier::Dominance => "dominance",
                Tier::Latency => "latency",
                Tier::Tie => "tie",
            };
            *counts.entry(name).or_default() += 1;
        }
    }
    write_output(&artifact(&cfg.out, PAIRS_FILE), &text)?;
    let total: usize = counts.values().sum();
    let mut out = format!("{total} pairs over {} kernels", corpora.len());
    for (tier, n) in &counts {
        let _ = write!(out, ", {tier} {n}");
    }
    out.push('\n');
    Ok(out)
}

pub struct TrainRmOutput {
    pub model: RewardModel,
    pub final_test: Option<TierAccuracy>,
    pub summary: String,
}

/// The untrained model `train-rm` starts from.
pub fn initial_reward_model(cfg: &RunConfig) -> Result<RewardModel> {
    Ok(RewardModel::init(&cfg.model, derive_seed(cfg.seed, &[SEED_RM_INIT]))?)
}

pub fn train_reward_model(cfg: &RunConfig) -> Result<TrainRmOutput> {
    let corpora = load_corpora(cfg)?;
    let mut model = initial_reward_model(cfg)?;
    let pairs: Vec<_> = corpora.iter().flat_map(|c| build_pairs(c, &model.tokenizer, &cfg.loss)).collect();
    if pairs.is_empty() {
        return Err(CliError::missing(artifact(&cfg.out, CORPUS_FILE), "corpus yields no training pairs"));
    }
    let outcome = train(model.params.clone(), &pairs, &cfg.loss, &cfg.optimizer, derive_seed(cfg.seed, &[SEED_RM_TRAIN]))?;
    model.params = outcome.params.clone();
    write_output(&artifact(&cfg.out, RM_FILE), &model.to_json()?)?;
    write_output(&artifact(&cfg.out, RM_ACCURACY_FILE), &accuracy_csv(&outcome.log))?;

    let final_test = outcome.final_test();
    let mut summary = format!(
        "{} training pairs, {} test pairs, held-out kernels: {}\n",
        outcome.n_train,
        outcome.n_test,
        outcome.test_kernels.iter().cloned().collect::<Vec<_>>().join(" ")
    );
    let t = final_test.unwrap_or_default();
    let _ = writeln!(
        summary,
        "final test accuracy after {} epochs: dominance {}, latency {}",
        outcome.log.len(),
        fmt_acc(t.dominance),
        fmt_acc(t.latency)
    );
    Ok(TrainRmOutput { model, final_test, summary })
}

pub fn cmd_train_rm(cfg: &RunConfig) -> Result<String> {
    Ok(train_reward_model(cfg)?.summary)
}

/// Read the trained reward-model checkpoint.
pub fn load_reward_model(out: &Path) -> Result<RewardModel> {
    let path = artifact(out, RM_FILE);
    let text = read_input(&path)?;
    RewardModel::from_json(&text).map_err(|e| CliError::invalid(format!("checkpoint {}", path.display()), e.to_string()))
}

pub fn cmd_grpo(cfg: &RunConfig) -> Result<String> {
    let model = load_reward_model(&cfg.out)?;
    let kernels = load_kernels(&cfg.kernels)?;
    let backend = cfg.oracle.backend();
    let run = run_training(
        &kernels,
        SimPolicy::uniform(&kernels),
        model,
        &backend,
        &cfg.training(),
        derive_seed(cfg.seed, &[SEED_GRPO]),
    )?;

    write_output(&artifact(&cfg.out, GRPO_TELEMETRY_FILE), &grpo_csv(&run.rows))?;
    write_output(&artifact(&cfg.out, ROUTER_TELEMETRY_FILE), &run.router.to_csv())?;
    write_output(&artifact(&cfg.out, POLICY_FILE), &run.policy.to_json()?)?;
    write_output(&artifact(&cfg.out, RM_ONLINE_FILE), &run.model.to_json()?)?;
    write_output(&artifact(&cfg.out, REPLAY_BUFFER_FILE), &run.buffer.to_jsonl()?)?;
    let cost = CostReport { candidates: run.candidates, synth_calls: run.router.synth_calls(), cost_seconds: cfg.oracle.cost_seconds };
    let cost_text = cost.render();
    write_output(&artifact(&cfg.out, COST_REPORT_FILE), &cost_text)?;

    Ok(format!(
        "{} GRPO steps over {} kernels, {} online reward-model updates, {} designs in the replay buffer\n{cost_text}",
        run.rows.len(),
        kernels.len(),
        run.online_updates,
        run.buffer.len()
    ))
}

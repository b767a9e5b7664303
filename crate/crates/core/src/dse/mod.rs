//! Multi-objective Bayesian design-space exploration with Monte-Carlo EHVI.
//!
//! Hypervolume is measured in raw QoR space against a reference point at
//! 1.1x the per-metric maximum over evaluated designs (at least `max + 1`, so
//! metrics that are zero everywhere keep a unit extent). The reference point
//! only moves outward as evaluations accumulate, which keeps the logged
//! hypervolume non-decreasing.

mod gp;

use std::collections::HashSet;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use gp::{fit_surrogate, fit_surrogate_with, Gp, SurrogateModel, DEFAULT_JITTER, DEFAULT_LENGTH_SCALE};

use crate::design_space::{enumerate_space, render_design, sample_config, DesignPoint, DesignSpace, KernelDescriptor, PragmaConfig};
use crate::error::{Error, Result};
use crate::oracle::{QorVector, SynthesisBackend};
use crate::pareto::{hypervolume_exact, hypervolume_improvement, pareto_front_qor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DseConfig {
    pub budget: usize,
    pub n_init: usize,
    pub pool_size: usize,
    pub ehvi_samples: usize,
    pub length_scale: f64,
    pub jitter: f64,
}

impl Default for DseConfig {
    fn default() -> Self {
        DseConfig {
            budget: 40,
            n_init: 4,
            pool_size: 256,
            ehvi_samples: 64,
            length_scale: DEFAULT_LENGTH_SCALE,
            jitter: DEFAULT_JITTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub design: DesignPoint,
    pub qor: QorVector,
    pub functional: bool,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseLogRow {
    pub step: usize,
    /// `None` for the random initial evaluations.
    pub ehvi: Option<f64>,
    pub hv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DseCorpus {
    pub kernel: Arc<KernelDescriptor>,
    pub entries: Vec<CorpusEntry>,
    pub log: Vec<DseLogRow>,
}

/// One line of the JSON-Lines corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub kernel: String,
    pub config: PragmaConfig,
    pub qor: QorVector,
    pub functional: bool,
    pub step: usize,
}

impl DseCorpus {
    pub fn records(&self) -> Vec<CorpusRecord> {
        self.entries
            .iter()
            .map(|e| CorpusRecord {
                kernel: self.kernel.name.clone(),
                config: e.design.config.clone(),
                qor: e.qor,
                functional: e.functional,
                step: e.step,
            })
            .collect()
    }

    /// Rebuild a corpus for one kernel from records (other kernels' records are skipped).
    pub fn from_records(kernel: &Arc<KernelDescriptor>, records: &[CorpusRecord]) -> Result<Self> {
        let entries = records
            .iter()
            .filter(|r| r.kernel == kernel.name)
            .map(|r| {
                Ok(CorpusEntry {
                    design: render_design(kernel, &r.config)?,
                    qor: r.qor,
                    functional: r.functional,
                    step: r.step,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DseCorpus { kernel: Arc::clone(kernel), entries, log: Vec::new() })
    }

    pub fn qors(&self) -> Vec<QorVector> {
        self.entries.iter().map(|e| e.qor).collect()
    }
}

/// Reference point: `max(1.1 * max_k, max_k + 1)` per metric.
pub fn reference_point<'a>(qors: impl IntoIterator<Item = &'a QorVector>) -> Vec<f64> {
    let mut hi = [0.0f64; 5];
    for q in qors {
        for (k, v) in q.to_array().into_iter().enumerate() {
            hi[k] = hi[k].max(v);
        }
    }
    hi.iter().map(|&m| (1.1 * m).max(m + 1.0)).collect()
}

/// Exact hypervolume of the non-dominated subset of `qors` against `reference`.
pub fn front_hypervolume(qors: &[QorVector], reference: &[f64]) -> f64 {
    let front: Vec<Vec<f64>> = pareto_front_qor(qors)
        .into_iter()
        .map(|i| qors[i].to_array().to_vec())
        .collect();
    hypervolume_exact(&front, reference).expect("reference bounds every evaluated design")
}

/// Monte-Carlo expected hypervolume improvement of a candidate encoding.
/// Objective draws are independent per metric in `log1p` space and mapped back
/// to raw QoR before measuring the improvement.
pub fn ehvi(
    candidate: &[f64],
    model: &SurrogateModel,
    front: &[Vec<f64>],
    reference: &[f64],
    n_samples: usize,
    seed: u64,
) -> f64 {
    if n_samples == 0 {
        return 0.0;
    }
    let post = model.predict(candidate);
    let mut rng = rng::rng_from(seed);
    let mut total = 0.0;
    let mut y = vec![0.0; 5];
    for _ in 0..n_samples {
        for (k, (mean, var)) in post.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            y[k] = (mean + var.sqrt() * z).exp_m1().max(0.0);
        }
        total += hypervolume_improvement(front, &y, reference);
    }
    total / n_samples as f64
}

/// Distinct random configs drawn in a fixed seed order, skipping `exclude`.
struct ConfigSampler<'a> {
    kernel: &'a KernelDescriptor,
    seed: u64,
    counter: u64,
    /// Full enumeration when the space is small enough to list.
    all: Option<Vec<PragmaConfig>>,
    size: u128,
}

impl<'a> ConfigSampler<'a> {
    fn new(kernel: &'a KernelDescriptor, seed: u64) -> Self {
        let size = DesignSpace::new(kernel).size();
        let all = if size <= 20_000 { enumerate_space(kernel).ok() } else { None };
        ConfigSampler { kernel, seed, counter: 0, all, size }
    }

    fn remaining(&self, evaluated: &HashSet<PragmaConfig>) -> u128 {
        self.size - evaluated.len() as u128
    }

    /// Up to `n` distinct configs not in `exclude`.
    fn draw(&mut self, n: usize, exclude: &HashSet<PragmaConfig>) -> Vec<PragmaConfig> {
        let remaining = self.size.saturating_sub(exclude.len() as u128);
        let want = (n as u128).min(remaining) as usize;
        if let Some(all) = &self.all {
            if remaining <= n as u128 {
                return all.iter().filter(|c| !exclude.contains(c)).cloned().collect();
            }
        }
        let mut out: Vec<PragmaConfig> = Vec::with_capacity(want);
        let mut seen = HashSet::new();
        let mut misses = 0;
        while out.len() < want && misses < 50 * n.max(1) {
            let c = sample_config(self.kernel, rng::derive_seed(self.seed, &[self.counter]));
            self.counter += 1;
            if exclude.contains(&c) || !seen.insert(c.clone()) {
                misses += 1;
                continue;
            }
            out.push(c);
        }
        if out.len() < want {
            if let Some(all) = &self.all {
                out.extend(
                    all.iter()
                        .filter(|c| !exclude.contains(c) && !seen.contains(*c))
                        .take(want - out.len())
                        .cloned(),
                );
            }
        }
        out
    }
}

struct Explorer<'a> {
    kernel: Arc<KernelDescriptor>,
    backend: &'a dyn SynthesisBackend,
    corpus: DseCorpus,
    evaluated: HashSet<PragmaConfig>,
}

impl Explorer<'_> {
    fn evaluate(&mut self, config: PragmaConfig, ehvi: Option<f64>) -> Result<()> {
        let design = render_design(&self.kernel, &config)?;
        let verdict = self.backend.evaluate(&design);
        let qor = verdict
            .qor
            .ok_or_else(|| Error::validation("dse", "backend failed to compile a legal configuration"))?;
        let step = self.corpus.entries.len();
        self.evaluated.insert(config);
        self.corpus.entries.push(CorpusEntry { design, qor, functional: verdict.functional, step });
        let qors = self.corpus.qors();
        let hv = front_hypervolume(&qors, &reference_point(&qors));
        self.corpus.log.push(DseLogRow { step, ehvi, hv });
        Ok(())
    }
}

/// Bayesian DSE: `n_init` seeded random configs, then one EHVI-maximizing
/// evaluation per step until the budget or the space is exhausted.
pub fn run_dse(
    kernel: &Arc<KernelDescriptor>,
    backend: &dyn SynthesisBackend,
    budget_k: usize,
    seed: u64,
    cfg: &DseConfig,
) -> Result<DseCorpus> {
    explore(kernel, backend, budget_k, seed, cfg, true)
}

/// Baseline: the same initial configs, then uniformly random evaluations.
pub fn run_random_search(
    kernel: &Arc<KernelDescriptor>,
    backend: &dyn SynthesisBackend,
    budget_k: usize,
    seed: u64,
    cfg: &DseConfig,
) -> Result<DseCorpus> {
    explore(kernel, backend, budget_k, seed, cfg, false)
}

fn explore(
    kernel: &Arc<KernelDescriptor>,
    backend: &dyn SynthesisBackend,
    budget_k: usize,
    seed: u64,
    cfg: &DseConfig,
    bayesian: bool,
) -> Result<DseCorpus> {
    if budget_k < cfg.n_init.max(2) {
        return Err(Error::TooFew { what: "DSE budget", needed: cfg.n_init.max(2), got: budget_k });
    }
    let space = DesignSpace::new(kernel);
    let mut ex = Explorer {
        kernel: Arc::clone(kernel),
        backend,
        corpus: DseCorpus { kernel: Arc::clone(kernel), entries: Vec::new(), log: Vec::new() },
        evaluated: HashSet::new(),
    };
    let mut init_sampler = ConfigSampler::new(kernel, rng::derive_seed(seed, &[0]));
    for c in init_sampler.draw(cfg.n_init, &HashSet::new()) {
        ex.evaluate(c, None)?;
    }
    let mut pool_sampler = ConfigSampler::new(kernel, rng::derive_seed(seed, &[1]));
    while ex.corpus.entries.len() < budget_k && pool_sampler.remaining(&ex.evaluated) > 0 {
        let step = ex.corpus.entries.len() as u64;
        if !bayesian {
            let pick = pool_sampler.draw(1, &ex.evaluated);
            let Some(c) = pick.into_iter().next() else { break };
            ex.evaluate(c, None)?;
            continue;
        }
        let pool = pool_sampler.draw(cfg.pool_size, &ex.evaluated);
        if pool.is_empty() {
            break;
        }
        let train: Vec<(Vec<f64>, QorVector)> = ex
            .corpus
            .entries
            .iter()
            .map(|e| (space.encode(&e.design.config).expect("evaluated configs are legal"), e.qor))
            .collect();
        let model = fit_surrogate_with(&train, cfg.length_scale, cfg.jitter)?;
        let qors = ex.corpus.qors();
        let reference = reference_point(&qors);
        let front: Vec<Vec<f64>> = pareto_front_qor(&qors)
            .into_iter()
            .map(|i| qors[i].to_array().to_vec())
            .collect();
        // Common random numbers across the pool keep the argmax stable.
        let draw_seed = rng::derive_seed(seed, &[2, step]);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, c) in pool.iter().enumerate() {
            let x = space.encode(c).expect("pool configs are legal");
            let v = ehvi(&x, &model, &front, &reference, cfg.ehvi_samples, draw_seed);
            if v > best.1 {
                best = (i, v);
            }
        }
        let chosen = pool.into_iter().nth(best.0).expect("index from pool");
        ex.evaluate(chosen, Some(best.1))?;
    }
    Ok(ex.corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::parse_kernel_descriptor;
    use crate::oracle::AnalyticBackend;

    fn kernel() -> Arc<KernelDescriptor> {
        Arc::new(
            parse_kernel_descriptor(
                "kernel fir\narray c words=16 bits=16\narray x words=16 bits=16\nloop tap trip=16 add=1 mul=1 arrays=c,x\n",
            )
            .unwrap(),
        )
    }

    #[test]
    fn budget_four_is_initial_design_only() {
        let k = kernel();
        let c = run_dse(&k, &AnalyticBackend::default(), 4, 3, &DseConfig::default()).unwrap();
        assert_eq!(c.entries.len(), 4);
        assert!(c.log.iter().all(|r| r.ehvi.is_none()));
    }

    #[test]
    fn log_is_monotone_and_configs_unique() {
        let k = kernel();
        let c = run_dse(&k, &AnalyticBackend::default(), 20, 11, &DseConfig::default()).unwrap();
        assert_eq!(c.entries.len(), 20);
        let uniq: HashSet<_> = c.entries.iter().map(|e| e.design.config.clone()).collect();
        assert_eq!(uniq.len(), 20);
        for w in c.log.windows(2) {
            assert!(w[1].hv >= w[0].hv, "{w:?}");
        }
        assert!(c.log[4..].iter().all(|r| r.ehvi.is_some_and(|v| v >= 0.0)));
    }

    #[test]
    fn same_seed_same_corpus() {
        let k = kernel();
        let a = run_dse(&k, &AnalyticBackend::default(), 12, 5, &DseConfig::default()).unwrap();
        let b = run_dse(&k, &AnalyticBackend::default(), 12, 5, &DseConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ehvi_is_seeded_and_nonnegative() {
        let k = kernel();
        let c = run_dse(&k, &AnalyticBackend::default(), 8, 1, &DseConfig::default()).unwrap();
        let space = DesignSpace::new(&k);
        let train: Vec<_> = c.entries.iter().map(|e| (space.encode(&e.design.config).unwrap(), e.qor)).collect();
        let m = fit_surrogate(&train).unwrap();
        let qors = c.qors();
        let r = reference_point(&qors);
        let front: Vec<Vec<f64>> = pareto_front_qor(&qors).into_iter().map(|i| qors[i].to_array().to_vec()).collect();
        for cfg in enumerate_space(&k).unwrap().iter().take(40) {
            let x = space.encode(cfg).unwrap();
            let a = ehvi(&x, &m, &front, &r, 64, 9);
            assert!(a >= 0.0);
            assert_eq!(a, ehvi(&x, &m, &front, &r, 64, 9));
        }
    }
}

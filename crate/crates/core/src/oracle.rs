//! Deterministic analytic stand-in for HLS synthesis.
//!
//! Cost model, per loop `l` with trip `T`, unroll `u` and accessed arrays `A(l)`:
//!
//! ```text
//! e_l      = min(u, min_{a in A(l)} 2 * banks(a))        (2 ports per bank)
//! inner    = pipelined ? ceil(T/e)*II + 3 : ceil(T/e)*(1 + add + mul)
//! outer    = ceil(T/e) * sum(children)
//! latency  = sum(roots) + 10
//! dsp      = sum_l mul*e_l
//! lut      = 200 + sum_l (32*add + 16*mul)*e_l + (pipelined ? 64*e_l : 0)
//! ff       = 100 + lut/2
//! bram     = sum_a (complete ? 0 : banks * ceil(words*bits / (banks*18432)))
//! ```

use serde::{Deserialize, Serialize};

use crate::design_space::{validate_config, DesignPoint, KernelDescriptor, PartitionKind, PragmaConfig};
use crate::rng::stable_hash;

pub const PIPELINE_DEPTH: u64 = 3;
pub const PORTS_PER_BANK: u64 = 2;
pub const CONTROL_OVERHEAD: u64 = 10;
pub const BRAM_BITS: u64 = 18_432;
pub const HAZARD_SALT: &str = "qorseek-hazard-v1";

/// Simulated seconds per real synthesis call.
pub const DEFAULT_COST_SECONDS: f64 = 180.0;

/// Five-metric hardware cost; every metric is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct QorVector {
    pub latency_cycles: u64,
    pub lut: u64,
    pub dsp: u64,
    pub bram: u64,
    pub ff: u64,
}

impl QorVector {
    pub const METRICS: [&'static str; 5] = ["latency", "lut", "dsp", "bram", "ff"];

    pub fn new(latency_cycles: u64, lut: u64, dsp: u64, bram: u64, ff: u64) -> Self {
        QorVector { latency_cycles, lut, dsp, bram, ff }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.latency_cycles as f64,
            self.lut as f64,
            self.dsp as f64,
            self.bram as f64,
            self.ff as f64,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        let c = |x: f64| x.max(0.0).round() as u64;
        QorVector::new(c(v[0]), c(v[1]), c(v[2]), c(v[3]), c(v[4]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisVerdict {
    pub compiled: bool,
    pub functional: bool,
    pub qor: Option<QorVector>,
}

/// A synthesis tool. `evaluate` must be deterministic for the analytic backend.
pub trait SynthesisBackend: Send + Sync {
    fn evaluate(&self, design: &DesignPoint) -> SynthesisVerdict;

    /// Simulated wall-clock seconds charged per call.
    fn cost_seconds(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticBackend {
    pub cost_seconds: f64,
}

impl Default for AnalyticBackend {
    fn default() -> Self {
        AnalyticBackend { cost_seconds: DEFAULT_COST_SECONDS }
    }
}

impl SynthesisBackend for AnalyticBackend {
    fn evaluate(&self, design: &DesignPoint) -> SynthesisVerdict {
        let legal = validate_config(&design.kernel, &design.config).is_ok();
        let compiled = legal && !design.dynamic_alloc_flag;
        if !compiled {
            return SynthesisVerdict { compiled: false, functional: false, qor: None };
        }
        SynthesisVerdict {
            compiled,
            functional: !is_hazard(&design.kernel, &design.config),
            qor: Some(analytic_qor(&design.kernel, &design.config)),
        }
    }

    fn cost_seconds(&self) -> f64 {
        self.cost_seconds
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn banks(kernel: &KernelDescriptor, config: &PragmaConfig, array_idx: usize) -> u64 {
    let p = config.arrays[array_idx];
    match p.kind {
        PartitionKind::None => 1,
        PartitionKind::Complete => kernel.arrays[array_idx].num_words,
        PartitionKind::Cyclic | PartitionKind::Block => p.factor,
    }
}

/// Effective parallelism of each loop after the memory-port cap.
pub fn effective_parallelism(kernel: &KernelDescriptor, config: &PragmaConfig) -> Vec<u64> {
    kernel
        .loops
        .iter()
        .zip(&config.loops)
        .map(|(l, p)| {
            l.arrays
                .iter()
                .filter_map(|a| kernel.array_index(a))
                .map(|ai| PORTS_PER_BANK * banks(kernel, config, ai))
                .fold(p.unroll, u64::min)
        })
        .collect()
}

fn nest_cycles(kernel: &KernelDescriptor, config: &PragmaConfig, e: &[u64], idx: usize) -> u64 {
    let l = &kernel.loops[idx];
    let iters = ceil_div(l.trip_count, e[idx]);
    let children = kernel.children(idx);
    if children.is_empty() {
        match config.loops[idx].pipeline_ii {
            Some(ii) => iters * ii as u64 + PIPELINE_DEPTH,
            None => iters * (1 + l.ops_add + l.ops_mul),
        }
    } else {
        iters * children.iter().map(|&c| nest_cycles(kernel, config, e, c)).sum::<u64>()
    }
}

/// QoR of a legal configuration under the fixed analytic cost model.
pub fn analytic_qor(kernel: &KernelDescriptor, config: &PragmaConfig) -> QorVector {
    let e = effective_parallelism(kernel, config);
    let latency = kernel
        .roots()
        .into_iter()
        .map(|r| nest_cycles(kernel, config, &e, r))
        .sum::<u64>()
        + CONTROL_OVERHEAD;
    let mut dsp = 0;
    let mut lut = 200;
    for ((l, p), &el) in kernel.loops.iter().zip(&config.loops).zip(&e) {
        dsp += l.ops_mul * el;
        lut += (l.ops_add * 32 + l.ops_mul * 16) * el;
        if p.pipeline_ii.is_some() {
            lut += 64 * el;
        }
    }
    let ff = 100 + lut / 2;
    let bram = kernel
        .arrays
        .iter()
        .enumerate()
        .map(|(i, a)| match config.arrays[i].kind {
            PartitionKind::Complete => 0,
            _ => {
                let b = banks(kernel, config, i);
                b * ceil_div(a.num_words * a.word_bits as u64, b * BRAM_BITS)
            }
        })
        .sum();
    QorVector { latency_cycles: latency, lut, dsp, bram, ff }
}

/// Whether `(kernel, config)` falls in the kernel's functional-hazard set: a
/// salted hash of the kernel name and canonical config, mapped to `[0, 1)`,
/// below `hazard_fraction`.
pub fn is_hazard(kernel: &KernelDescriptor, config: &PragmaConfig) -> bool {
    if kernel.hazard_fraction <= 0.0 {
        return false;
    }
    let key = format!(
        "{HAZARD_SALT}|{}|{}",
        kernel.name,
        serde_json::to_string(config).expect("config serializes")
    );
    let unit = (stable_hash(key.as_bytes()) >> 11) as f64 / (1u64 << 53) as f64;
    unit < kernel.hazard_fraction
}

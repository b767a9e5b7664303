//! Kernels, their pragma configuration spaces, and sampling/validation over
//! those spaces.
//!
//! A kernel is described by its loop nest and array declarations. Three pragma
//! families are modeled: `UNROLL` on every loop, `PIPELINE` on innermost loops,
//! and `ARRAY_PARTITION` on every array.

mod descriptor;
mod generate;
mod render;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use descriptor::{parse_kernel_descriptor, serialize_kernel_descriptor};
pub use generate::{generate_kernel, GENERATED_HAZARD};
pub use render::render_design;

/// Default cap for [`enumerate_space`].
pub const DEFAULT_SPACE_CAP: u128 = 1_000_000;

/// Initiation intervals offered for pipelined loops.
pub const II_CHOICES: [u32; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopInfo {
    pub id: String,
    pub trip_count: u64,
    pub parent: Option<String>,
    pub ops_add: u64,
    pub ops_mul: u64,
    /// Sorted, deduplicated names of the arrays this loop body reads or writes.
    pub arrays: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub num_words: u64,
    pub word_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDescriptor {
    pub name: String,
    pub loops: Vec<LoopInfo>,
    pub arrays: Vec<ArrayInfo>,
    /// Fraction of configurations the analytic oracle marks functionally failing.
    pub hazard_fraction: f64,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl KernelDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !is_identifier(&self.name) {
            return Err(Error::validation("kernel name", format!("`{}` is not an identifier", self.name)));
        }
        if !(0.0..=1.0).contains(&self.hazard_fraction) {
            return Err(Error::validation("hazard", format!("{} outside [0, 1]", self.hazard_fraction)));
        }
        let mut array_names = HashSet::new();
        for a in &self.arrays {
            if !is_identifier(&a.name) {
                return Err(Error::validation("array name", format!("`{}` is not an identifier", a.name)));
            }
            if !array_names.insert(a.name.as_str()) {
                return Err(Error::validation("array name", format!("`{}` declared twice", a.name)));
            }
            if a.num_words == 0 {
                return Err(Error::validation(format!("array {}.words", a.name), "must be >= 1"));
            }
            if ![8, 16, 32, 64].contains(&a.word_bits) {
                return Err(Error::validation(
                    format!("array {}.bits", a.name),
                    format!("{} not in {{8,16,32,64}}", a.word_bits),
                ));
            }
        }
        if self.loops.is_empty() {
            return Err(Error::validation("loops", "kernel declares no loops"));
        }
        let mut ids = HashMap::new();
        for (i, l) in self.loops.iter().enumerate() {
            if !is_identifier(&l.id) {
                return Err(Error::validation("loop id", format!("`{}` is not an identifier", l.id)));
            }
            if ids.insert(l.id.as_str(), i).is_some() {
                return Err(Error::validation("loop id", format!("`{}` declared twice", l.id)));
            }
            if l.trip_count == 0 {
                return Err(Error::validation(format!("loop {}.trip", l.id), "must be >= 1"));
            }
            for a in &l.arrays {
                if !array_names.contains(a.as_str()) {
                    return Err(Error::validation(
                        format!("loop {}.arrays", l.id),
                        format!("array `{a}` is not declared"),
                    ));
                }
            }
        }
        for l in &self.loops {
            // Walk the parent chain; a chain longer than the loop count is a cycle.
            let mut cur = l.parent.as_deref();
            let mut hops = 0;
            while let Some(p) = cur {
                let Some(&pi) = ids.get(p) else {
                    return Err(Error::validation(
                        format!("loop {}.parent", l.id),
                        format!("loop `{p}` is not declared"),
                    ));
                };
                hops += 1;
                if hops > self.loops.len() {
                    return Err(Error::validation(format!("loop {}.parent", l.id), "parent chain is cyclic"));
                }
                cur = self.loops[pi].parent.as_deref();
            }
        }
        Ok(())
    }

    pub fn loop_index(&self, id: &str) -> Option<usize> {
        self.loops.iter().position(|l| l.id == id)
    }

    pub fn array_index(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    pub fn parent_index(&self, loop_idx: usize) -> Option<usize> {
        self.loops[loop_idx].parent.as_deref().and_then(|p| self.loop_index(p))
    }

    /// Indices of the direct children of `loop_idx`, in declaration order.
    pub fn children(&self, loop_idx: usize) -> Vec<usize> {
        (0..self.loops.len())
            .filter(|&c| self.parent_index(c) == Some(loop_idx))
            .collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.loops.len())
            .filter(|&i| self.loops[i].parent.is_none())
            .collect()
    }

    pub fn is_innermost(&self, loop_idx: usize) -> bool {
        !self.loops.iter().any(|l| l.parent.as_deref() == Some(&self.loops[loop_idx].id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    None,
    Cyclic,
    Block,
    Complete,
}

impl PartitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionKind::None => "none",
            PartitionKind::Cyclic => "cyclic",
            PartitionKind::Block => "block",
            PartitionKind::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LoopPragma {
    pub unroll: u64,
    /// `Some(ii)` when the loop is pipelined.
    pub pipeline_ii: Option<u32>,
}

impl Default for LoopPragma {
    fn default() -> Self {
        LoopPragma { unroll: 1, pipeline_ii: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArrayPragma {
    pub kind: PartitionKind,
    pub factor: u64,
}

impl Default for ArrayPragma {
    fn default() -> Self {
        ArrayPragma { kind: PartitionKind::None, factor: 1 }
    }
}

/// One pragma assignment; `loops` and `arrays` are parallel to the kernel's
/// declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PragmaConfig {
    pub loops: Vec<LoopPragma>,
    pub arrays: Vec<ArrayPragma>,
}

impl PragmaConfig {
    pub fn all_default(kernel: &KernelDescriptor) -> Self {
        PragmaConfig {
            loops: vec![LoopPragma::default(); kernel.loops.len()],
            arrays: vec![ArrayPragma::default(); kernel.arrays.len()],
        }
    }
}

/// Unroll factors: powers of two dividing the trip count, plus the trip count.
pub fn unroll_choices(trip_count: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut f = 1;
    while f <= trip_count {
        if trip_count.is_multiple_of(f) {
            out.push(f);
        }
        f *= 2;
    }
    if out.last() != Some(&trip_count) {
        out.push(trip_count);
    }
    out
}

/// Partition choices ordered by increasing bank count: none, then cyclic and
/// block interleaved by factor, then complete. Cyclic/block factors are the
/// powers of two strictly between 1 and the word count that divide it; a
/// factor equal to the word count is the complete partition.
pub fn partition_choices(num_words: u64) -> Vec<ArrayPragma> {
    let mut out = vec![ArrayPragma::default()];
    let mut f = 2;
    while f < num_words {
        if num_words.is_multiple_of(f) {
            out.push(ArrayPragma { kind: PartitionKind::Cyclic, factor: f });
            out.push(ArrayPragma { kind: PartitionKind::Block, factor: f });
        }
        f *= 2;
    }
    if num_words > 1 {
        out.push(ArrayPragma { kind: PartitionKind::Complete, factor: num_words });
    }
    out
}

pub fn pipeline_choices() -> Vec<Option<u32>> {
    std::iter::once(None).chain(II_CHOICES.iter().map(|&ii| Some(ii))).collect()
}

/// One independent pragma decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Dimension {
    Unroll { loop_idx: usize, choices: Vec<u64> },
    Pipeline { loop_idx: usize, choices: Vec<Option<u32>> },
    Partition { array_idx: usize, choices: Vec<ArrayPragma> },
}

impl Dimension {
    pub fn len(&self) -> usize {
        match self {
            Dimension::Unroll { choices, .. } => choices.len(),
            Dimension::Pipeline { choices, .. } => choices.len(),
            Dimension::Partition { choices, .. } => choices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Short stable label such as `unroll:L0`, used in policy checkpoints.
    pub fn label(&self, kernel: &KernelDescriptor) -> String {
        match self {
            Dimension::Unroll { loop_idx, .. } => format!("unroll:{}", kernel.loops[*loop_idx].id),
            Dimension::Pipeline { loop_idx, .. } => format!("pipeline:{}", kernel.loops[*loop_idx].id),
            Dimension::Partition { array_idx, .. } => format!("partition:{}", kernel.arrays[*array_idx].name),
        }
    }

    fn apply(&self, choice: usize, config: &mut PragmaConfig) {
        match self {
            Dimension::Unroll { loop_idx, choices } => config.loops[*loop_idx].unroll = choices[choice],
            Dimension::Pipeline { loop_idx, choices } => config.loops[*loop_idx].pipeline_ii = choices[choice],
            Dimension::Partition { array_idx, choices } => config.arrays[*array_idx] = choices[choice],
        }
    }

    fn index_in(&self, config: &PragmaConfig) -> Option<usize> {
        match self {
            Dimension::Unroll { loop_idx, choices } => {
                let v = config.loops.get(*loop_idx)?.unroll;
                choices.iter().position(|&c| c == v)
            }
            Dimension::Pipeline { loop_idx, choices } => {
                let v = config.loops.get(*loop_idx)?.pipeline_ii;
                choices.iter().position(|&c| c == v)
            }
            Dimension::Partition { array_idx, choices } => {
                choices.iter().position(|c| Some(c) == config.arrays.get(*array_idx))
            }
        }
    }
}

/// The factored pragma space of a kernel. Dimensions are ordered loop by loop
/// (unroll, then pipeline for innermost loops) followed by arrays; the last
/// dimension varies fastest in enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    pub dims: Vec<Dimension>,
    n_loops: usize,
    n_arrays: usize,
}

impl DesignSpace {
    pub fn new(kernel: &KernelDescriptor) -> Self {
        let mut dims = Vec::new();
        for (i, l) in kernel.loops.iter().enumerate() {
            dims.push(Dimension::Unroll { loop_idx: i, choices: unroll_choices(l.trip_count) });
            if kernel.is_innermost(i) {
                dims.push(Dimension::Pipeline { loop_idx: i, choices: pipeline_choices() });
            }
        }
        for (i, a) in kernel.arrays.iter().enumerate() {
            dims.push(Dimension::Partition { array_idx: i, choices: partition_choices(a.num_words) });
        }
        DesignSpace { dims, n_loops: kernel.loops.len(), n_arrays: kernel.arrays.len() }
    }

    pub fn choice_counts(&self) -> Vec<usize> {
        self.dims.iter().map(Dimension::len).collect()
    }

    /// Number of legal configurations (saturating).
    pub fn size(&self) -> u128 {
        self.dims
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.len() as u128))
    }

    pub fn config_from_indices(&self, indices: &[usize]) -> PragmaConfig {
        debug_assert_eq!(indices.len(), self.dims.len());
        let mut config = PragmaConfig {
            loops: vec![LoopPragma::default(); self.n_loops],
            arrays: vec![ArrayPragma::default(); self.n_arrays],
        };
        for (dim, &choice) in self.dims.iter().zip(indices) {
            dim.apply(choice, &mut config);
        }
        config
    }

    /// Per-dimension choice indices of a config, or `None` if it is not in the space.
    pub fn indices_of(&self, config: &PragmaConfig) -> Option<Vec<usize>> {
        if config.loops.len() != self.n_loops || config.arrays.len() != self.n_arrays {
            return None;
        }
        let indices = self
            .dims
            .iter()
            .map(|d| d.index_in(config))
            .collect::<Option<Vec<_>>>()?;
        // Pipelining is only offered on innermost loops.
        (self.config_from_indices(&indices) == *config).then_some(indices)
    }

    /// Map a config to its `[0,1]^D` surrogate encoding.
    pub fn encode(&self, config: &PragmaConfig) -> Option<Vec<f64>> {
        let indices = self.indices_of(config)?;
        Some(
            self.dims
                .iter()
                .zip(indices)
                .map(|(dim, idx)| match dim {
                    Dimension::Unroll { choices, .. } => {
                        let max = *choices.last().unwrap() as f64;
                        if max <= 1.0 {
                            0.0
                        } else {
                            (choices[idx] as f64).log2() / max.log2()
                        }
                    }
                    Dimension::Pipeline { choices, .. } => match choices[idx] {
                        None => 0.0,
                        Some(ii) => 1.0 - (ii as f64).log2() / 3.0,
                    },
                    Dimension::Partition { choices, .. } => {
                        if choices.len() <= 1 {
                            0.0
                        } else {
                            idx as f64 / (choices.len() - 1) as f64
                        }
                    }
                })
                .collect(),
        )
    }
}

/// Check that a config is legal for a kernel.
pub fn validate_config(kernel: &KernelDescriptor, config: &PragmaConfig) -> Result<()> {
    if config.loops.len() != kernel.loops.len() {
        return Err(Error::validation(
            "config.loops",
            format!("expected {} entries, got {}", kernel.loops.len(), config.loops.len()),
        ));
    }
    if config.arrays.len() != kernel.arrays.len() {
        return Err(Error::validation(
            "config.arrays",
            format!("expected {} entries, got {}", kernel.arrays.len(), config.arrays.len()),
        ));
    }
    for (i, (l, p)) in kernel.loops.iter().zip(&config.loops).enumerate() {
        if !unroll_choices(l.trip_count).contains(&p.unroll) {
            return Err(Error::validation(
                format!("loop {}.unroll", l.id),
                format!("{} is not a legal factor for trip count {}", p.unroll, l.trip_count),
            ));
        }
        if let Some(ii) = p.pipeline_ii {
            if !kernel.is_innermost(i) {
                return Err(Error::validation(format!("loop {}.pipeline", l.id), "only innermost loops are pipelined"));
            }
            if !II_CHOICES.contains(&ii) {
                return Err(Error::validation(format!("loop {}.ii", l.id), format!("{ii} not in {{1,2,4}}")));
            }
        }
    }
    for (a, p) in kernel.arrays.iter().zip(&config.arrays) {
        if !partition_choices(a.num_words).contains(p) {
            return Err(Error::validation(
                format!("array {}.partition", a.name),
                format!("{} factor={} is illegal for {} words", p.kind.as_str(), p.factor, a.num_words),
            ));
        }
    }
    Ok(())
}

/// All legal configs in lexicographic order of per-dimension choice indices.
pub fn enumerate_space(kernel: &KernelDescriptor) -> Result<Vec<PragmaConfig>> {
    enumerate_space_capped(kernel, DEFAULT_SPACE_CAP)
}

pub fn enumerate_space_capped(kernel: &KernelDescriptor, cap: u128) -> Result<Vec<PragmaConfig>> {
    let space = DesignSpace::new(kernel);
    let size = space.size();
    if size > cap {
        return Err(Error::SpaceOverflow { size, cap });
    }
    let counts = space.choice_counts();
    let mut indices = vec![0usize; counts.len()];
    let mut out = Vec::with_capacity(size as usize);
    loop {
        out.push(space.config_from_indices(&indices));
        // Mixed-radix increment, last dimension fastest.
        let mut d = counts.len();
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            indices[d] += 1;
            if indices[d] < counts[d] {
                break;
            }
            indices[d] = 0;
        }
    }
}

/// Draw a config uniformly per dimension. The pipeline decision is a fair coin
/// followed by a uniform II; partitioning draws a kind uniformly among the
/// kinds legal for the array and then a factor within that kind.
pub fn sample_config(kernel: &KernelDescriptor, seed: u64) -> PragmaConfig {
    let space = DesignSpace::new(kernel);
    let mut rng = rng::rng_from(seed);
    let mut config = PragmaConfig::all_default(kernel);
    for dim in &space.dims {
        let choice = match dim {
            Dimension::Unroll { choices, .. } => rng.random_range(0..choices.len()),
            Dimension::Pipeline { .. } => {
                if rng.random_bool(0.5) {
                    1 + rng.random_range(0..II_CHOICES.len())
                } else {
                    0
                }
            }
            Dimension::Partition { choices, .. } => {
                let mut kinds: Vec<PartitionKind> = choices.iter().map(|c| c.kind).collect();
                kinds.dedup();
                kinds.sort();
                kinds.dedup();
                let kind = kinds[rng.random_range(0..kinds.len())];
                let within: Vec<usize> = (0..choices.len()).filter(|&i| choices[i].kind == kind).collect();
                within[rng.random_range(0..within.len())]
            }
        };
        dim.apply(choice, &mut config);
    }
    config
}

/// A candidate design: a kernel, one pragma assignment, and its rendered code.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub kernel: Arc<KernelDescriptor>,
    pub config: PragmaConfig,
    pub rendered_code: String,
    pub dynamic_alloc_flag: bool,
}

impl DesignPoint {
    pub fn with_dynamic_alloc(mut self, flag: bool) -> Self {
        self.dynamic_alloc_flag = flag;
        self
    }
}

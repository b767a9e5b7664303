//! Reward-side pipeline for QoR-aware HLS code generation at desk scale.
//!
//! * [`design_space`]: kernel descriptors, pragma spaces, rendering.
//! * [`oracle`]: deterministic analytic synthesis stand-in.
//! * [`pareto`]: dominance, fronts, Pareto distance, QD sampling, hypervolume.
//! * [`dse`]: Gaussian-process surrogate and Monte-Carlo EHVI exploration.
//! * [`reward_model`]: pragma-aware tokenizer and Siamese comparative scorer.
//! * [`router`]: round-robin QoR reward with uncertainty-gated synthesis.
//! * [`grpo`]: group-relative policy optimization over a factored policy.

pub mod design_space;
pub mod dse;
pub mod error;
pub mod grpo;
pub mod oracle;
pub mod pareto;
pub mod reward_model;
pub mod rng;
pub mod router;

pub use error::{Error, Result};
pub use design_space::{DesignPoint, KernelDescriptor, PragmaConfig};
pub use oracle::{AnalyticBackend, QorVector, SynthesisBackend, SynthesisVerdict};

//! Run configuration. Precedence, lowest first: built-in defaults, the TOML
//! file given by `--config`, then command-line flags.
//!
//! Relative paths (kernel globs, `out`) resolve against the working directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use qorseek_core::design_space::{parse_kernel_descriptor, KernelDescriptor};
use qorseek_core::dse::DseConfig;
use qorseek_core::grpo::{GrpoConfig, RewardWeights, TrainingConfig};
use qorseek_core::oracle::{AnalyticBackend, DEFAULT_COST_SECONDS};
use qorseek_core::pareto::QdSamplingConfig;
use qorseek_core::reward_model::{LossConfig, ModelConfig, OptimizerConfig};
use qorseek_core::router::UncertaintyConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::read_input;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Only `analytic` is available.
    pub backend: String,
    /// Simulated seconds charged per synthesis call.
    pub cost_seconds: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { backend: "analytic".into(), cost_seconds: DEFAULT_COST_SECONDS }
    }
}

impl OracleConfig {
    pub fn backend(&self) -> AnalyticBackend {
        AnalyticBackend { cost_seconds: self.cost_seconds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Steps per trigger-rate window.
    pub window: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { window: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Glob patterns or plain paths of kernel descriptor files.
    pub kernels: Vec<String>,
    /// Directory for every artifact a command reads or writes.
    pub out: PathBuf,
    pub qd: QdSamplingConfig,
    pub dse: DseConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub uncertainty: UncertaintyConfig,
    pub grpo: GrpoConfig,
    pub weights: RewardWeights,
    pub oracle: OracleConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            kernels: vec!["demo/*.kd".into()],
            out: PathBuf::from("out"),
            qd: QdSamplingConfig::default(),
            dse: DseConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            grpo: GrpoConfig::default(),
            weights: RewardWeights::default(),
            oracle: OracleConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Values given on the command line; `Some` wins over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub kernels: Option<Vec<String>>,
    pub budget: Option<usize>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

fn section<T>(name: &str, r: qorseek_core::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        qorseek_core::Error::Validation { field, message } => CliError::invalid(format!("{name}.{field}"), message),
        other => CliError::invalid(name, other.to_string()),
    })
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(CliError::invalid(key, "must be positive"));
    }
    Ok(())
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(CliError::invalid(key, format!("{v} must be finite and non-negative")));
    }
    Ok(())
}

impl RunConfig {
    /// Parse TOML text. Unknown keys and type mismatches name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::invalid("<syntax>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().to_string();
            // At the top level an unknown key reports the path "."; nested ones include the key.
            let key = match message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                Some(field) if path == "." => field.to_string(),
                _ => path,
            };
            CliError::invalid(key, message)
        })
    }

    /// Defaults, then the optional file, then `overrides`; validated.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::from_toml(&read_input(path)?)?,
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = &o.kernels {
            self.kernels = k.clone();
        }
        if let Some(b) = o.budget {
            self.dse.budget = b;
        }
        if let Some(e) = o.epochs {
            self.optimizer.epochs = e;
        }
        if let Some(s) = o.steps {
            self.grpo.steps = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(CliError::invalid("kernels", "no kernel files given"));
        }
        positive("dse.budget", self.dse.budget)?;
        positive("dse.n_init", self.dse.n_init)?;
        positive("dse.pool_size", self.dse.pool_size)?;
        positive("dse.ehvi_samples", self.dse.ehvi_samples)?;
        if !(self.dse.length_scale > 0.0 && self.dse.length_scale.is_finite()) {
            return Err(CliError::invalid("dse.length_scale", "must be finite and positive"));
        }
        non_negative("dse.jitter", self.dse.jitter)?;
        non_negative("qd.epsilon", self.qd.epsilon)?;
        section("model", self.model.validate())?;
        section("loss", self.loss.validate())?;
        section("optimizer", self.optimizer.validate())?;
        section("uncertainty", self.uncertainty.validate())?;
        section("grpo", self.grpo.validate())?;
        section("weights", self.weights.validate())?;
        if self.oracle.backend != "analytic" {
            return Err(CliError::invalid(
                "oracle.backend",
                format!("unknown backend `{}` (only `analytic` is available)", self.oracle.backend),
            ));
        }
        if !(self.oracle.cost_seconds > 0.0 && self.oracle.cost_seconds.is_finite()) {
            return Err(CliError::invalid("oracle.cost_seconds", "must be finite and positive"));
        }
        positive("report.window", self.report.window)?;
        Ok(())
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            grpo: self.grpo,
            weights: self.weights,
            uncertainty: self.uncertainty,
            loss: self.loss,
            optimizer: self.optimizer,
        }
    }

    /// Canonical TOML rendering of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn has_glob_meta(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

/// Resolve the kernel patterns to files, parse them, and return the kernels
/// sorted by name. Plain paths must exist; each glob must match something.
pub fn load_kernels(patterns: &[String]) -> Result<Vec<Arc<KernelDescriptor>>> {
    let mut paths = Vec::new();
    for pat in patterns {
        if has_glob_meta(pat) {
            let entries = glob::glob(pat).map_err(|e| CliError::invalid("kernels", format!("bad pattern `{pat}`: {e}")))?;
            let before = paths.len();
            for entry in entries {
                paths.push(entry.map_err(|e| CliError::missing(e.path(), e.error().to_string()))?);
            }
            if paths.len() == before {
                return Err(CliError::missing(pat, "pattern matches no kernel files"));
            }
        } else {
            paths.push(PathBuf::from(pat));
        }
    }
    paths.sort();
    paths.dedup();

    let mut kernels: Vec<Arc<KernelDescriptor>> = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = read_input(p)?;
        let k = parse_kernel_descriptor(&text).map_err(|e| CliError::invalid(format!("kernels: {}", p.display()), e.to_string()))?;
        if kernels.iter().any(|o| o.name == k.name) {
            return Err(CliError::invalid("kernels", format!("kernel name `{}` appears twice", k.name)));
        }
        kernels.push(Arc::new(k));
    }
    kernels.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(kernels)
}

//! Training dynamics: policy and reward-model updates move in the right direction.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use qorseek_core::design_space::{generate_kernel, parse_kernel_descriptor, render_design, sample_config, DesignSpace};
use qorseek_core::dse::{run_dse, DseConfig};
use qorseek_core::grpo::{expected_oracle_latency, run_training, GrpoConfig, SimPolicy, TrainingConfig};
use qorseek_core::oracle::analytic_qor;
use qorseek_core::reward_model::{
    build_pairs, fine_tune, pairs_from_labeled, score, tier_accuracy, train, LossConfig, ModelConfig, OptimizerConfig,
    PairExample, RewardModel, TokenizedDesign,
};
use qorseek_core::router::UncertaintyConfig;
use qorseek_core::{AnalyticBackend, KernelDescriptor, QorVector};

const DOT: &str = include_str!("../../../demo/dot.kd");

fn loss_cfg() -> LossConfig {
    LossConfig { keep_ties: true, ..LossConfig::default() }
}

/// A reward model trained 10 epochs on eight generated kernels.
fn trained_model() -> &'static RewardModel {
    static MODEL: OnceLock<RewardModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let backend = AnalyticBackend::default();
        let mut model = RewardModel::init(&ModelConfig::default(), 0).unwrap();
        let pairs: Vec<PairExample> = (0..8)
            .flat_map(|i| {
                let k = Arc::new(generate_kernel(i, 0));
                let corpus = run_dse(&k, &backend, 20, i as u64, &DseConfig::default()).unwrap();
                build_pairs(&corpus, &model.tokenizer, &loss_cfg())
            })
            .collect();
        let opt = OptimizerConfig { epochs: 10, ..OptimizerConfig::default() };
        model.params = train(model.params.clone(), &pairs, &loss_cfg(), &opt, 1).unwrap().params;
        model
    })
}

/// `n` distinct oracle-labelled designs of `kernel`, skipping configs in `taken`.
fn labelled(
    model: &RewardModel,
    kernel: &Arc<KernelDescriptor>,
    n: usize,
    first_seed: u64,
    taken: &mut BTreeSet<String>,
) -> Vec<(Arc<TokenizedDesign>, QorVector)> {
    let mut out = Vec::new();
    let mut seed = first_seed;
    while out.len() < n {
        let config = sample_config(kernel, seed);
        seed += 1;
        let design = render_design(kernel, &config).unwrap();
        if taken.insert(design.rendered_code.clone()) {
            out.push((Arc::new(model.tokenize(&design.rendered_code)), analytic_qor(kernel, &config)));
        }
    }
    out
}

fn directed_accuracy(model: &RewardModel, pairs: &[PairExample]) -> f64 {
    let refs: Vec<&PairExample> = pairs.iter().collect();
    let acc = tier_accuracy(&model.params, &refs);
    let n = |t| pairs.iter().filter(|p| p.tier == t).count() as f64;
    let (nd, nl) = (n(qorseek_core::reward_model::Tier::Dominance), n(qorseek_core::reward_model::Tier::Latency));
    (acc.dominance.unwrap_or(0.0) * nd + acc.latency.unwrap_or(0.0) * nl) / (nd + nl)
}

#[test]
fn policy_gradient_lowers_expected_latency() {
    let kernel = Arc::new(parse_kernel_descriptor(DOT).unwrap());
    let kernels = vec![Arc::clone(&kernel)];
    let initial = SimPolicy::uniform(&kernels);
    let before = expected_oracle_latency(&initial, &kernel).unwrap();
    let cfg = TrainingConfig {
        grpo: GrpoConfig { kl_beta: 0.0, steps: 500, ..GrpoConfig::default() },
        uncertainty: UncertaintyConfig { force_real: true, online_updates: false, ..UncertaintyConfig::default() },
        loss: loss_cfg(),
        ..TrainingConfig::default()
    };
    let model = RewardModel::init(&ModelConfig::default(), 0).unwrap();
    let mut wins = 0;
    for seed in 0..10 {
        let run = run_training(&kernels, initial.clone(), model.clone(), &AnalyticBackend::default(), &cfg, seed).unwrap();
        let after = expected_oracle_latency(&run.policy, &kernel).unwrap();
        println!("seed {seed}: expected latency {before:.2} -> {after:.2}");
        wins += usize::from(after <= before);
    }
    assert!(wins >= 8, "{wins}/10 seeds lowered expected latency");
}

#[test]
fn changing_one_pragma_changes_the_score() {
    let model = trained_model();
    let (mut changed, mut total) = (0, 0);
    for k in 20..30 {
        let kernel = Arc::new(generate_kernel(k, 0));
        let space = DesignSpace::new(&kernel);
        for s in 0..10u64 {
            let idx = space.indices_of(&sample_config(&kernel, s)).unwrap();
            let d = (s as usize) % space.dims.len();
            let mut other = idx.clone();
            other[d] = (idx[d] + 1) % space.dims[d].len();
            if other == idx {
                continue;
            }
            let code = |i: &[usize]| render_design(&kernel, &space.config_from_indices(i)).unwrap().rendered_code;
            let (a, b) = (model.tokenize(&code(&idx)), model.tokenize(&code(&other)));
            total += 1;
            changed += usize::from(score(&model.params, &a, None) != score(&model.params, &b, None));
        }
    }
    println!("{changed}/{total} single-pragma edits changed the score");
    assert!(changed as f64 >= 0.95 * total as f64, "{changed}/{total}");
}

#[test]
fn online_fine_tuning_improves_accuracy_on_an_unseen_kernel() {
    let base = trained_model();
    let opt = OptimizerConfig::default();
    let mut improved = 0;
    let kernels = 100..105;
    for k in kernels.clone() {
        let kernel = Arc::new(generate_kernel(k, 0));
        let mut taken = BTreeSet::new();
        let buffer = labelled(base, &kernel, 50, 0, &mut taken);
        let held_out = labelled(base, &kernel, 50, 10_000, &mut taken);
        let train_pairs = pairs_from_labeled(&kernel.name, &buffer, &loss_cfg());
        let test_pairs = pairs_from_labeled(&kernel.name, &held_out, &loss_cfg());

        let before = directed_accuracy(base, &test_pairs);
        let mut tuned = base.clone();
        // 50 steps at the demo config's online rate.
        fine_tune(&mut tuned.params, &train_pairs, &loss_cfg(), &opt, 4e-4, 50, k as u64).unwrap();
        let after = directed_accuracy(&tuned, &test_pairs);
        println!("{}: held-out accuracy {before:.3} -> {after:.3}", kernel.name);
        improved += usize::from(after > before);
    }
    assert_eq!(improved, kernels.len(), "{improved}/{} kernels improved", kernels.len());
}

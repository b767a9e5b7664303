//! Acceptance harness. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 2-4 share one run: a reward model trained on the generated corpus
//! of criterion 1, then GRPO on the ten demo kernels with the desk uncertainty
//! settings from `demo/config.toml`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use qorseek_cli::report::{first_last_means, CostReport};
use qorseek_cli::{load_kernels, RunConfig};
use qorseek_core::design_space::{enumerate_space, generate_kernel, render_design, sample_config, KernelDescriptor};
use qorseek_core::dse::{front_hypervolume, reference_point, run_dse, run_random_search, DseConfig};
use qorseek_core::grpo::{group_advantages, grpo_step, run_training, GrpoStepRow, SimPolicy, StepContext, TrainingRun};
use qorseek_core::oracle::analytic_qor;
use qorseek_core::pareto::{dominates, hypervolume_exact, pareto_distance, pareto_front_qor, NormalizationBounds};
use qorseek_core::reward_model::{
    bce_with_logit, build_pairs, loss_and_grads, train, PairExample, RewardModel, RewardModelParams, Tier, TokenizedDesign,
};
use qorseek_core::rng::rng_from;
use qorseek_core::router::{compute_rq, ReplayBuffer, RouterCandidate, UncertaintyConfig};
use qorseek_core::{AnalyticBackend, QorVector, SynthesisBackend};
use rand::Rng;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, name, pass, detail };
    println!(
        "criterion {:>2} [PRIMARY] {:<28} {}  {}",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> RunConfig {
    let text = std::fs::read_to_string(repo().join("demo/config.toml")).expect("demo config");
    RunConfig::from_toml(&text).expect("demo config parses")
}

fn demo_kernels() -> Vec<Arc<KernelDescriptor>> {
    load_kernels(&[repo().join("demo/*.kd").to_string_lossy().into_owned()]).expect("demo kernels")
}

// ---------------------------------------------------------------- criterion 1

const GEN_KERNELS: usize = 30;
const GEN_BUDGET: usize = 40;

fn criterion_1(cfg: &RunConfig) -> (Verdict, RewardModel) {
    let t = Instant::now();
    let backend = cfg.oracle.backend();
    let mut model = RewardModel::init(&cfg.model, 0).unwrap();
    let mut pairs = Vec::new();
    let mut designs = 0;
    for i in 0..GEN_KERNELS {
        let k = Arc::new(generate_kernel(i, 0));
        let corpus = run_dse(&k, &backend, GEN_BUDGET, i as u64, &cfg.dse).unwrap();
        designs += corpus.entries.len();
        pairs.extend(build_pairs(&corpus, &model.tokenizer, &cfg.loss));
    }
    let out = train(model.params.clone(), &pairs, &cfg.loss, &cfg.optimizer, 0).unwrap();
    model.params = out.params.clone();
    let elapsed = t.elapsed();
    let acc = out.final_test().unwrap_or_default();
    let (dom, lat) = (acc.dominance.unwrap_or(0.0), acc.latency.unwrap_or(0.0));
    let size_ok = GEN_KERNELS >= 6 && designs >= 200 && pairs.len() >= 2000;
    let pass = size_ok && dom >= 0.95 && lat >= 0.90 && elapsed <= Duration::from_secs(300);
    let detail = format!(
        "{GEN_KERNELS} kernels, {designs} designs, {} pairs; test dominance {dom:.4} (>= 0.95), latency {lat:.4} (>= 0.90); {:.0} s (<= 300)",
        pairs.len(),
        elapsed.as_secs_f64()
    );
    (verdict(1, "reward-model accuracy", pass, detail), model)
}

// ------------------------------------------------------------- criteria 2-4

fn grpo_run(cfg: &RunConfig, kernels: &[Arc<KernelDescriptor>], model: &RewardModel, online: bool, seed: u64) -> TrainingRun {
    let mut tc = cfg.training();
    tc.grpo.steps = 1000;
    tc.uncertainty.online_updates = online;
    run_training(kernels, SimPolicy::uniform(kernels), model.clone(), &cfg.oracle.backend(), &tc, seed).unwrap()
}

fn rates(rows: &[GrpoStepRow]) -> (f64, f64) {
    first_last_means(rows, |r| r.trigger_rate).unwrap()
}

fn criteria_2_to_4(cfg: &RunConfig, model: &RewardModel) -> Vec<Verdict> {
    let kernels = demo_kernels();
    let t = Instant::now();
    let on = grpo_run(cfg, &kernels, model, true, 0);
    let off = grpo_run(cfg, &kernels, model, false, 0);
    let elapsed = t.elapsed();
    let (first, last) = rates(&on.rows);
    let (off_first, off_last) = rates(&off.rows);
    let pass2 = last < first && last <= 0.15 && off_last >= last && elapsed <= Duration::from_secs(600);
    let v2 = verdict(
        2,
        "trigger-rate decay",
        pass2,
        format!(
            "online {first:.4} -> {last:.4} (strict decrease, <= 0.15); disabled {off_first:.4} -> {off_last:.4} (>= {last:.4}); {} updates; {:.0} s",
            on.online_updates,
            elapsed.as_secs_f64()
        ),
    );

    let mut hits = 0;
    let mut deltas = Vec::new();
    let mut group_deltas = Vec::new();
    for seed in 0..10 {
        let run = if seed == 0 { on.clone() } else { grpo_run(cfg, &kernels, model, true, seed) };
        let (a, b) = first_last_means(&run.rows, |r| r.mean_r_q).unwrap();
        let (ga, gb) = first_last_means(&run.rows, |r| r.mean_r_q_group).unwrap();
        if b - a >= 0.1 {
            hits += 1;
        }
        deltas.push(format!("{:+.3}", b - a));
        group_deltas.push(format!("{:+.3}", gb - ga));
    }
    let v3 = verdict(
        3,
        "QoR-reward trend",
        hits >= 8,
        format!(
            "{hits}/10 seeds with delta >= 0.1 (need 8); deltas over C [{}]; group-mean deltas (info) [{}]",
            deltas.join(" "),
            group_deltas.join(" ")
        ),
    );

    let cost = CostReport { candidates: on.candidates, synth_calls: on.router.synth_calls(), cost_seconds: cfg.oracle.cost_seconds };
    let ratio = cost.proxy_seconds() / cost.all_real_seconds();
    let v4 = verdict(
        4,
        "cost accounting",
        ratio <= 0.30 && cost.proxy_seconds() == on.router.synth_calls() as f64 * cfg.oracle.cost_seconds,
        format!(
            "proxy {:.1} s vs all-real {:.1} s, ratio {ratio:.4} (<= 0.30)",
            cost.proxy_seconds(),
            cost.all_real_seconds()
        ),
    );
    vec![v2, v3, v4]
}

// ---------------------------------------------------------------- criterion 5

fn brute_preference(a: &QorVector, b: &QorVector) -> f64 {
    let (x, y) = (a.to_array(), b.to_array());
    let le = x.iter().zip(&y).all(|(p, q)| p <= q);
    let lt = x.iter().zip(&y).any(|(p, q)| p < q);
    let ge = x.iter().zip(&y).all(|(p, q)| p >= q);
    let gt = x.iter().zip(&y).any(|(p, q)| p > q);
    if le && lt {
        1.0
    } else if ge && gt {
        0.0
    } else if a.latency_cycles < b.latency_cycles {
        1.0
    } else if a.latency_cycles > b.latency_cycles {
        0.0
    } else {
        0.5
    }
}

fn criterion_5() -> Verdict {
    let kernels = demo_kernels();
    let backend = AnalyticBackend::default();
    let model = RewardModel::init(&qorseek_core::reward_model::ModelConfig { vocab_size: 256, embed_dim: 4, hidden_dim: 4, ..Default::default() }, 0).unwrap();
    let ucfg = UncertaintyConfig { force_real: true, ..UncertaintyConfig::default() };
    let mut rng = rng_from(5);
    let (mut mismatches, mut worst_sum) = (0, 0.0f64);
    for g in 0..100u64 {
        let k = &kernels[rng.random_range(0..kernels.len())];
        let size = rng.random_range(1..=8);
        let designs: Vec<_> = (0..size).map(|_| render_design(k, &sample_config(k, rng.random())).unwrap()).collect();
        let functional: Vec<bool> = designs.iter().map(|d| backend.evaluate(d).functional).collect();
        let cands: Vec<RouterCandidate> = designs.iter().zip(&functional).map(|(d, &f)| RouterCandidate { design: d, functional: f }).collect();
        let got = compute_rq(&cands, &model, &backend, &mut ReplayBuffer::new(), &ucfg, g).unwrap().r_q;

        let members: Vec<usize> = (0..size).filter(|&i| functional[i]).collect();
        let qor: Vec<QorVector> = designs.iter().map(|d| analytic_qor(&d.kernel, &d.config)).collect();
        let mut want = vec![0.0; size];
        if members.len() == 1 {
            want[members[0]] = 1.0;
        } else {
            for &i in &members {
                let s: f64 = members.iter().filter(|&&j| j != i).map(|&j| brute_preference(&qor[i], &qor[j])).sum();
                want[i] = s / (members.len() - 1) as f64;
            }
        }
        if got != want {
            mismatches += 1;
        }
        if members.len() >= 2 {
            let sum: f64 = members.iter().map(|&i| got[i]).sum();
            worst_sum = worst_sum.max((sum - members.len() as f64 / 2.0).abs());
        }
    }
    verdict(
        5,
        "round-robin oracle",
        mismatches == 0 && worst_sum <= 1e-12,
        format!("{mismatches}/100 groups differ from brute force; max |sum r_q - |C|/2| = {worst_sum:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 6

fn brute_front(qs: &[QorVector]) -> Vec<usize> {
    // Equal points keep only their first occurrence.
    (0..qs.len())
        .filter(|&i| !(0..qs.len()).any(|j| brute_dominates(&qs[j], &qs[i]) || (j < i && qs[j] == qs[i])))
        .collect()
}

fn brute_dominates(a: &QorVector, b: &QorVector) -> bool {
    let (x, y) = (a.to_array(), b.to_array());
    x.iter().zip(&y).all(|(p, q)| p <= q) && x.iter().zip(&y).any(|(p, q)| p < q)
}

fn criterion_6() -> Verdict {
    let mut rng = rng_from(6);
    let (mut front_bad, mut dist_err) = (0, 0.0f64);
    for _ in 0..200 {
        let n = rng.random_range(1..60);
        let hi = [4u64, 20, 1000][rng.random_range(0..3)];
        let qs: Vec<QorVector> =
            (0..n).map(|_| QorVector::from_array(std::array::from_fn(|_| rng.random_range(0..hi) as f64))).collect();
        let front = pareto_front_qor(&qs);
        if front != brute_front(&qs) {
            front_bad += 1;
        }
        let bounds = NormalizationBounds::from_qors(&qs).unwrap();
        let fq: Vec<QorVector> = front.iter().map(|&i| qs[i]).collect();
        let (lo, hi) = (bounds.f_min.to_array(), bounds.f_max.to_array());
        for p in &qs {
            let scan = fq
                .iter()
                .map(|f| {
                    (0..5)
                        .filter(|&k| hi[k] > lo[k])
                        .map(|k| ((p.to_array()[k] - f.to_array()[k]) / (hi[k] - lo[k])).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            dist_err = dist_err.max((pareto_distance(p, &fq, &bounds).unwrap() - scan).abs());
        }
    }

    let mut hv_err = 0.0f64;
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let mut front: Vec<Vec<f64>> = pts
            .iter()
            .filter(|p| !pts.iter().any(|q| q.iter().zip(p.iter()).all(|(a, b)| a <= b) && q != *p))
            .cloned()
            .collect();
        front.truncate(rng.random_range(1..=12));
        let reference = vec![1.1; 5];
        let exact = hypervolume_exact(&front, &reference).unwrap();
        let lo: Vec<f64> = (0..5).map(|k| front.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min)).collect();
        let box_vol: f64 = (0..5).map(|k| reference[k] - lo[k]).product();
        let samples = 100_000;
        let hit = (0..samples)
            .filter(|_| {
                let x: Vec<f64> = (0..5).map(|k| rng.random_range(lo[k]..reference[k])).collect();
                front.iter().any(|p| p.iter().zip(&x).all(|(a, b)| a <= b))
            })
            .count();
        let mc = box_vol * hit as f64 / samples as f64;
        hv_err = hv_err.max((exact - mc).abs() / exact);
    }
    verdict(
        6,
        "front / distance / HV oracles",
        front_bad == 0 && dist_err <= 1e-9 && hv_err <= 0.02,
        format!("{front_bad}/200 fronts differ; max distance error {dist_err:.1e} (<= 1e-9); max HV vs 1e5-sample MC {:.2}% (<= 2%)", 100.0 * hv_err),
    )
}

// ---------------------------------------------------------------- criterion 7

fn random_design(rng: &mut impl Rng, vocab: usize) -> Arc<TokenizedDesign> {
    let n = rng.random_range(1..8);
    let token_ids = (0..n).map(|_| rng.random_range(0..vocab as u32)).collect();
    Arc::new(TokenizedDesign { token_ids, pragma_token_positions: Vec::new() })
}

fn criterion_7() -> Verdict {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-3;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for case in 0..20u64 {
        let mut rng = rng_from(7000 + case);
        let vocab = rng.random_range(4..12);
        let (d, h) = (rng.random_range(2..6), rng.random_range(2..6));
        let mut params = RewardModelParams::init(vocab, d, h, [0.0, 0.2, 0.4][case as usize % 3], case);
        params.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        params.b2 = rng.random_range(-0.5..0.5);
        let pairs: Vec<PairExample> = (0..rng.random_range(1..5))
            .map(|_| {
                let tier = [Tier::Dominance, Tier::Latency, Tier::Tie][rng.random_range(0..3)];
                PairExample { kernel: "k".into(), design_i: random_design(&mut rng, vocab), design_j: random_design(&mut rng, vocab), label: tier.label(), tier }
            })
            .collect();
        let batch: Vec<&PairExample> = pairs.iter().collect();
        let cfg = qorseek_core::reward_model::LossConfig { lambda_cons: rng.random_range(0.1..1.0), ..Default::default() };
        let seed = Some(99 + case);
        let (_, g) = loss_and_grads(&params, &batch, &cfg, seed).unwrap();
        let blocks: [(usize, Vec<f64>); 5] =
            [(0, g.embedding.clone()), (1, g.w1.clone()), (2, g.b1.clone()), (3, g.w2.clone()), (4, vec![g.b2])];
        for (b, grad) in blocks {
            for (k, &a) in grad.iter().enumerate() {
                let bump = |delta: f64| {
                    let mut p = params.clone();
                    match b {
                        0 => p.embedding[k] += delta,
                        1 => p.w1[k] += delta,
                        2 => p.b1[k] += delta,
                        3 => p.w2[k] += delta,
                        _ => p.b2 += delta,
                    }
                    loss_and_grads(&p, &batch, &cfg, seed).unwrap().0.total
                };
                let numeric = (bump(STEP) - bump(-STEP)) / (2.0 * STEP);
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
                checked += 1;
            }
        }
    }
    verdict(7, "gradient correctness", worst <= 1e-4, format!("{checked} coordinates over 20 configs, max relative error {worst:.1e} (<= 1e-4)"))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Verdict {
    let mut rng = rng_from(8);
    let mut adv_worst = 0.0f64;
    for _ in 0..200 {
        let r: Vec<f64> = (0..rng.random_range(2..9)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = group_advantages(&r, 1e-4);
        adv_worst = adv_worst.max((a.iter().sum::<f64>() / a.len() as f64).abs());
    }

    let kernels = demo_kernels();
    let reference = SimPolicy::uniform(&kernels);
    let mut policy = reference.clone();
    let init_kl: f64 = kernels.iter().map(|k| policy.kl_to(&reference, &k.name).unwrap()).sum();
    let model = RewardModel::init(&qorseek_core::reward_model::ModelConfig { vocab_size: 512, embed_dim: 8, hidden_dim: 6, ..Default::default() }, 1).unwrap();
    let backend = AnalyticBackend::default();
    let mut buffer = ReplayBuffer::new();
    let (ucfg, gcfg, w) = (UncertaintyConfig::default(), Default::default(), Default::default());
    let (mut rho_worst, mut min_kl) = (0.0f64, f64::INFINITY);
    for step in 0..60u64 {
        let k = &kernels[step as usize % kernels.len()];
        let ctx = StepContext { reference: &reference, backend: &backend, model: &model, buffer: &mut buffer, ucfg: &ucfg, cfg: &gcfg, weights: &w };
        let out = grpo_step(&mut policy, k, ctx, step).unwrap();
        rho_worst = out.ratios[0].iter().map(|r| (r - 1.0).abs()).fold(rho_worst, f64::max);
        min_kl = min_kl.min(out.kl);
    }
    let bce = bce_with_logit(0.0, 0.5);
    // The target is stated to four places.
    #[allow(clippy::approx_constant)]
    let bce_target = 0.6931;
    let pass = adv_worst <= 1e-12 && rho_worst == 0.0 && init_kl == 0.0 && min_kl >= 0.0 && (bce - bce_target).abs() <= 1e-4;
    verdict(
        8,
        "GRPO math invariants",
        pass,
        format!(
            "max |mean advantage| {adv_worst:.1e}; max |rho-1| first epoch {rho_worst:.1e}; KL at init {init_kl}; min KL over 60 steps {min_kl:.2e}; BCE(p=0.5,y=0.5) {bce:.6}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Verdict {
    // (latency, lut, dsp, bram, ff) read from the table's Lat./DSP/FF/BRAM/LUT columns.
    let df_seek = QorVector::new(514, 638, 0, 0, 309);
    let df_sage = QorVector::new(1024, 2715, 0, 0, 1025);
    let fg_seek = QorVector::new(116, 67419, 648, 0, 90762);
    let fg_gpt = QorVector::new(169, 2864, 12, 0, 5730);
    let a = dominates(&df_seek, &df_sage);
    let b = !dominates(&fg_seek, &fg_gpt) && !dominates(&fg_gpt, &fg_seek);
    verdict(9, "dominance fixtures", a && b, format!("data_forwarding dominates = {a}; fgnn_linear mutually non-dominated = {b}"))
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Verdict {
    let kernel = demo_kernels().into_iter().find(|k| k.name == "dot").expect("dot kernel");
    let backend = AnalyticBackend::default();
    let space: Vec<QorVector> = enumerate_space(&kernel).unwrap().iter().map(|c| analytic_qor(&kernel, c)).collect();
    let reference = reference_point(&space);
    let cfg = DseConfig::default();
    let mut wins = 0;
    let mut cells = Vec::new();
    for seed in 0..10 {
        let e = front_hypervolume(&run_dse(&kernel, &backend, 40, seed, &cfg).unwrap().qors(), &reference);
        let r = front_hypervolume(&run_random_search(&kernel, &backend, 40, seed, &cfg).unwrap().qors(), &reference);
        if e >= r {
            wins += 1;
        }
        cells.push(format!("{:.3}", e / r));
    }
    verdict(
        10,
        "DSE effectiveness",
        wins >= 8,
        format!("EHVI >= random in {wins}/10 seeds on dot ({} configs); HV ratios [{}]", space.len(), cells.join(" ")),
    )
}

// --------------------------------------------------------------- criterion 11

/// One `qorseek` invocation through the binary's entry point; output is discarded.
fn run_cli(args: &[&str]) -> i32 {
    let argv = std::iter::once("qorseek").chain(args.iter().copied());
    qorseek_cli::main_with_writers(argv, &mut std::io::sink(), &mut std::io::sink())
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_11() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let demo = repo().join("demo");
    let config = format!(
        "kernels = [{:?}, {:?}, {:?}]\n[loss]\nkeep_ties = true\n[uncertainty]\ntau_u = 0.005\nonline_lr = 0.0004\nk_update = 20\n[report]\nwindow = 10\n",
        demo.join("dot.kd"),
        demo.join("vadd.kd"),
        demo.join("fir.kd")
    );
    let run_toml = tmp.path().join("run.toml");
    std::fs::write(&run_toml, config).unwrap();
    let run_toml = run_toml.to_str().unwrap();
    let mut codes = Vec::new();
    for out in ["a", "b"] {
        let out = tmp.path().join(out);
        for cmd in ["dse", "pairs", "train-rm", "grpo", "report"] {
            let args = ["--config", run_toml, "--seed", "11", "--budget", "12", "--epochs", "2", "--steps", "60", "--out", out.to_str().unwrap()];
            let mut full = vec![cmd];
            full.extend(args);
            codes.push(run_cli(&full));
        }
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let pass = codes.iter().all(|&c| c == 0) && fa == fb && !fa.is_empty() && differing.is_empty();
    verdict(
        11,
        "determinism",
        pass,
        format!("exit codes {codes:?}; {} files per run; differing: {differing:?}", fa.len()),
    )
}

fn main() {
    let t = Instant::now();
    let cfg = desk_config();
    let mut all = Vec::new();
    let (v1, model) = criterion_1(&cfg);
    all.push(v1);
    all.extend(criteria_2_to_4(&cfg, &model));
    all.push(criterion_5());
    all.push(criterion_6());
    all.push(criterion_7());
    all.push(criterion_8());
    all.push(criterion_9());
    all.push(criterion_10());
    all.push(criterion_11());
    all.sort_by_key(|v| v.id);

    let failed: Vec<String> = all.iter().filter(|v| !v.pass).map(|v| format!("{} ({})", v.id, v.name)).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0} s{}",
        all.len() - failed.len(),
        all.len(),
        t.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

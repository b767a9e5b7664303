use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use qorseek_core::design_space::{enumerate_space, generate_kernel, parse_kernel_descriptor, render_design};
use qorseek_core::dse::{run_dse, DseConfig};
use qorseek_core::pareto::{hypervolume_exact, pareto_front_qor};
use qorseek_core::reward_model::{mc_uncertainty, ModelConfig, RewardModel};
use qorseek_core::router::{compute_rq, ReplayBuffer, RouterCandidate, UncertaintyConfig};
use qorseek_core::{AnalyticBackend, QorVector};
use rand::{Rng, SeedableRng};

const DOT: &str = "kernel dot\narray x words=8 bits=32\narray y words=8 bits=32\nloop i trip=8 add=1 mul=1 arrays=x,y\nhazard=0.1\n";

fn pareto(c: &mut Criterion) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    let qors: Vec<QorVector> = (0..500)
        .map(|_| QorVector::from_array(std::array::from_fn(|_| rng.random_range(0.0..10_000.0))))
        .collect();
    c.bench_function("pareto_front_qor/500", |b| b.iter(|| pareto_front_qor(black_box(&qors))));

    // Points on the simplex are mutually non-dominated.
    let front: Vec<Vec<f64>> = (0..12)
        .map(|_| {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let reference = vec![1.1; 5];
    c.bench_function("hypervolume_exact/12x5", |b| b.iter(|| hypervolume_exact(black_box(&front), &reference)));
}

fn reward_model(c: &mut Criterion) {
    let kernel = Arc::new(parse_kernel_descriptor(DOT).unwrap());
    let model = RewardModel::init(&ModelConfig::default(), 0).unwrap();
    let configs = enumerate_space(&kernel).unwrap();
    let design = render_design(&kernel, &configs[configs.len() / 2]).unwrap();
    let tokens = model.tokenize(&design.rendered_code);
    c.bench_function("tokenize", |b| b.iter(|| model.tokenize(black_box(&design.rendered_code))));
    c.bench_function("mc_uncertainty/10", |b| b.iter(|| mc_uncertainty(&model.params, black_box(&tokens), 10, 7)));

    let designs: Vec<_> = configs.iter().step_by(97).take(4).map(|c| render_design(&kernel, c).unwrap()).collect();
    let cands: Vec<RouterCandidate> = designs.iter().map(|d| RouterCandidate { design: d, functional: true }).collect();
    let backend = AnalyticBackend::default();
    let ucfg = UncertaintyConfig::default();
    c.bench_function("compute_rq/group4", |b| {
        b.iter_batched(
            ReplayBuffer::new,
            |mut buf| compute_rq(&cands, &model, &backend, &mut buf, &ucfg, 3),
            BatchSize::SmallInput,
        )
    });
}

fn dse(c: &mut Criterion) {
    let kernel = Arc::new(generate_kernel(3, 0));
    let backend = AnalyticBackend::default();
    let cfg = DseConfig::default();
    let mut g = c.benchmark_group("dse");
    g.sample_size(10);
    g.bench_function("run_dse/budget20", |b| b.iter(|| run_dse(&kernel, &backend, 20, 1, &cfg)));
    g.finish();
}

criterion_group!(benches, pareto, reward_model, dse);
criterion_main!(benches);

//! Micro-benchmarks for the paths that dominate a benchmark run:
//! posterior evaluation, stage-reward scoring, hyperparameter fitting,
//! and the rollout selection itself.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rollout_bo::acquisition::{self, GridCache};
use rollout_bo::quadrature::expect_max_affine;
use rollout_bo::{
    gauss_hermite, rollout, Candidate, Dataset, GpModel, KernelSpec, RolloutConfig, SourceCost,
    SourceModelSpec,
};

fn model_2d(n_obs: usize) -> GpModel {
    let mut rng = StdRng::seed_from_u64(11);
    let spec = SourceModelSpec::new(
        KernelSpec::matern(2, 2, 0.3, 1.0, 1e-2).unwrap(),
        vec![KernelSpec::rbf(2, 0.4, 0.5, 1e-2).unwrap()],
    )
    .unwrap();
    let mut data = Dataset::new(2);
    for i in 0..n_obs {
        let x = vec![rng.gen(), rng.gen()];
        let source = usize::from(i % 3 == 2);
        data.push(source, x, rng.gen_range(-1.0..1.0)).unwrap();
    }
    GpModel::new(spec, data).unwrap()
}

fn grid(n: usize) -> Vec<Vec<f64>> {
    let mut rng = StdRng::seed_from_u64(17);
    (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect()
}

fn bench_posterior(c: &mut Criterion) {
    let model = model_2d(30);
    c.bench_function("posterior_mean_var_30_obs", |b| {
        let x = [0.37, 0.81];
        b.iter(|| std::hint::black_box(model.posterior(0, &x)))
    });
}

fn bench_stage_reward(c: &mut Criterion) {
    let model = model_2d(30);
    let cache = GridCache::build(&model, grid(64)).unwrap();
    let rule = gauss_hermite(10).unwrap();
    let cand = Candidate { source: 0, x: vec![0.42, 0.58], cost: 5.0 };
    c.bench_function("kg_stage_reward_grid_64", |b| {
        b.iter(|| {
            std::hint::black_box(
                acquisition::kg_stage_reward(&model, &cache, &cand, &rule).unwrap(),
            )
        })
    });
}

fn bench_expect_max_affine(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(23);
    let a: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bb: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let rule = gauss_hermite(10).unwrap();
    c.bench_function("expect_max_affine_64x10", |b| {
        b.iter(|| std::hint::black_box(expect_max_affine(&a, &bb, &rule).unwrap()))
    });
}

fn bench_augmented(c: &mut Criterion) {
    let model = model_2d(30);
    c.bench_function("augmented_rank1_update_30_obs", |b| {
        b.iter_batched(
            || model.clone(),
            |m| std::hint::black_box(m.augmented(0, vec![0.11, 0.93], 0.4).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn bench_fit(c: &mut Criterion) {
    let model = model_2d(20);
    let spec = model.spec().clone();
    let data = model.data().clone();
    c.bench_function("fit_mle_20_obs_2_restarts", |b| {
        b.iter(|| {
            std::hint::black_box(
                GpModel::fit_mle(spec.clone(), data.clone(), 2, 99).unwrap(),
            )
        })
    });
}

fn bench_rollout_select(c: &mut Criterion) {
    let model = model_2d(20);
    let cache = GridCache::build(&model, grid(24)).unwrap();
    let sources = [
        SourceCost { source: 0, cost: 5.0 },
        SourceCost { source: 1, cost: 1.0 },
    ];
    let config = RolloutConfig::new(0.9, 3, 10, 6, 40.0).unwrap();
    c.bench_function("rollout_select_on_grid_h3", |b| {
        b.iter(|| {
            std::hint::black_box(
                rollout::select_next_on_grid(&model, &cache, &sources, 3, &config, 7).unwrap(),
            )
        })
    });
}

criterion_group! {
    name = hot_paths;
    config = Criterion::default().sample_size(20);
    targets = bench_posterior,
        bench_stage_reward,
        bench_expect_max_affine,
        bench_augmented,
        bench_fit,
        bench_rollout_select
}
criterion_main!(hot_paths);

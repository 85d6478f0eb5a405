use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dtgmm::copula::pseudo_observations;
use dtgmm::{fit_clayton, sample_clayton, solve, summarize_density, ClaytonFitConfig, GmmConfig, MomentConditions};
use dtgmm_bench::{lead_system, replicate};
use dtgmm_sim::setting::BETA_STAR;
use dtgmm_sim::{run_method, MethodConfig, MethodTag};

fn moments(c: &mut Criterion) {
    let cfg = MethodConfig::default();
    let (system, fits) = lead_system(&replicate(4, 1), &cfg);
    c.bench_function("g_bar", |b| b.iter(|| system.g_bar(black_box(&BETA_STAR))));
    c.bench_function("jacobian", |b| b.iter(|| system.jacobian(black_box(&BETA_STAR))));
    c.bench_function("gmm_solve", |b| b.iter(|| solve(&system, &fits, &GmmConfig::default()).unwrap()));
}

fn density(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = sample_clayton(2, 2.0, 500, &mut rng);
    let cols: Vec<Vec<f64>> = (0..2).map(|k| u.iter().map(|r| r[k]).collect()).collect();
    let pseudo = pseudo_observations(&cols);
    c.bench_function("fit_clayton_500", |b| b.iter(|| fit_clayton(black_box(&pseudo), &ClaytonFitConfig::default()).unwrap()));

    let cfg = MethodConfig::default();
    let sites = replicate(4, 3);
    c.bench_function("summarize_density_500", |b| b.iter(|| summarize_density(&sites[1].reference, &cfg.grid).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let cfg = MethodConfig::default();
    let sites = replicate(4, 4);
    let mut group = c.benchmark_group("replicate");
    group.sample_size(20);
    for method in MethodTag::ALL {
        group.bench_function(method.name(), |b| b.iter(|| run_method(method, &sites, &cfg, 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, moments, density, pipeline);
criterion_main!(benches);

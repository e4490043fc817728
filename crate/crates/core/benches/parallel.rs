//! Throughput of the data-parallel paths (per-environment simulation,
//! subsampled re-estimation) against a single worker. Built with
//! `--no-default-features` the pool variants disappear and the same
//! workloads measure the sequential fallback.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use backshift::pipeline::{estimate, EstimateConfig};
use backshift::scatter::MultiEnvDataset;
use backshift::simulator::{reference_network, simulate, InterventionSpec};
use backshift::stability::{stability_select, StabilityConfig};

fn dataset(n_per_env: usize) -> MultiEnvDataset {
    let model = reference_network(false, 0);
    simulate(&model, &InterventionSpec::all_targets(1.0), &vec![n_per_env; 10], 0).unwrap()
}

fn pool_label() -> &'static str {
    if cfg!(feature = "parallel") {
        "worker_pool"
    } else {
        "sequential_fallback"
    }
}

#[cfg(feature = "parallel")]
fn single_worker<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn bench_simulate(c: &mut Criterion) {
    let model = reference_network(false, 0);
    let spec = InterventionSpec::all_targets(1.0);
    let mut g = c.benchmark_group("simulate_10_envs_2000_rows");
    g.warm_up_time(Duration::from_secs(1));
    g.measurement_time(Duration::from_secs(3));
    g.bench_function(pool_label(), |b| {
        b.iter(|| black_box(simulate(&model, &spec, &[2_000; 10], 0).unwrap()))
    });
    #[cfg(feature = "parallel")]
    g.bench_function("single_worker", |b| {
        b.iter(|| single_worker(|| black_box(simulate(&model, &spec, &[2_000; 10], 0).unwrap())))
    });
    g.finish();
}

fn bench_estimate(c: &mut Criterion) {
    let ds = dataset(2_000);
    let config = EstimateConfig::default();
    let mut g = c.benchmark_group("estimate_10_envs_2000_rows");
    g.warm_up_time(Duration::from_secs(1));
    g.measurement_time(Duration::from_secs(3));
    g.bench_function("full_chain", |b| {
        b.iter(|| black_box(estimate(&ds, &config).unwrap()))
    });
    g.finish();
}

fn bench_stability(c: &mut Criterion) {
    let ds = dataset(500);
    let est_config = EstimateConfig::default();
    let cfg = StabilityConfig {
        n_subsamples: 8,
        ..StabilityConfig::default()
    };
    let mut g = c.benchmark_group("stability_8_subsamples_500_rows");
    g.sample_size(10);
    g.warm_up_time(Duration::from_secs(1));
    g.measurement_time(Duration::from_secs(5));
    g.bench_function(pool_label(), |b| {
        b.iter(|| black_box(stability_select(&ds, &cfg, &est_config).unwrap()))
    });
    #[cfg(feature = "parallel")]
    g.bench_function("single_worker", |b| {
        b.iter(|| single_worker(|| black_box(stability_select(&ds, &cfg, &est_config).unwrap())))
    });
    g.finish();
}

criterion_group!(benches, bench_simulate, bench_estimate, bench_stability);
criterion_main!(benches);

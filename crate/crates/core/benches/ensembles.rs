//! Ensemble throughput of the pooled map against a plain loop.
//!
//! `cargo bench` measures the rayon build; `cargo bench --no-default-features`
//! measures the sequential fallback, where both variants run in order.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qmm_detector::master::{uncoupled_qubit_traces, ChainRun};
use qmm_detector::model::ModelParams;
use qmm_detector::parallel::{current_threads, is_parallel, map_indexed};
use qmm_detector::qsd::{run_trajectory, RunConfig};

fn trajectory_config() -> RunConfig {
    RunConfig {
        params: ModelParams {
            m_a: 3,
            m_b: 3,
            ..ModelParams::default()
        },
        periods: 4.0,
        warmup_periods: 1.0,
        steps_per_period: 100,
        stride: 10,
        ..RunConfig::default()
    }
}

fn chain_run(seed: u64) -> ChainRun {
    ChainRun {
        duration: 40.0,
        dt: 0.03,
        stride: 10,
        seed,
        substeps: 1,
    }
}

fn label(kind: &str) -> String {
    let mode = if is_parallel() {
        "rayon"
    } else {
        "sequential-build"
    };
    format!("{kind}/{mode}x{}", current_threads())
}

fn trajectories(c: &mut Criterion) {
    let base = trajectory_config();
    let one = |i: usize| {
        let cfg = RunConfig {
            seed: i as u64,
            ..base.clone()
        };
        run_trajectory(&cfg).unwrap()
    };
    let mut group = c.benchmark_group(label("qsd_trajectories"));
    group.sample_size(10);
    for n in [4usize, 16] {
        group.bench_with_input(BenchmarkId::new("map_indexed", n), &n, |b, &n| {
            b.iter(|| black_box(map_indexed(n, one)))
        });
        group.bench_with_input(BenchmarkId::new("loop", n), &n, |b, &n| {
            b.iter(|| black_box((0..n).map(one).collect::<Vec<_>>()))
        });
    }
    group.finish();
}

fn noise_realizations(c: &mut Criterion) {
    let params = ModelParams::chain(4);
    let one = |i: usize| uncoupled_qubit_traces(&params, 4, &chain_run(i as u64)).unwrap();
    let mut group = c.benchmark_group(label("chain_realizations"));
    group.sample_size(10);
    for n in [8usize, 32] {
        group.bench_with_input(BenchmarkId::new("map_indexed", n), &n, |b, &n| {
            b.iter(|| black_box(map_indexed(n, one)))
        });
        group.bench_with_input(BenchmarkId::new("loop", n), &n, |b, &n| {
            b.iter(|| black_box((0..n).map(one).collect::<Vec<_>>()))
        });
    }
    group.finish();
}

criterion_group!(benches, trajectories, noise_realizations);
criterion_main!(benches);

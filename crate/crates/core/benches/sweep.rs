use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use samplex::sweep::{run_sweep, SweepConfig};
use samplex::ExecMode;

fn configs() -> Vec<(&'static str, SweepConfig)> {
    [
        (
            "ca",
            r#"{"model": "ca", "d": [64], "m": [2, 8, 16], "s": [1], "n": [256, 1024], "trials": 4, "master_seed": 1}"#,
        ),
        (
            "cw",
            r#"{"model": "cw", "d": [64], "m": [8], "s": [1, 4, 8], "n": [256], "trials": 4, "master_seed": 1}"#,
        ),
        (
            "rnn",
            r#"{"model": "rnn", "d": [8], "r": [2, 4], "L": [8], "n": [128], "trials": 4, "master_seed": 1}"#,
        ),
    ]
    .into_iter()
    .map(|(name, json)| (name, SweepConfig::from_json(json).unwrap()))
    .collect()
}

fn bench_modes(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, cfg) in configs() {
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let label = if mode.is_parallel() { "parallel" } else { "sequential" };
            group.bench_with_input(BenchmarkId::new(name, label), &cfg, |b, cfg| {
                b.iter(|| run_sweep(cfg, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);

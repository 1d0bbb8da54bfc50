use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vanet_dynkey::harness::{run_simulations, Experiment, ExperimentConfig, ModelSelection};

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Experiment::E2);
    cfg.model = ModelSelection::Manhattan;
    cfg.sweep = vec![10.0, 30.0];
    cfg.replications = 4;
    cfg
}

fn replications(c: &mut Criterion) {
    let cfg = config();
    let mut group = c.benchmark_group("e2_replications");
    group.sample_size(10);
    for parallel in [false, true] {
        let name = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &parallel, |b, &p| {
            b.iter(|| run_simulations(&cfg, p).expect("simulation"))
        });
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);

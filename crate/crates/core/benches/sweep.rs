use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use input_consensus::exec::Execution;
use input_consensus::graph::{build_topology, lazy, metropolis, ConsensusMatrix, TopologyKind};
use input_consensus::ia::{ia_run, GammaSchedule, IaOptions};
use input_consensus::model::{generate, ModelParams};
use input_consensus::montecarlo::{run_sweep_with, Algorithm, ExperimentConfig, TopologySpec};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn small_sweep() -> ExperimentConfig {
    let mut config = ExperimentConfig::new(ModelParams::reference());
    config.n_values = vec![16, 36];
    config.topologies = vec![TopologySpec::Complete, TopologySpec::Torus];
    config.algorithms = vec![
        Algorithm::Ia {
            gamma: GammaSchedule::power(0.7).unwrap(),
        },
        Algorithm::Em,
        Algorithm::Iml,
    ];
    config.mc_runs = 16;
    config
}

fn bench_sweep(c: &mut Criterion) {
    let config = small_sweep();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| run_sweep_with(black_box(&config), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("matvec");
    for n in [1024usize, 16384] {
        let p = metropolis(&build_topology(TopologyKind::torus_for(n), n).unwrap());
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut out = vec![0.0; n];
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| p.apply_with(black_box(&x), &mut out, exec))
            });
        }
    }
    group.finish();
}

fn bench_ia_run(c: &mut Criterion) {
    let params = ModelParams::reference();
    let n = 256;
    let y = generate(&params, n, 5).unwrap().y;
    let ring = metropolis(&build_topology(TopologyKind::Ring, n).unwrap());
    let p: ConsensusMatrix = lazy(&ring, 0.5).unwrap();
    let gamma = GammaSchedule::power(0.7).unwrap();
    let mut group = c.benchmark_group("ia_run");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = IaOptions {
            execution: exec,
            ..IaOptions::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| ia_run(black_box(&y), &p, gamma, &params, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_matvec, bench_ia_run);
criterion_main!(benches);

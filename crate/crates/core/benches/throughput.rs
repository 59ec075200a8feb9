//! Sequential against data-parallel execution for the two hot loops: a
//! profile sweep and whole-state-space verification.

use std::hint::black_box;
use std::path::Path;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maupf::harness::{self, run_sweep, ExperimentSpec, InstanceConfig, ProfileSource};
use maupf::policy::verify_with;
use maupf::solver::{solve, SearchOptions, SearchProblem};
use maupf::{Parallelism, Scenario, ScenarioKind, SensorRange};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Auto),
];

fn maps() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps")
}

fn sweep(c: &mut Criterion) {
    let map = harness::load_map(&maps().join("empty_5x6.txt")).unwrap();
    let mut group = c.benchmark_group("sweep_5x6_myopic");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, par) in MODES {
        let mut spec = ExperimentSpec::new(map.clone(), 2);
        spec.sensors = vec![SensorRange::Range(2)];
        spec.scenarios = vec![Scenario::new(ScenarioKind::Myopic)];
        spec.source = ProfileSource::Sample { count: 200, seed: 1 };
        spec.jobs = par;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(run_sweep(&spec).unwrap().rows.len()))
        });
    }
    group.finish();
}

fn verify(c: &mut Criterion) {
    let path = maps().join("two_chambers.cfg");
    let config = InstanceConfig::load(&path).unwrap();
    let cfg = config.to_configuration(&config.load_map().unwrap()).unwrap();
    let problem = SearchProblem::new(&cfg).unwrap();
    let policy = solve(&problem, &SearchOptions::default())
        .unwrap()
        .policy
        .expect("instance is feasible");
    let mut group = c.benchmark_group("verify_19_cells_3_agents");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(verify_with(&cfg, &policy, par).unwrap().feasible))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, verify);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pufbind_core::interp::MonitoredOracle;
use pufbind_core::par::Execution;
use pufbind_core::programs;
use pufbind_core::protect::{protect, DEFAULT_ATTEMPT_BUDGET};
use pufbind_core::puf::PufDevice;
use pufbind_core::verify::{exhaustive_safety_check, CloneExperiment, PufSpace, ReachSubject};

const STRATEGIES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn clone_trials(c: &mut Criterion) {
    let p = programs::traffic_light();
    let pp = protect(
        &p,
        &PufDevice::new(42, 16, 16, 0.0).unwrap(),
        DEFAULT_ATTEMPT_BUDGET,
    )
    .unwrap();
    let exp = CloneExperiment {
        original: &p,
        protected: &pp.program,
        enrollment: &pp.enrollment,
        oracle: MonitoredOracle::Random { seed: 5 },
        run_seed: 5,
        steps: 2_000,
        noise: 0.05,
    };
    let seeds: Vec<u64> = (1000..1016).collect();
    let mut g = c.benchmark_group("clone_trials");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(exp.run(&seeds, exec).unwrap()))
        });
    }
    g.finish();
}

fn reachability(c: &mut Criterion) {
    let p = programs::batch_mixer();
    let pp = protect(
        &p,
        &PufDevice::new(42, 16, 16, 0.0).unwrap(),
        DEFAULT_ATTEMPT_BUDGET,
    )
    .unwrap();
    let subject = ReachSubject::Protected {
        program: &pp.program,
        enrollment: &pp.enrollment,
        puf: PufSpace::Adversarial,
    };
    let mut g = c.benchmark_group("reachability");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(exhaustive_safety_check(&subject, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, clone_trials, reachability);
criterion_main!(benches);

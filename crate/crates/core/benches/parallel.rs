use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sweeping_core::examples::{example2_search, SearchOptions};
use sweeping_core::integrate::{run_family, FamilyOptions};
use sweeping_core::penalty::{PenaltySchedule, ScheduleConfig};
use sweeping_core::problem::{validate_assumptions, ProbeGrid};
use sweeping_core::registry;
use sweeping_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn assumptions(c: &mut Criterion) {
    let b = registry::example1(0.05).unwrap();
    let mut g = c.benchmark_group("validate_assumptions");
    g.sample_size(10);
    for (name, exec) in MODES {
        let grid = ProbeGrid { exec, ..ProbeGrid::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(validate_assumptions(&b.spec, &grid).unwrap()))
        });
    }
    g.finish();
}

fn family(c: &mut Criterion) {
    let b = registry::example1(0.05).unwrap();
    let report = validate_assumptions(&b.spec, &ProbeGrid::default()).unwrap();
    let cfg = ScheduleConfig { levels: 5, ..ScheduleConfig::default() };
    let schedule = PenaltySchedule::build(&cfg, report.mu, report.eta).unwrap();
    let mut g = c.benchmark_group("run_family");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = FamilyOptions { exec, ..FamilyOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(run_family(&b.spec, &b.control, &schedule, &b.x0, &opts).unwrap()))
        });
    }
    g.finish();
}

fn switch_search(c: &mut Criterion) {
    let b = registry::example2(0.05, 0.05).unwrap();
    let mut g = c.benchmark_group("example2_search");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = SearchOptions { switch_points: 100, catchup_steps: 5000, adversaries: 8, exec, ..SearchOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(example2_search(&b.spec, &b.x0, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, assumptions, family, switch_search);
criterion_main!(benches);

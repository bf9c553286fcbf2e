use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aess::classical::build_classical_generator_with;
use aess::ensemble::{run_ensemble_with, RunConfig};
use aess::exec::Execution;
use aess::model::{Model, ModelTag};
use aess::sat::{count_solutions_with, generate_planted, PlantedParams};
use aess::sparse::GenMatrix;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn generator_assembly(c: &mut Criterion) {
    let inst = generate_planted(&PlantedParams::new(14), 7).unwrap();
    let mut group = c.benchmark_group("classical_generator_n14");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| build_classical_generator_with(exec, &inst, 1.0).unwrap()));
    }
    group.finish();
}

fn solution_count(c: &mut Criterion) {
    let inst = generate_planted(&PlantedParams::new(20), 3).unwrap();
    let mut group = c.benchmark_group("count_solutions_n20");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| count_solutions_with(exec, &inst, u64::MAX).unwrap()));
    }
    group.finish();
}

fn adjoint_apply(c: &mut Criterion) {
    let m = Model::aklt(4).unwrap();
    let GenMatrix::Complex(l) = m.generator(1.0).unwrap().matrix else {
        unreachable!("AKLT generator is complex")
    };
    let x = m.basis.maximally_mixed();
    let mut group = c.benchmark_group("aklt4_adjoint_apply");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| l.apply_adjoint_with(exec, &x)));
    }
    group.finish();
}

fn ensemble(c: &mut Criterion) {
    let mut cfg = RunConfig::new(ModelTag::Sat3Classical, vec![7, 8], 4);
    cfg.w_list = vec![1.0];
    let mut group = c.benchmark_group("ensemble_n7_n8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_ensemble_with(exec, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, generator_assembly, solution_count, adjoint_apply, ensemble);
criterion_main!(benches);

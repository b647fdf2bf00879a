use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qrm_bench::{config, traces};
use qrm_core::qrm::{QrmSystem, SystemKind};
use qrm_core::{solve_forward, ScalarField, TestId, WaveSpeed};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for dx in [0.1, 0.05] {
        let e = config(TestId::Test3, dx).prepare().unwrap();
        let p = e.source.sample(&e.outer);
        group.bench_with_input(BenchmarkId::from_parameter(dx), &dx, |b, _| {
            b.iter(|| solve_forward(&e.nonlinearity, &e.speed, &e.outer, &p).unwrap())
        });
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_and_factor");
    group.sample_size(10);
    for dx in [0.2, 0.1] {
        let e = config(TestId::Test1, dx).prepare().unwrap();
        let data = traces(TestId::Test1, dx);
        group.bench_with_input(BenchmarkId::from_parameter(dx), &dx, |b, _| {
            b.iter(|| QrmSystem::assemble(SystemKind::Step, &e.qrm, &WaveSpeed::default(), &data).unwrap())
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let dx = 0.1;
    let e = config(TestId::Test1, dx).prepare().unwrap();
    let data = traces(TestId::Test1, dx);
    let sys = QrmSystem::assemble(SystemKind::Step, &e.qrm, &WaveSpeed::default(), &data).unwrap();
    let s = ScalarField::zeros(data.grid);
    let a = sys.matrix();
    let x = vec![1.0; a.n_cols];
    c.bench_function("matvec", |b| b.iter(|| a.matvec(&x).unwrap()));
    c.bench_function("solve_step", |b| b.iter(|| sys.solve(Some(&s), None).unwrap()));
}

criterion_group!(benches, forward, assembly, step);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssgl_bench::timing_design;
use ssgl_core::debias::{build_theta, default_lambda};
use ssgl_core::solver::Solver;
use ssgl_core::{fit_path, SsglConfig, WarmStart};

fn sweep(c: &mut Criterion) {
    let cfg = SsglConfig::default();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    for g in [250, 500, 1000] {
        let design = timing_design(300, g, 1).unwrap();
        let warm = WarmStart::cold(&design).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(g), &g, |b, _| {
            let mut solver = Solver::new(&design, &cfg, 20.0, &warm).unwrap();
            b.iter(|| solver.sweep());
        });
    }
    group.finish();
}

fn path(c: &mut Criterion) {
    let design = timing_design(100, 150, 2).unwrap();
    let cfg = SsglConfig::default();
    let mut group = c.benchmark_group("path");
    group.sample_size(10);
    group.bench_function("n100_g150_default_ladder", |b| b.iter(|| fit_path(&design, &cfg).unwrap()));
    group.finish();
}

fn nodewise(c: &mut Criterion) {
    let design = timing_design(100, 50, 3).unwrap();
    let lambda = default_lambda(design.n(), design.p(), 1.0);
    let lambdas = vec![lambda; design.p()];
    let mut group = c.benchmark_group("nodewise");
    group.sample_size(10);
    group.bench_function("n100_p100", |b| b.iter(|| build_theta(design.x(), &lambdas).unwrap()));
    group.finish();
}

criterion_group!(benches, sweep, path, nodewise);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use diffreg_core::gof::bootstrap_test_with;
use diffreg_core::kernel::{KernelMatrices, KernelSpec};
use diffreg_core::regress::Design;
use diffreg_core::sim::{gen_dataset, run_replication, BootstrapConfig, SimConfig, SimContext};
use diffreg_core::{make_cosine_basis, rng, spectrum_diag, ParamFamily, Strategy};

fn kernel_assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel_assembly");
    for p in [5, 10, 15] {
        let basis = make_cosine_basis(p, 201).unwrap();
        let spec = KernelSpec::default();
        g.bench_with_input(BenchmarkId::from_parameter(p), &basis, |b, basis| {
            b.iter(|| KernelMatrices::helmholtz_default(black_box(basis), &spec).unwrap())
        });
    }
    g.finish();
}

fn setup(n: usize) -> (SimConfig, SimContext, diffreg_core::DataSet) {
    let cfg = SimConfig { n, p: 10, omega: 1.0, ..Default::default() };
    let ctx = SimContext::new(&cfg).unwrap();
    let data = gen_dataset(&cfg, &ctx.basis, &mut rng::stream(cfg.seed, 0)).unwrap().data;
    (cfg, ctx, data)
}

fn fitting(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    for n in [200, 400] {
        let (cfg, ctx, data) = setup(n);
        g.bench_function(BenchmarkId::new("design", n), |b| b.iter(|| Design::new(black_box(&data), &ctx.kernel).unwrap()));
        let design = Design::new(&data, &ctx.kernel).unwrap();
        g.bench_function(BenchmarkId::new("single_lambda", n), |b| b.iter(|| design.fit(data.f(), black_box(1e3)).unwrap()));
        g.bench_function(BenchmarkId::new("gcv_sweep", n), |b| b.iter(|| design.sweep(data.f(), &cfg.lambda_grid).unwrap()));
        g.bench_function(BenchmarkId::new("spectrum", n), |b| b.iter(|| spectrum_diag(&data, &ctx.kernel, 100).unwrap()));
    }
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(20);
    let (_, ctx, data) = setup(200);
    let design = Design::new(&data, &ctx.kernel).unwrap();
    let family = ParamFamily::scaled_neg_laplacian(&ctx.basis).unwrap();
    for strategy in [Strategy::Parametric, Strategy::Mixed] {
        g.bench_function(format!("{strategy:?}_b200").to_lowercase(), |b| {
            b.iter(|| bootstrap_test_with(&design, &data, 1e3, &family, 200, strategy, 7).unwrap())
        });
    }
    g.finish();
}

fn replication(c: &mut Criterion) {
    let mut g = c.benchmark_group("replication");
    g.sample_size(10);
    let plain = SimConfig { n: 200, p: 10, omega: 1.0, ess_refine: true, ..Default::default() };
    let tested = SimConfig { test: Some(BootstrapConfig::default()), ..plain.clone() };
    for (name, cfg) in [("estimators", plain), ("with_test", tested)] {
        let ctx = SimContext::new(&cfg).unwrap();
        g.bench_function(name, |b| b.iter(|| run_replication(&cfg, &ctx, black_box(3)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, kernel_assembly, fitting, bootstrap, replication);
criterion_main!(benches);

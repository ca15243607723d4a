use criterion::{criterion_group, criterion_main, Criterion};
use ltv_core::gramian::default_starts;
use ltv_core::{
    analyze, catalog, certify_dichotomy, check_uco, run_qr_flow, AnalysisOptions, CertGrid, IntegratorSettings, LtvSystem, QrSettings,
};

fn example(name: &str) -> LtvSystem {
    catalog::get(name).unwrap().build().unwrap()
}

fn qr_flow(c: &mut Criterion) {
    let sys = example("rotated_saddle");
    c.bench_function("qr_flow rotated_saddle T=60", |b| {
        b.iter(|| run_qr_flow(&sys, None, 60.0, &QrSettings::default()).unwrap())
    });
}

fn dichotomy(c: &mut Criterion) {
    let sys = example("periodic_triangular");
    let grid = CertGrid::default_for(60.0).unwrap();
    c.bench_function("certify_dichotomy periodic_triangular", |b| {
        b.iter(|| certify_dichotomy(&sys, 1, &grid, 1e-3, &IntegratorSettings::default()).unwrap())
    });
}

fn gramian(c: &mut Criterion) {
    let sys = example("rotating_output");
    let starts = default_starts(0.0, 60.0, 2.0, 32).unwrap();
    c.bench_function("check_uco rotating_output 32 windows", |b| {
        b.iter(|| check_uco(&sys, 2.0, &starts, None, &IntegratorSettings::default()).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("analyze");
    group.sample_size(10);
    for name in ["saddle_observed", "rotated_saddle"] {
        let sys = example(name);
        group.bench_function(name, |b| b.iter(|| analyze(&sys, &AnalysisOptions::default()).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, qr_flow, dichotomy, gramian, pipeline);
criterion_main!(benches);

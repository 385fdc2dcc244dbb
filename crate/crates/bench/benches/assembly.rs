use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nonconf_bench::{square, with_iterate};
use nonconf_core::forms::{scheme_form, SchemeParams};
use nonconf_core::transfer::CompanionData;
use nonconf_core::{build_space, ProblemKind, Scheme, SmootherTag};

fn forms(c: &mut Criterion) {
    let mut group = c.benchmark_group("scheme_form");
    let mesh = square(4);
    for scheme in Scheme::ALL {
        let space = build_space(mesh.clone(), scheme).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(scheme), &space, |b, s| {
            b.iter(|| scheme_form(black_box(s), &SchemeParams::default()).unwrap())
        });
    }
    group.finish();
}

fn companion(c: &mut Criterion) {
    let morley = build_space(square(4), Scheme::Morley).unwrap();
    c.bench_function("companion_data/level4", |b| b.iter(|| CompanionData::new(black_box(morley.clone())).unwrap()));
}

fn newton_pieces(c: &mut Criterion) {
    let mut group = c.benchmark_group("navier_stokes/level3");
    for scheme in [Scheme::Morley, Scheme::Dg] {
        let (d, x) = with_iterate(ProblemKind::NavierStokes, scheme, SmootherTag::Jim, 3);
        let r = d.residual(&x).unwrap();
        group.bench_function(BenchmarkId::new("residual", scheme), |b| b.iter(|| d.residual(black_box(&x)).unwrap()));
        group.bench_function(BenchmarkId::new("jacobian", scheme), |b| b.iter(|| d.jacobian(black_box(&x)).unwrap()));
        group.bench_function(BenchmarkId::new("newton_step", scheme), |b| {
            b.iter(|| d.newton_step(black_box(&x), &r).unwrap())
        });
    }
    group.finish();
}

fn short() -> Criterion {
    Criterion::default()
        .sample_size(10)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(3))
}

criterion_group! {
    name = benches;
    config = short();
    targets = forms, companion, newton_pieces
}
criterion_main!(benches);

use chern_extremal::geometry::chern_scalar;
use chern_extremal::grid::{partial_z, random_band_limited};
use chern_extremal::operators::complex_laplacian;
use chern_extremal::scenario::random_hermitian;
use chern_extremal::{gauduchon_factor, GridSpec, KrylovConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn derivatives(c: &mut Criterion) {
    let mut group = c.benchmark_group("partial_z");
    for points in [8, 16, 32] {
        let u = random_band_limited(GridSpec::new(2, points).unwrap(), 1, 3, 1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(points), &u, |b, u| b.iter(|| partial_z(u, 0)));
    }
    group.finish();
}

fn laplacian(c: &mut Criterion) {
    let mut group = c.benchmark_group("complex_laplacian");
    for points in [8, 16] {
        let spec = GridSpec::new(2, points).unwrap();
        let g = random_hermitian(spec, 2, 1, 0.2).unwrap();
        let u = random_band_limited(spec, 3, 3, 1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(points), &(g, u), |b, (g, u)| {
            b.iter(|| complex_laplacian(g, u).unwrap())
        });
    }
    group.finish();
}

fn curvature_and_gauduchon(c: &mut Criterion) {
    let g = random_hermitian(GridSpec::new(2, 8).unwrap(), 4, 1, 0.2).unwrap();
    c.bench_function("chern_scalar/8", |b| b.iter(|| chern_scalar(&g).unwrap()));
    let cfg = KrylovConfig::default();
    let mut group = c.benchmark_group("gauduchon_factor");
    group.sample_size(10);
    group.bench_function("8", |b| b.iter(|| gauduchon_factor(&g, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, derivatives, laplacian, curvature_and_gauduchon);
criterion_main!(benches);

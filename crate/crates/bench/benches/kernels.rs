use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use twistlab_core::laguerre::{laguerre_all, special_hermite};
use twistlab_core::restriction::{plancherel_kernel_norm, MultiplierPair, QuadConfig, SampledFunction};
use twistlab_core::symplectic::{decompose, DEFAULT_CLUSTER_TOL};
use twistlab_core::twisted::{apply_projection, projection_constant};
use twistlab_core::{BlockParams, Grid, GridFunction, GroupSpec, LatticePoint};

fn bench_decompose(c: &mut Criterion) {
    let free = GroupSpec::preset("free-n32").unwrap();
    let quat = GroupSpec::preset("htype-quaternion").unwrap();
    c.bench_function("decompose/free-n32", |b| b.iter(|| decompose(&free, black_box(&[0.3, -0.5, 0.8]), DEFAULT_CLUSTER_TOL)));
    c.bench_function("decompose/htype-quaternion", |b| b.iter(|| decompose(&quat, black_box(&[0.6, 0.0, 0.8]), DEFAULT_CLUSTER_TOL)));
}

fn bench_laguerre(c: &mut Criterion) {
    c.bench_function("laguerre_all/k=200", |b| b.iter(|| laguerre_all(200, 0.0, black_box(37.5))));
    c.bench_function("special_hermite/(3,1),(0,2)", |b| b.iter(|| special_hermite(&[3, 1], &[0, 2], 1.0, black_box(&[0.4, -0.2, 0.7, 0.1]))));
}

fn bench_projection(c: &mut Criterion) {
    let grid = Grid::centered(2, 48, 10.0);
    let f = GridFunction::from_real_fn(grid, |p| (-0.5 * (p[0] * p[0] + p[1] * p[1])).exp());
    let params = BlockParams::plane(1.0);
    let c0 = projection_constant(&params);
    let k = LatticePoint::new(vec![2]);
    c.bench_function("apply_projection/48x48", |b| b.iter(|| apply_projection(black_box(&f), &k, &params, c0)));
}

fn bench_plancherel(c: &mut Criterion) {
    let h1 = GroupSpec::preset("heisenberg:1").unwrap();
    let mp = MultiplierPair::new(
        SampledFunction::indicator(1.0, 4.0, 3001).unwrap(),
        SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(),
        4,
    )
    .unwrap();
    let quad = QuadConfig { radial_panels: 512, ..QuadConfig::default() };
    c.bench_function("plancherel_kernel_norm/h1/ell=4", |b| b.iter(|| plancherel_kernel_norm(&h1, black_box(&mp), &quad)));
}

criterion_group!(benches, bench_decompose, bench_laguerre, bench_projection, bench_plancherel);
criterion_main!(benches);

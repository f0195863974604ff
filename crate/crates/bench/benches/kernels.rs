use criterion::{criterion_group, criterion_main, Criterion};
use holonomy_core::geometry::Manifold;
use std::hint::black_box;

fn heat_kernels(c: &mut Criterion) {
    let circle = Manifold::circle(1.0).unwrap();
    let torus = Manifold::square_torus(2).unwrap();
    let sphere = Manifold::sphere();
    let (p, q) = (circle.point(&[0.0]).unwrap(), circle.point(&[0.37]).unwrap());
    let (tp, tq) = (torus.point(&[0.1, 0.2]).unwrap(), torus.point(&[0.6, 0.9]).unwrap());
    let mut g = c.benchmark_group("heat_kernel");
    for s in [1.0 / 64.0, 1.0] {
        g.bench_function(format!("circle s={s}"), |b| {
            b.iter(|| circle.heat_kernel(black_box(s), &p, &q).unwrap())
        });
        g.bench_function(format!("torus s={s}"), |b| {
            b.iter(|| torus.heat_kernel(black_box(s), &tp, &tq).unwrap())
        });
        g.bench_function(format!("sphere s={s}"), |b| {
            b.iter(|| sphere.sphere_heat_kernel_at_distance(black_box(s), 0.4).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, heat_kernels);
criterion_main!(benches);

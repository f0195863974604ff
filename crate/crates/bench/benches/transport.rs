use criterion::{criterion_group, criterion_main, Criterion};
use holonomy_core::bridge::{build_lifted_loop, build_loop, BridgeSampler, SamplerKind};
use holonomy_core::connections::{ConnectionDescriptor, MetricConnection};
use holonomy_core::geometry::Manifold;
use holonomy_core::rng::{stream, SAMPLING};
use holonomy_core::transport::{holonomy, holonomy_u1_exact, Steps};

fn transport(c: &mut Criterion) {
    let torus = Manifold::square_torus(2).unwrap();
    let sin = MetricConnection::from_descriptor(&ConnectionDescriptor::SinForm { amplitude: 1.0 }, &torus).unwrap();
    let sampler = BridgeSampler::new(&torus, torus.default_base_point(), 64, SamplerKind::Exact).unwrap();
    let lp = build_lifted_loop(&torus, &sampler.sample(&mut stream(1, SAMPLING, 0)).unwrap()).unwrap();

    let sphere = Manifold::sphere();
    let lc = MetricConnection::from_descriptor(&ConnectionDescriptor::LeviCivita, &sphere).unwrap();
    let ss = BridgeSampler::new(&sphere, sphere.default_base_point(), 64, SamplerKind::Is).unwrap();
    let mut rng = stream(1, SAMPLING, 1);
    let sp = loop {
        if let Ok(l) = build_loop(&sphere, &ss.sample(&mut rng).unwrap()) {
            break l;
        }
    };

    let mut g = c.benchmark_group("holonomy");
    g.bench_function("torus sin_form rk4 m=64", |b| b.iter(|| holonomy(&torus, &sin, &lp, Steps::DEFAULT).unwrap()));
    g.bench_function("torus sin_form exact m=64", |b| b.iter(|| holonomy_u1_exact(&sin, &lp).unwrap()));
    g.bench_function("sphere levi_civita rk4 m=64", |b| b.iter(|| holonomy(&sphere, &lc, &sp, Steps::DEFAULT).unwrap()));
    g.finish();
}

criterion_group!(benches, transport);
criterion_main!(benches);

use holonomy_core::bridge::{
    build_lifted_loop, build_loop, winding_class, Admissibility, BridgeSampler, PiecewiseGeodesicLoop, SamplerKind,
};
use holonomy_core::connections::{ConnectionDescriptor, ConnectionFamily, MetricConnection, OscillationDescriptor};
use holonomy_core::experiments::ensemble::Ensemble;
use holonomy_core::geometry::{Manifold, ManifoldPoint};
use holonomy_core::linalg::Mat;
use holonomy_core::measures::{arc_mass, bl_distance, u1_measure, MeasureKind, MeasureMeta};
use holonomy_core::rng::{stream, SAMPLING};
use holonomy_core::transport::{holonomy, HolonomyElement, Steps};
use proptest::prelude::*;

fn torus() -> Manifold {
    Manifold::square_torus(2).unwrap()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn turn_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn flat(periods: &[f64], oscillation: Option<OscillationDescriptor>) -> ConnectionDescriptor {
    ConnectionDescriptor::FlatU1 {
        periods: periods.to_vec(),
        oscillation,
    }
}

/// Lifted loop number `index` of a small torus ensemble.
fn torus_loop(t: &Manifold, m: usize, seed: u64, index: u64) -> PiecewiseGeodesicLoop {
    let sampler = BridgeSampler::new(t, t.default_base_point(), m, SamplerKind::Exact).unwrap();
    let v = sampler.sample(&mut stream(seed, SAMPLING, index)).unwrap();
    build_lifted_loop(t, &v).unwrap()
}

fn sphere_point(theta: f64, phi: f64) -> Vec<f64> {
    vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

fn measure(atoms: &[(f64, f64)]) -> holonomy_core::HolonomyMeasure {
    u1_measure(MeasureKind::Empirical, atoms, MeasureMeta::default()).unwrap()
}

fn atoms(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..n)
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn torus_distance_is_symmetric(a in prop::array::uniform2(-3.0f64..3.0), b in prop::array::uniform2(-3.0f64..3.0)) {
        let t = torus();
        let (p, q) = (t.point(&a).unwrap(), t.point(&b).unwrap());
        prop_assert_eq!(t.distance(&p, &q), t.distance(&q, &p));
    }

    #[test]
    fn sphere_distance_is_symmetric(a in (0.0f64..3.14, 0.0f64..6.28), b in (0.0f64..3.14, 0.0f64..6.28)) {
        let s = Manifold::sphere();
        let (p, q) = (s.point(&sphere_point(a.0, a.1)).unwrap(), s.point(&sphere_point(b.0, b.1)).unwrap());
        prop_assert_eq!(s.distance(&p, &q), s.distance(&q, &p));
    }

    #[test]
    fn interpolation_hits_its_endpoints(x in 0.0f64..1.0, dx in -0.24f64..0.24, y in 0.0f64..1.0, dy in -0.24f64..0.24) {
        let t = torus();
        let p = t.point(&[x, y]).unwrap();
        let q = t.point(&[x + dx, y + dy * 0.9]).unwrap();
        prop_assume!(t.distance(&p, &q) < t.rho());
        prop_assert!(t.distance(&t.interpolate(&p, &q, 0.0).unwrap(), &p) <= 1e-10);
        prop_assert!(t.distance(&t.interpolate(&p, &q, 1.0).unwrap(), &q) <= 1e-10);
    }

    #[test]
    fn sphere_interpolation_hits_its_endpoints(a in (0.3f64..2.8, 0.0f64..6.28), d in (-0.5f64..0.5, -0.5f64..0.5)) {
        let s = Manifold::sphere();
        let p = s.point(&sphere_point(a.0, a.1)).unwrap();
        let q = s.point(&sphere_point(a.0 + d.0, a.1 + d.1)).unwrap();
        prop_assume!(s.distance(&p, &q) < s.rho());
        prop_assert!(s.distance(&s.interpolate(&p, &q, 0.0).unwrap(), &p) <= 1e-10);
        prop_assert!(s.distance(&s.interpolate(&p, &q, 1.0).unwrap(), &q) <= 1e-10);
    }

    #[test]
    fn heat_kernel_is_exactly_symmetric(time in 0.01f64..2.0, a in prop::array::uniform2(0.0f64..1.0), b in prop::array::uniform2(0.0f64..1.0)) {
        let t = torus();
        let (p, q) = (t.point(&a).unwrap(), t.point(&b).unwrap());
        prop_assert_eq!(t.heat_kernel(time, &p, &q).unwrap(), t.heat_kernel(time, &q, &p).unwrap());
        let s = Manifold::sphere();
        let (p, q) = (s.point(&sphere_point(a[0] * 3.0, a[1] * 6.0)).unwrap(), s.point(&sphere_point(b[0] * 3.0, b[1] * 6.0)).unwrap());
        prop_assert_eq!(s.heat_kernel(time, &p, &q).unwrap(), s.heat_kernel(time, &q, &p).unwrap());
    }

    #[test]
    fn w1_is_a_pseudometric(a in atoms(8), b in atoms(8), c in atoms(8)) {
        let (a, b, c) = (measure(&a), measure(&b), measure(&c));
        let ab = bl_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(bl_distance(&a, &a).unwrap() <= 1e-15);
        prop_assert!((ab - bl_distance(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(bl_distance(&a, &c).unwrap() <= ab + bl_distance(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn w1_is_rotation_invariant(a in atoms(8), b in atoms(8), shift in 0.0f64..1.0) {
        let rot = |v: &[(f64, f64)]| v.iter().map(|&(t, w)| ((t + shift).rem_euclid(1.0), w)).collect::<Vec<_>>();
        let before = bl_distance(&measure(&a), &measure(&b)).unwrap();
        let after = bl_distance(&measure(&rot(&a)), &measure(&rot(&b))).unwrap();
        prop_assert!((before - after).abs() <= 1e-12, "{} vs {}", before, after);
    }

    #[test]
    fn arc_mass_shrinks_with_the_window(a in atoms(12), e1 in 0.001f64..0.499, e2 in 0.001f64..0.499) {
        let mu = measure(&a);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(arc_mass(&mu, hi).unwrap() <= arc_mass(&mu, lo).unwrap());
    }

    #[test]
    fn skew_exponential_is_orthogonal(rank in 2usize..=4, entries in prop::collection::vec(-3.0f64..3.0, 6)) {
        let mut a = Mat::zeros(rank);
        let mut k = 0;
        for i in 0..rank {
            for j in i + 1..rank {
                a.set(i, j, entries[k]);
                a.set(j, i, -entries[k]);
                k += 1;
            }
        }
        prop_assert!(a.exp().orthogonality_defect() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn family_deviation_is_monotone(delta in 0.0f64..1.0, amp in 0.0f64..2.0) {
        let t = torus();
        let d = ConnectionDescriptor::Family {
            base: Box::new(ConnectionDescriptor::SinForm { amplitude: amp }),
            delta: Box::new(flat(&[delta, 0.5 * delta], None)),
            schedule: vec![1.0, 0.5, 0.25, 0.125],
        };
        let f = ConnectionFamily::from_descriptor(&d, &t).unwrap();
        let devs = f.schedule().iter().map(|&s| f.c0_deviation(&t, s, 64).unwrap()).collect::<Vec<_>>();
        prop_assert!(devs.windows(2).all(|w| w[1] <= w[0]), "{:?}", devs);
    }

    #[test]
    fn holonomy_is_orthogonal_and_reverses(seed in 0u64..1_000_000, amp in 0.1f64..2.0) {
        let t = torus();
        let conn = MetricConnection::from_descriptor(&ConnectionDescriptor::SinForm { amplitude: amp }, &t).unwrap();
        let lp = torus_loop(&t, 16, seed, 0);
        let h = holonomy(&t, &conn, &lp, Steps::DEFAULT).unwrap();
        let r = holonomy(&t, &conn, &lp.reversed(), Steps::DEFAULT).unwrap();
        prop_assert!(h.orthogonality_defect() <= 1e-9);
        let defect = (*h.matrix() * *r.matrix() - Mat::identity(2)).frobenius_norm();
        prop_assert!(defect <= 1e-9, "reversal defect {}", defect);
    }

    #[test]
    fn concatenation_composes_holonomies(seed in 0u64..1_000_000) {
        let t = torus();
        let conn = MetricConnection::from_descriptor(&ConnectionDescriptor::SinForm { amplitude: 1.5 }, &t).unwrap();
        let (a, b) = (torus_loop(&t, 8, seed, 0), torus_loop(&t, 8, seed, 1));
        let ha = holonomy(&t, &conn, &a, Steps::DEFAULT).unwrap();
        let hb = holonomy(&t, &conn, &b, Steps::DEFAULT).unwrap();
        let hab = holonomy(&t, &conn, &a.concat(&b), Steps::DEFAULT).unwrap();
        let defect = (*hab.matrix() - *hb.matrix() * *ha.matrix()).frobenius_norm();
        prop_assert!(defect <= 1e-9, "{}", defect);
    }

    #[test]
    fn flat_holonomy_depends_on_winding_only(seed in 0u64..1_000_000, p in prop::array::uniform2(0.0f64..1.0), amp in 0.0f64..0.2) {
        let t = torus();
        let osc = OscillationDescriptor { wavevector: vec![1, 2], amplitude: amp };
        let plain = MetricConnection::from_descriptor(&flat(&p, None), &t).unwrap();
        let gauged = MetricConnection::from_descriptor(&flat(&p, Some(osc)), &t).unwrap();
        let lp = torus_loop(&t, 16, seed, 0);
        let nu = winding_class(&t, &lp).unwrap().0;
        let expected = (p[0] * nu[0] as f64 + p[1] * nu[1] as f64).rem_euclid(1.0);
        let a = holonomy(&t, &plain, &lp, Steps::DEFAULT).unwrap().u1_angle().unwrap();
        let b = holonomy(&t, &gauged, &lp, Steps::DEFAULT).unwrap().u1_angle().unwrap();
        prop_assert!(turn_dist(a, expected) <= 1e-9, "{} vs {}", a, expected);
        prop_assert!(turn_dist(a, b) <= 1e-9, "gauge shift {}", turn_dist(a, b));
    }

    #[test]
    fn vertex_streams_are_deterministic(seed in 0u64..1_000_000, index in 0usize..500) {
        let c = Manifold::circle(1.0).unwrap();
        let mut small = Ensemble::new(&c, c.default_base_point(), 16, SamplerKind::Exact, seed, 10).unwrap();
        let mut large = Ensemble::new(&c, c.default_base_point(), 16, SamplerKind::Exact, seed, 1000).unwrap();
        small.admissibility = Admissibility::Lift;
        large.admissibility = Admissibility::Lift;
        let (a, b) = (small.draw(index).unwrap(), large.draw(index).unwrap());
        let coords = |v: &[ManifoldPoint]| v.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>();
        prop_assert_eq!(coords(a.vertices.vertices()), coords(b.vertices.vertices()));
        prop_assert_eq!(a.attempts, b.attempts);
    }
}

proptest! {
    #![proptest_config(config(20))]

    #[test]
    fn rejection_counts_add_up(seed in 0u64..1_000_000, lift in any::<bool>(), m in prop::sample::select(vec![4usize, 8, 16])) {
        let c = Manifold::circle(1.0).unwrap();
        let mut e = Ensemble::new(&c, c.default_base_point(), m, SamplerKind::Exact, seed, 200).unwrap();
        e.admissibility = if lift { Admissibility::Lift } else { Admissibility::Enforce };
        e.max_attempts = 1_000_000;
        let (_, counter) = e.map(|_, _| Ok(())).unwrap();
        prop_assert_eq!(counter.accepted + counter.rejected, counter.attempted);
        if !lift {
            prop_assert_eq!(counter.accepted, 200);
        }
    }

    #[test]
    fn enforced_loops_are_admissible(seed in 0u64..1_000_000) {
        let t = torus();
        let sampler = BridgeSampler::new(&t, t.default_base_point(), 32, SamplerKind::Exact).unwrap();
        let mut rng = stream(seed, SAMPLING, 0);
        for _ in 0..20 {
            let v = sampler.sample(&mut rng).unwrap();
            let ok = holonomy_core::bridge::is_admissible(&t, &v);
            prop_assert_eq!(ok, build_loop(&t, &v).is_ok());
        }
    }
}

#[test]
fn identity_holonomy_has_zero_angle() {
    assert_eq!(HolonomyElement::identity(2).u1_angle(), Some(0.0));
}

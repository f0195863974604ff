//! Monte Carlo and quadrature checks against independent oracles.

use std::collections::HashMap;
use std::f64::consts::PI;

use holonomy_core::bridge::{build_lifted_loop, BridgeSampler, SamplerKind};
use holonomy_core::connections::{ConnectionDescriptor, MetricConnection};
use holonomy_core::experiments::{run_distribution, ExperimentConfig};
use holonomy_core::geometry::{Manifold, ManifoldDescriptor};
use holonomy_core::rng::{stream, ITO, SAMPLING};
use holonomy_core::transport::{
    holonomy, holonomy_u1_exact, transport_ito_euler_with, Steps, ITO_CONVENTIONAL, ITO_LITERAL,
};

fn circle() -> Manifold {
    Manifold::circle(1.0).unwrap()
}

fn turn_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Periodic trapezoid rule, spectrally accurate for smooth periodic integrands.
fn periodic_mean(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    (0..n).map(|k| f(k as f64 / n as f64)).sum::<f64>() / n as f64
}

#[test]
fn heat_kernel_integrates_to_one() {
    let c = circle();
    let p = c.default_base_point();
    for s in [0.01, 0.1, 0.5, 1.0, 3.0] {
        let total = periodic_mean(2000, |x| c.heat_kernel(s, &p, &c.point(&[x]).unwrap()).unwrap());
        assert!((total - 1.0).abs() < 1e-6, "circle s = {s}: {total}");
    }

    let t = Manifold::square_torus(2).unwrap();
    let p = t.point(&[0.3, 0.7]).unwrap();
    for s in [0.02, 0.25, 1.0] {
        let n = 200;
        let total = periodic_mean(n, |x| {
            periodic_mean(n, |y| t.heat_kernel(s, &p, &t.point(&[x, y]).unwrap()).unwrap())
        });
        assert!((total - 1.0).abs() < 1e-6, "torus s = {s}: {total}");
    }

    // Gauss-Legendre in the polar angle about the base point.
    let s2 = Manifold::sphere();
    let n = 400;
    let (nodes, weights) = gauss_legendre(n);
    for s in [0.05, 0.25, 1.0] {
        let total: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(&u, &w)| {
                let theta = 0.5 * PI * (u + 1.0);
                0.5 * PI * w * 2.0 * PI * theta.sin() * s2.sphere_heat_kernel_at_distance(s, theta).unwrap()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "sphere s = {s}: {total}");
    }
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

#[test]
fn heat_kernel_semigroup_on_the_circle() {
    let c = circle();
    let x = c.default_base_point();
    for s1 in [0.25, 0.5] {
        for s2 in [0.25, 0.5] {
            for y in [0.0, 0.17, 0.5, 0.81] {
                let y = c.point(&[y]).unwrap();
                let lhs = periodic_mean(1000, |z| {
                    let z = c.point(&[z]).unwrap();
                    c.heat_kernel(s1, &x, &z).unwrap() * c.heat_kernel(s2, &z, &y).unwrap()
                });
                let rhs = c.heat_kernel(s1 + s2, &x, &y).unwrap();
                assert!((lhs - rhs).abs() < 1e-5, "s = {s1} + {s2}: {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn bridge_midpoint_marginal_on_the_circle() {
    let c = circle();
    let base = c.default_base_point();
    let sampler = BridgeSampler::new(&c, base.clone(), 4, SamplerKind::Exact).unwrap();
    let (n, bins) = (100_000usize, 50usize);
    let mut counts = vec![0usize; bins];
    for i in 0..n {
        let v = sampler.sample(&mut stream(7, SAMPLING, i as u64)).unwrap();
        let x = v.vertices()[1].coords()[0].rem_euclid(1.0);
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let diag = c.heat_kernel(1.0, &base, &base).unwrap();
    let density = |x: f64| {
        let p = c.heat_kernel(0.5, &base, &c.point(&[x]).unwrap()).unwrap();
        p * p / diag
    };
    let (nodes, weights) = gauss_legendre(16);
    for (k, &count) in counts.iter().enumerate() {
        let (lo, h) = (k as f64 / bins as f64, 1.0 / bins as f64);
        let prob: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(&u, &w)| 0.5 * h * w * density(lo + 0.5 * h * (u + 1.0)))
            .sum();
        let expected = n as f64 * prob;
        let sigma = (n as f64 * prob * (1.0 - prob)).sqrt();
        assert!(
            (count as f64 - expected).abs() < 3.0 * sigma,
            "bin {k}: {count} vs {expected:.1} ± {sigma:.1}"
        );
    }
}

/// Weighted class frequencies with delta-method standard errors.
fn winding_frequencies(samples: &[(Vec<i64>, f64)]) -> HashMap<Vec<i64>, (f64, f64)> {
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let mut mass: HashMap<Vec<i64>, f64> = HashMap::new();
    for (nu, w) in samples {
        *mass.entry(nu.clone()).or_default() += w / total;
    }
    mass.into_iter()
        .map(|(nu, p)| {
            let var: f64 = samples
                .iter()
                .map(|(c, w)| {
                    let ind = if *c == nu { 1.0 } else { 0.0 };
                    (w / total * (ind - p)).powi(2)
                })
                .sum();
            (nu, (p, var.sqrt()))
        })
        .collect()
}

#[test]
fn importance_sampler_matches_exact_windings_on_the_torus() {
    let t = Manifold::square_torus(2).unwrap();
    let n = 100_000;
    for m in [8, 64] {
        let draw = |kind| {
            let s = BridgeSampler::new(&t, t.default_base_point(), m, kind).unwrap();
            (0..n)
                .map(|i| {
                    let v = s.sample(&mut stream(2024 + m as u64, SAMPLING, i)).unwrap();
                    (v.drawn_winding().unwrap().to_vec(), v.weight())
                })
                .collect::<Vec<_>>()
        };
        let exact = winding_frequencies(&draw(SamplerKind::Exact));
        let is = winding_frequencies(&draw(SamplerKind::Is));
        for a in -1..=1 {
            for b in -1..=1 {
                let nu = vec![a, b];
                let (pe, se) = exact.get(&nu).copied().unwrap_or((0.0, 0.0));
                let (pi, si) = is.get(&nu).copied().unwrap_or((0.0, 0.0));
                let sigma = se.hypot(si);
                assert!((pe - pi).abs() < 3.0 * sigma, "m = {m}, ν = {nu:?}: {pe} vs {pi} ± {sigma}");
            }
        }
    }
}

/// Bins where the Itô histogram leaves 3σ of the piecewise-geodesic one, and the
/// mean angle error. The bins are offset so that the atoms `0.3ν` sit at their centres.
fn ito_histogram_check(bins: usize, substeps: usize, correction: f64) -> (Vec<String>, f64) {
    let c = circle();
    let conn = MetricConnection::from_descriptor(
        &ConnectionDescriptor::FlatU1 {
            periods: vec![0.3],
            oscillation: None,
        },
        &c,
    )
    .unwrap();
    let sampler = BridgeSampler::new(&c, c.default_base_point(), 64, SamplerKind::Exact).unwrap();
    let (n, offset) = (10_000usize, 0.5 / bins as f64);
    let mut reference = vec![0usize; bins];
    let mut ito = vec![0usize; bins];
    let mut err = 0.0;
    let bin = |t: f64| (((t - offset).rem_euclid(1.0) * bins as f64) as usize).min(bins - 1);
    for i in 0..n {
        let v = sampler.sample(&mut stream(99, SAMPLING, i as u64)).unwrap();
        let lp = build_lifted_loop(&c, &v).unwrap();
        let exact = holonomy(&c, &conn, &lp, Steps::DEFAULT).unwrap().u1_angle().unwrap();
        let mut rng = stream(99, ITO, i as u64);
        let a = transport_ito_euler_with(&c, &conn, &v, substeps, correction, &mut rng).unwrap();
        let a = a.u1_angle().unwrap();
        reference[bin(exact)] += 1;
        ito[bin(a)] += 1;
        err += turn_dist(a, exact) / n as f64;
    }
    let bad = (0..bins)
        .filter_map(|k| {
            let p = 0.5 * (reference[k] + ito[k]) as f64 / n as f64;
            let sigma = (2.0 * n as f64 * p * (1.0 - p)).sqrt();
            let diff = (reference[k] as f64 - ito[k] as f64).abs();
            (diff > 3.0 * sigma).then(|| format!("bin {k}: {} vs {}", reference[k], ito[k]))
        })
        .collect();
    (bad, err)
}

#[test]
fn ito_scheme_reproduces_the_flat_histogram() {
    let (bad, err16) = ito_histogram_check(10, 16, ITO_LITERAL);
    assert!(bad.is_empty(), "{bad:?}");
    let (_, err4) = ito_histogram_check(10, 4, ITO_LITERAL);
    assert!(err16 < err4, "mean angle error {err16} at 16 substeps vs {err4} at 4");
}

#[test]
fn printed_ito_coefficient_costs_accuracy() {
    // Γ² = -(2πθ)² I here, so the ds term rescales each step and tilts the angle
    // by about -4(2πθ)³ ds per unit winding, against -(2πθ)³ ds for the conventional term.
    let (_, literal) = ito_histogram_check(10, 16, ITO_LITERAL);
    let (bad, conventional) = ito_histogram_check(10, 16, ITO_CONVENTIONAL);
    assert!(bad.is_empty(), "{bad:?}");
    assert!(literal > 1.5 * conventional, "{literal} vs {conventional}");
}

#[test]
fn exact_line_integral_matches_ode_on_sin_form_loops() {
    let t = Manifold::square_torus(2).unwrap();
    let conn = MetricConnection::from_descriptor(&ConnectionDescriptor::SinForm { amplitude: 1.0 }, &t).unwrap();
    let sampler = BridgeSampler::new(&t, t.default_base_point(), 32, SamplerKind::Exact).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let v = sampler.sample(&mut stream(5, SAMPLING, i)).unwrap();
        let lp = build_lifted_loop(&t, &v).unwrap();
        let ode = holonomy(&t, &conn, &lp, Steps::DEFAULT).unwrap();
        let exact = holonomy_u1_exact(&conn, &lp).unwrap();
        worst = worst.max((*ode.matrix() - *exact.matrix()).frobenius_norm());
    }
    assert!(worst < 1e-9, "worst gap {worst}");
}

#[test]
fn sphere_runs_with_two_seeds_agree() {
    let cfg = ExperimentConfig::from_json(
        &serde_json::json!({
            "manifold": ManifoldDescriptor::Sphere2,
            "connection": ConnectionDescriptor::LeviCivita,
            "m": [64],
            "samples": 10000,
            "seed": 42,
            "compare_seed": 43,
            "sampler": "is",
            "bootstrap": 20,
        })
        .to_string(),
    )
    .unwrap();
    let r = run_distribution(&cfg).unwrap();
    let two = &r.summary["runs"][0]["two_seed"];
    assert_eq!(two["pass"], serde_json::json!(true), "{two}");
}

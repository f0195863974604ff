use std::f64::consts::PI;
use std::time::Instant;

use serde_json::json;

use crate::bridge::{Admissibility, PiecewiseGeodesicLoop, WindingTable};
use crate::connections::{ConnectionDescriptor, FlatU1Form, MetricConnection};
use crate::error::Result;
use crate::geometry::{Manifold, ManifoldDescriptor};
use crate::measures::{
    analytic_flat_u1, arc_mass, bl_distance, support_estimate, u1_measure, MeasureKind, MeasureMeta,
};
use crate::transport::{holonomy, Steps};

use super::config::{ExperimentConfig, SubgroupDescriptor};
use super::report::{ExperimentReport, Verdict};
use super::runners::{
    extrapolate_limit, run_bs_detector, run_distribution, run_jump_demo, run_stokes, run_subgroup_criterion,
    subgroup_distance,
};

/// Geodesic triangle with vertices on the three positive axes, refined so that
/// every segment is shorter than `ρ`.
pub fn octant_triangle(s: &Manifold) -> Result<PiecewiseGeodesicLoop> {
    let h = 0.5f64.sqrt();
    let pts = [[h, h, 0.0], [0.0, 1.0, 0.0], [0.0, h, h], [0.0, 0.0, 1.0], [h, 0.0, h]];
    let pts = pts.iter().map(|p| s.point(p)).collect::<Result<Vec<_>>>()?;
    PiecewiseGeodesicLoop::through(s, &s.default_base_point(), &pts)
}

struct Case {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn small(manifold: ManifoldDescriptor, connection: ConnectionDescriptor, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        manifold,
        connection,
        base_point: None,
        m: vec![64],
        samples: 2000,
        seed: Some(seed),
        sampler: crate::bridge::SamplerKind::Exact,
        transport: Default::default(),
        steps_per_segment: None,
        ito_substeps: 16,
        ito_correction: crate::transport::ITO_LITERAL,
        admissibility: Admissibility::Lift,
        max_attempts: 1000,
        out: None,
        workers: 1,
        bootstrap: 50,
        hist_bins: 100,
        eps: vec![0.05, 0.1],
        merge_tol: 0.01,
        threshold: None,
        subgroup: None,
        reference_m: None,
        analytic_tail: 1e-12,
        resolution: 0.01,
        enumerate: 100,
        permutations: 200,
        compare_seed: None,
    }
}

fn circle() -> ManifoldDescriptor {
    ManifoldDescriptor::Circle { circumference: 1.0 }
}

fn torus() -> ManifoldDescriptor {
    ManifoldDescriptor::FlatTorus {
        basis: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    }
}

fn flat(periods: &[f64]) -> ConnectionDescriptor {
    ConnectionDescriptor::FlatU1 {
        periods: periods.to_vec(),
        oscillation: None,
    }
}

fn flat_family(base: &[f64], delta: &[f64], schedule: &[f64]) -> ConnectionDescriptor {
    ConnectionDescriptor::Family {
        base: Box::new(flat(base)),
        delta: Box::new(flat(delta)),
        schedule: schedule.to_vec(),
    }
}

const HALVINGS: [f64; 7] = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];

fn cases(seed: u64) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    let mut push = |name, pass, detail: String| out.push(Case { name, pass, detail });

    let c = Manifold::circle(1.0)?;
    let table = WindingTable::new(c.lattice().expect("circle"), 1e-12);
    let frozen = [0.28209479177387814, 0.21969564473386122, 0.10377687435514868, 0.029732572305907355];
    let worst = (0..4)
        .map(|k| (table.probability(&[k]) - frozen[k as usize]).abs())
        .fold(0.0, f64::max);
    push("winding weights on the unit circle", worst < 1e-15, format!("max deviation {worst:e}"));

    let d0 = u1_measure(MeasureKind::Empirical, &[(0.0, 1.0)], MeasureMeta::default())?;
    let dh = u1_measure(MeasureKind::Empirical, &[(0.5, 1.0)], MeasureMeta::default())?;
    let two = u1_measure(MeasureKind::Empirical, &[(0.0, 1.0), (0.5, 1.0)], MeasureMeta::default())?;
    let a = bl_distance(&d0, &dh)?;
    let b = bl_distance(&d0, &two)?;
    push(
        "circle W1 examples",
        (a - PI).abs() < 1e-15 && (b - PI / 2.0).abs() < 1e-15 && bl_distance(&two, &two)? == 0.0,
        format!("{a} and {b}"),
    );

    let zero = analytic_flat_u1(&c, &FlatU1Form::new(&[0.0]), 1e-12)?;
    push(
        "flat measure without holonomy is a Dirac mass",
        zero.atoms().len() == 1 && (zero.atoms()[0].weight - 1.0).abs() < 1e-15,
        format!("{} atoms", zero.atoms().len()),
    );

    let quarter = analytic_flat_u1(&c, &FlatU1Form::new(&[0.25]), 1e-12)?;
    let clusters = support_estimate(&quarter, 0.01)?;
    let off = clusters
        .iter()
        .map(|k| subgroup_distance(&k.center, &SubgroupDescriptor::Roots { order: 4 }))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    push(
        "rational period gives four roots",
        clusters.len() == 4 && off < 1e-9,
        format!("{} clusters, max offset {off:e}", clusters.len()),
    );

    let third = analytic_flat_u1(&c, &FlatU1Form::new(&[0.3]), 1e-12)?;
    let mass = arc_mass(&third, 0.1)?;
    let form = FlatU1Form::new(&[0.3]);
    let oracle: f64 = table
        .classes()
        .iter()
        .filter(|(nu, _)| {
            let t = form.holonomy_angle(nu);
            t > 0.1 && t < 0.9
        })
        .map(|(_, w)| w)
        .sum();
    push("arc mass at period 0.3", (mass - oracle).abs() < 1e-12, format!("{mass} vs {oracle}"));

    let s = Manifold::sphere();
    let lc = MetricConnection::from_descriptor(&ConnectionDescriptor::LeviCivita, &s)?;
    let lp = octant_triangle(&s)?;
    let turns = holonomy(&s, &lc, &lp, Steps::DEFAULT)?.u1_angle().unwrap_or(f64::NAN);
    push(
        "octant triangle rotates by a quarter turn",
        (2.0 * PI * turns - PI / 2.0).abs() < 1e-6,
        format!("{turns} turns"),
    );

    let trivial = run_distribution(&small(
        circle(),
        ConnectionDescriptor::Trivial { rank: 2 },
        seed,
    ))?;
    let (_, mu) = &trivial.measures[trivial.measures.len() - 1];
    let dirac = mu.atoms().iter().all(|a| a.angle == Some(0.0));
    push("trivial connection gives the identity", dirac, format!("{} atoms", mu.atoms().len()));

    let dist = run_distribution(&small(circle(), flat(&[0.3]), seed))?;
    push(
        "circle period 0.3 matches the analytic measure",
        dist.verdict == Some(Verdict::Pass),
        dist.summary["runs"][0]["analytic"].to_string(),
    );

    let mut stokes = small(torus(), flat(&[0.3, 0.6]), seed);
    stokes.samples = 5;
    let st = run_stokes(&stokes)?;
    push("flat Stokes residuals", st.verdict == Some(Verdict::Pass), st.summary["max_residual"].to_string());

    let jump = run_jump_demo(&small(circle(), flat_family(&[0.0], &[2f64.sqrt() - 1.0], &HALVINGS), seed))?;
    let limit_zero = jump.summary["runs"][0]["limit_mass_zero"] == json!(true);
    push("jump limit carries no arc mass", limit_zero, String::new());

    let mut sub = small(circle(), flat(&[0.25]), seed);
    sub.subgroup = Some(SubgroupDescriptor::Roots { order: 4 });
    let r = run_subgroup_criterion(&sub)?;
    push("period 1/4 stays in the fourth roots", r.verdict == Some(Verdict::Pass), r.summary["max_outside_mass"].to_string());
    let mut sub = small(circle(), flat(&[0.3]), seed);
    sub.subgroup = Some(SubgroupDescriptor::Trivial);
    let r = run_subgroup_criterion(&sub)?;
    let outside = r.table("subgroup").and_then(|t| t.column("outside_mass")).map_or(f64::NAN, |c| c[0]);
    push(
        "period 0.3 escapes the trivial group",
        r.verdict == Some(Verdict::Fail) && (outside - (1.0 - frozen[0])).abs() < 0.05,
        format!("outside mass {outside}"),
    );

    let bs = run_bs_detector(&small(torus(), flat_family(&[0.0, 0.0], &[0.3, 0.6], &HALVINGS), seed))?;
    push("shrinking periods are detected", bs.verdict == Some(Verdict::Pass), bs.summary["detection"].to_string());
    let bs = run_bs_detector(&small(torus(), flat_family(&[0.5, 0.0], &[0.0, 0.0], &HALVINGS), seed))?;
    push("a persistent half period is rejected", bs.verdict == Some(Verdict::Fail), bs.summary["detection"].to_string());
    let bs = run_bs_detector(&small(torus(), flat_family(&[0.0, 0.0], &[0.0, 0.0], &HALVINGS), seed))?;
    push("zero periods pass trivially", bs.verdict == Some(Verdict::Pass), bs.summary["detection"].to_string());

    let geo = extrapolate_limit([0.4, 0.2, 0.1]);
    let flat_line = extrapolate_limit([0.5, 0.5, 0.5]);
    push(
        "limit extrapolation",
        geo.abs() < 1e-15 && flat_line == 0.5,
        format!("{geo} and {flat_line}"),
    );

    let mut unseeded = small(circle(), flat(&[0.3]), seed);
    unseeded.seed = None;
    push("a missing seed is an error", unseeded.validate().is_err(), String::new());
    Ok(out)
}

/// Fast oracle checks across all modules.
pub fn run_selftest(seed: u64) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let cases = cases(seed)?;
    let ok = cases.iter().all(|c| c.pass);
    let mut report = ExperimentReport::new("selftest", String::new(), seed);
    report.summary = json!({
        "cases": cases
            .iter()
            .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
            .collect::<Vec<_>>(),
        "passed": cases.iter().filter(|c| c.pass).count(),
        "total": cases.len(),
    });
    report.verdict = Some(Verdict::from_bool(ok));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

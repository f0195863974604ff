use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bridge::{winding_class, RejectionCounter, WindingTable};
use crate::connections::{ConnectionDescriptor, ConnectionFamily, FlatU1Form, MetricConnection};
use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldKind, ManifoldPoint};
use crate::measures::{
    analytic_flat_u1, arc_mass, bl_distance, bootstrap_sigma, circular_gap, empirical_measure, permutation_test,
    support_estimate, HolonomyMeasure, MeasureMeta, U1Histogram,
};
use crate::numeric::CompensatedSum;
use crate::output::F17;
use crate::rng::{stream, BOOTSTRAP, PERMUTATION};
use crate::transport::{stokes_check, HolonomyElement, Steps};

use super::config::{ExperimentConfig, SubgroupDescriptor};
use super::ensemble::{loop_holonomy, Ensemble};
use super::report::{ExperimentReport, Table, Verdict};

/// Rejection rate regarded as acceptable in every run.
pub const DEFICIT_ENVELOPE: f64 = 0.01;

/// Default outside-mass threshold of `subgroup`.
pub const SUBGROUP_THRESHOLD: f64 = 1e-9;

/// Default limit-mass threshold of `bs-detect`.
pub const BS_THRESHOLD: f64 = 0.01;

/// Significance level of the two-seed comparison in `dist`.
pub const TWO_SAMPLE_LEVEL: f64 = 0.01;

struct Setup {
    manifold: Manifold,
    base: ManifoldPoint,
    seed: u64,
    hash: String,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let manifold = cfg.manifold()?;
    let base = cfg.base_point(&manifold)?;
    Ok(Setup {
        manifold,
        base,
        seed: cfg.seed()?,
        hash: cfg.hash(),
    })
}

/// One loop transported under several connections.
pub struct Sample {
    pub holonomies: Vec<HolonomyElement>,
    pub weight: f64,
    pub winding: Option<Vec<i64>>,
}

fn sample_ensemble(
    cfg: &ExperimentConfig,
    s: &Setup,
    m: usize,
    seed: u64,
    conns: &[MetricConnection],
) -> Result<(Vec<Sample>, RejectionCounter)> {
    let mut e = Ensemble::new(&s.manifold, s.base.clone(), m, cfg.sampler, seed, cfg.samples)?;
    e.admissibility = cfg.admissibility;
    e.max_attempts = cfg.max_attempts;
    e.workers = cfg.workers;
    let steps = cfg.steps();
    log::info!("sampling {} loops at m = {m} (seed {seed}, {} connections)", cfg.samples, conns.len());
    e.map(|i, d| {
        let holonomies = conns
            .iter()
            .map(|c| loop_holonomy(&s.manifold, c, d, cfg.transport, steps, (seed, i, cfg.ito_substeps, cfg.ito_correction)))
            .collect::<Result<Vec<_>>>()?;
        let winding = match s.manifold.lattice() {
            Some(_) => Some(winding_class(&s.manifold, &d.path)?.0),
            None => None,
        };
        Ok(Sample {
            holonomies,
            weight: d.vertices.weight(),
            winding,
        })
    })
}

fn meta(cfg: &ExperimentConfig, m: usize, seed: u64, counter: &RejectionCounter) -> MeasureMeta {
    MeasureMeta {
        m: Some(m),
        samples: cfg.samples as u64,
        seed: Some(seed),
        deficit: counter.rejection_rate(),
        omitted_mass: 0.0,
    }
}

fn measure_of(samples: &[Sample], k: usize, meta: MeasureMeta) -> Result<HolonomyMeasure> {
    let pairs: Vec<(HolonomyElement, f64)> = samples.iter().map(|s| (s.holonomies[k], s.weight)).collect();
    empirical_measure(&pairs, meta)
}

fn deficit_json(m: usize, c: &RejectionCounter) -> Value {
    json!({
        "m": m,
        "attempted": c.attempted,
        "rejected": c.rejected,
        "rejection_rate": F17(c.rejection_rate()),
        "within_envelope": c.rejection_rate() < DEFICIT_ENVELOPE,
    })
}

fn bootstrap(cfg: &ExperimentConfig, mu: &HolonomyMeasure, seed: u64, tag: u64) -> Result<f64> {
    let mut rng = stream(seed, BOOTSTRAP, tag);
    bootstrap_sigma(mu, cfg.samples as u64, cfg.bootstrap, &mut rng)
}

fn family(cfg: &ExperimentConfig, manifold: &Manifold) -> Result<ConnectionFamily> {
    match &cfg.connection {
        ConnectionDescriptor::Family { .. } => ConnectionFamily::from_descriptor(&cfg.connection, manifold),
        _ => Err(Error::InvalidConfig("this subcommand needs a \"family\" connection".into())),
    }
}

/// Single connections become a one-member list labelled `t = NaN`.
fn members(cfg: &ExperimentConfig, manifold: &Manifold) -> Result<Vec<(f64, MetricConnection)>> {
    match &cfg.connection {
        ConnectionDescriptor::Family { .. } => {
            let f = ConnectionFamily::from_descriptor(&cfg.connection, manifold)?;
            Ok(f.schedule().iter().map(|&t| (t, f.member(t))).collect())
        }
        d => Ok(vec![(f64::NAN, MetricConnection::from_descriptor(d, manifold)?)]),
    }
}

fn flat_form<'a>(manifold: &Manifold, conn: &'a MetricConnection) -> Option<&'a FlatU1Form> {
    if manifold.is_flat() {
        conn.flat_u1()
    } else {
        None
    }
}

fn winding_table(
    lattice: &crate::geometry::Lattice,
    samples: &[Sample],
    name: &str,
) -> (Table, bool) {
    let n = lattice.dim();
    let oracle = WindingTable::new(lattice, 1e-12);
    let mut cols: Vec<String> = (1..=n).map(|k| format!("nu_{k}")).collect();
    cols.extend(["count", "frequency", "expected", "sigma"].map(String::from));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut table = Table::new(name, &col_refs);
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let count = samples.len() as f64;
    let mut ok = true;
    let mut classes: Vec<Vec<i64>> = oracle
        .classes()
        .iter()
        .map(|c| c.0.clone())
        .filter(|nu| nu.iter().all(|k| k.abs() <= 3))
        .collect();
    classes.sort();
    for nu in classes {
        let hits: Vec<&Sample> = samples.iter().filter(|s| s.winding.as_deref() == Some(&nu[..])).collect();
        let freq = hits.iter().map(|s| s.weight).sum::<f64>() / total;
        let w = oracle.probability(&nu);
        let sigma = (w * (1.0 - w) / count).sqrt();
        ok &= (freq - w).abs() <= 3.0 * sigma;
        let mut row: Vec<f64> = nu.iter().map(|&k| k as f64).collect();
        row.extend([hits.len() as f64, freq, w, sigma]);
        table.push(row);
    }
    (table, ok)
}

/// The `μ̂^m` estimator for each `m` of the schedule.
pub fn run_distribution(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let conn = MetricConnection::from_descriptor(&cfg.connection, &s.manifold)?;
    let mut report = ExperimentReport::new("dist", s.hash.clone(), s.seed);
    let mut runs = Vec::new();
    let mut verdict: Option<bool> = None;
    let mut combine = |ok: bool| verdict = Some(verdict.unwrap_or(true) && ok);
    for &m in &cfg.m {
        let (samples, counter) = sample_ensemble(cfg, &s, m, s.seed, std::slice::from_ref(&conn))?;
        let mu = measure_of(&samples, 0, meta(cfg, m, s.seed, &counter))?;
        let max_defect = samples
            .iter()
            .map(|x| x.holonomies[0].orthogonality_defect())
            .fold(0.0, f64::max);
        let mut run = json!({
            "m": m,
            "deficit": deficit_json(m, &counter),
            "atoms": mu.atoms().len(),
            "max_orthogonality_defect": F17(max_defect),
        });
        if let Some(lattice) = s.manifold.lattice() {
            let (table, ok) = winding_table(lattice, &samples, &format!("winding_m{m}"));
            run["winding_within_3sigma"] = json!(ok);
            report.tables.push(table);
            combine(ok);
        }
        if mu.is_u1() && mu.rank() == 2 {
            let h = U1Histogram::new(&mu, cfg.hist_bins, 0.0)?;
            report.extra_csv.push((format!("histogram_m{m}"), h.to_csv()));
        }
        if let (Some(form), Some(lattice)) = (flat_form(&s.manifold, &conn), s.manifold.lattice()) {
            let _ = lattice;
            let analytic = analytic_flat_u1(&s.manifold, form, cfg.analytic_tail)?;
            let w1 = bl_distance(&mu, &analytic)?;
            let sigma = bootstrap(cfg, &mu, s.seed, m as u64)?;
            let max_arc = samples
                .iter()
                .map(|x| {
                    let nu = x.winding.as_deref().unwrap_or(&[]);
                    match x.holonomies[0].u1_angle() {
                        Some(a) => 2.0 * PI * circular_gap(a, form.holonomy_angle(nu)),
                        None => f64::INFINITY,
                    }
                })
                .fold(0.0, f64::max);
            let ok = w1 < 3.0 * sigma && max_arc <= 1e-9;
            run["analytic"] = json!({
                "w1": F17(w1),
                "sigma": F17(sigma),
                "floor": F17(3.0 * sigma),
                "max_atom_arc_distance": F17(max_arc),
                "omitted_mass": F17(analytic.meta().omitted_mass),
                "pass": ok,
            });
            report.measures.push((format!("analytic_m{m}"), analytic));
            combine(ok);
        }
        if let Some(other) = cfg.compare_seed {
            let (b, _) = sample_ensemble(cfg, &s, m, other, std::slice::from_ref(&conn))?;
            let angles = |xs: &[Sample]| -> Result<Vec<(f64, f64)>> {
                xs.iter()
                    .map(|x| {
                        x.holonomies[0]
                            .u1_angle()
                            .map(|a| (a, x.weight))
                            .ok_or_else(|| Error::NotU1("two-seed comparison needs U(1) holonomy".into()))
                    })
                    .collect()
            };
            let mut rng = stream(s.seed ^ other, PERMUTATION, m as u64);
            let p = permutation_test(&angles(&samples)?, &angles(&b)?, cfg.permutations, &mut rng);
            let ok = p >= TWO_SAMPLE_LEVEL;
            run["two_seed"] = json!({"seed": other, "p_value": F17(p), "level": F17(TWO_SAMPLE_LEVEL), "pass": ok});
            combine(ok);
        }
        runs.push(run);
        report.measures.push((format!("measure_m{m}"), mu));
    }
    report.summary = json!({ "runs": runs });
    report.verdict = verdict.map(Verdict::from_bool);
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Distances of `μ̂^m` to the analytic measure, or to the empirical measure at
/// `reference_m` (default: the finest `m`).
pub fn run_refinement(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let conn = MetricConnection::from_descriptor(&cfg.connection, &s.manifold)?;
    let mut report = ExperimentReport::new("refine", s.hash.clone(), s.seed);
    let mut schedule = cfg.m.clone();
    schedule.sort_unstable();
    schedule.dedup();
    let mut deficits = Vec::new();
    let mut estimate = |m: usize| -> Result<(HolonomyMeasure, f64)> {
        let (samples, counter) = sample_ensemble(cfg, &s, m, s.seed, std::slice::from_ref(&conn))?;
        deficits.push(deficit_json(m, &counter));
        let mu = measure_of(&samples, 0, meta(cfg, m, s.seed, &counter))?;
        let sigma = bootstrap(cfg, &mu, s.seed, m as u64)?;
        Ok((mu, sigma))
    };
    let analytic = match flat_form(&s.manifold, &conn) {
        Some(form) => Some(analytic_flat_u1(&s.manifold, form, cfg.analytic_tail)?),
        None => None,
    };
    let reference_m = cfg.reference_m.unwrap_or(*schedule.last().expect("nonempty"));
    let mut cache: Vec<(usize, HolonomyMeasure, f64)> = Vec::new();
    let (reference, ref_sigma, reference_kind) = match analytic {
        Some(a) => (a, 0.0, "analytic".to_string()),
        None => {
            let (mu, sigma) = estimate(reference_m)?;
            cache.push((reference_m, mu.clone(), sigma));
            (mu, sigma, format!("empirical m = {reference_m}"))
        }
    };
    let mut table = Table::new("refinement", &["m", "distance", "sigma", "floor"]);
    for &m in &schedule {
        let (mu, sigma) = match cache.iter().find(|c| c.0 == m) {
            Some(c) => (c.1.clone(), c.2),
            None => estimate(m)?,
        };
        let d = bl_distance(&mu, &reference)?;
        let sigma = sigma.hypot(if m == reference_m && reference_kind != "analytic" { 0.0 } else { ref_sigma });
        table.push(vec![m as f64, d, sigma, 3.0 * sigma]);
        report.measures.push((format!("measure_m{m}"), mu));
    }
    let mut ok = true;
    for w in table.rows.windows(2) {
        ok &= w[1][1] <= w[0][1] + 3.0 * w[0][2].hypot(w[1][2]);
    }
    let within_floor: Vec<bool> = table.rows.iter().map(|r| r[1] < r[3] || r[1] == 0.0).collect();
    report.summary = json!({
        "reference": reference_kind,
        "deficits": deficits,
        "nonincreasing_within_band": ok,
        "within_floor": within_floor,
    });
    report.tables.push(table);
    report.verdict = Some(Verdict::from_bool(ok));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Common-random-number comparison of each family member with the limit.
pub fn run_family_convergence(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let fam = family(cfg, &s.manifold)?;
    let limit = fam.limit();
    let mut conns = vec![limit.clone()];
    conns.extend(fam.schedule().iter().map(|&t| fam.member(t)));
    let mut report = ExperimentReport::new("family", s.hash.clone(), s.seed);
    let mut ok = true;
    let mut runs = Vec::new();
    let oracle_form = flat_form(&s.manifold, &limit).filter(|f| f.periods().iter().all(|&p| p == 0.0));
    for &m in &cfg.m {
        let (samples, counter) = sample_ensemble(cfg, &s, m, s.seed, &conns)?;
        let base = measure_of(&samples, 0, meta(cfg, m, s.seed, &counter))?;
        let mut table = Table::new(&format!("family_m{m}"), &["t", "distance", "sigma", "oracle"]);
        let total: f64 = samples.iter().map(|x| x.weight).sum();
        for (k, &t) in fam.schedule().iter().enumerate() {
            let mu = measure_of(&samples, k + 1, meta(cfg, m, s.seed, &counter))?;
            let d = bl_distance(&mu, &base)?;
            let sigma = bootstrap(cfg, &mu, s.seed, ((m as u64) << 16) | k as u64)?;
            let oracle = match (oracle_form, conns[k + 1].flat_u1()) {
                (Some(_), Some(form)) => samples
                    .iter()
                    .map(|x| {
                        let nu = x.winding.as_deref().unwrap_or(&[]);
                        x.weight / total * 2.0 * PI * circular_gap(form.holonomy_angle(nu), 0.0)
                    })
                    .collect::<CompensatedSum>()
                    .value(),
                _ => f64::NAN,
            };
            table.push(vec![t, d, sigma, oracle]);
        }
        let d = table.column("distance").expect("column");
        let strictly = d.windows(2).all(|w| w[1] < w[0]);
        let last = table.rows.last().expect("nonempty schedule");
        let terminal = last[1] < 3.0 * last[2];
        let oracle_gap = table
            .rows
            .iter()
            .filter(|r| r[3].is_finite())
            .map(|r| (r[1] - r[3]).abs())
            .fold(0.0, f64::max);
        let oracle_ok = oracle_gap <= 1e-12;
        ok &= strictly && terminal && oracle_ok;
        runs.push(json!({
            "m": m,
            "deficit": deficit_json(m, &counter),
            "strictly_decreasing": strictly,
            "terminal_distance": F17(last[1]),
            "terminal_floor": F17(3.0 * last[2]),
            "terminal_below_floor": terminal,
            "oracle_available": oracle_form.is_some(),
            "max_oracle_gap": F17(oracle_gap),
        }));
        report.tables.push(table);
    }
    report.summary = json!({ "runs": runs });
    report.verdict = Some(Verdict::from_bool(ok));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// `Σ_{|ν|>τ} e^{-ν²L²/4} / Z` on a circle of length `l`.
pub fn circle_winding_tail(l: f64, tau: u64) -> f64 {
    let w = |k: f64| (-(k * l) * (k * l) / 4.0).exp();
    let mut z = CompensatedSum::new();
    z.add(1.0);
    let mut k = 1.0;
    loop {
        let v = w(k);
        if v == 0.0 {
            break;
        }
        z.add(2.0 * v);
        k += 1.0;
    }
    let mut tail = CompensatedSum::new();
    let mut k = tau as f64 + 1.0;
    loop {
        let v = w(k);
        if v == 0.0 {
            break;
        }
        tail.add(2.0 * v);
        k += 1.0;
    }
    tail.value() / z.value()
}

/// Number of distinct angles `ν·θ mod 1`, `|ν| <= n`, after rounding to `resolution`.
pub fn distinct_angles(theta: f64, n: i64, resolution: f64) -> usize {
    let bins = (1.0 / resolution).round() as i64;
    let mut seen: Vec<i64> = (-n..=n)
        .map(|k| ((crate::connections::reduce_unit(k as f64 * theta) / resolution).round() as i64).rem_euclid(bins))
        .collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Circle family: densifying holonomy groups next to collapsing measures.
pub fn run_jump_demo(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let ManifoldKind::Circle { circumference, .. } = s.manifold.kind() else {
        return Err(Error::InvalidManifold("the jump demo runs on a circle".into()));
    };
    let circumference = *circumference;
    let fam = family(cfg, &s.manifold)?;
    let mut conns = vec![fam.limit()];
    conns.extend(fam.schedule().iter().map(|&t| fam.member(t)));
    let periods: Vec<f64> = conns
        .iter()
        .map(|c| {
            c.flat_u1()
                .map(|f| f.periods()[0])
                .ok_or_else(|| Error::InvalidConnection("jump family members must be flat_u1".into()))
        })
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::new("jump", s.hash.clone(), s.seed);
    let mut ok = true;
    let mut runs = Vec::new();
    for &m in &cfg.m {
        let (samples, counter) = sample_ensemble(cfg, &s, m, s.seed, &conns)?;
        let mut table = Table::new(
            &format!("jump_m{m}"),
            &["t", "arc_mass", "eps", "tail_bound", "distinct_angles"],
        );
        let mut ts = vec![0.0];
        ts.extend_from_slice(fam.schedule());
        let order: Vec<usize> = (1..conns.len()).chain(std::iter::once(0)).collect();
        let mut masses: Vec<Vec<f64>> = vec![Vec::new(); cfg.eps.len()];
        let mut counts = Vec::new();
        for &k in &order {
            let mu = measure_of(&samples, k, meta(cfg, m, s.seed, &counter))?;
            let gap = circular_gap(periods[k], 0.0);
            let distinct = distinct_angles(periods[k], cfg.enumerate, cfg.resolution);
            if k != 0 {
                counts.push(distinct);
            }
            for (e, &eps) in cfg.eps.iter().enumerate() {
                let mass = arc_mass(&mu, eps)?;
                let bound = if gap == 0.0 {
                    0.0
                } else {
                    circle_winding_tail(circumference, (eps / gap).floor() as u64)
                };
                if k != 0 {
                    masses[e].push(mass);
                }
                table.push(vec![ts[k], mass, eps, bound, distinct as f64]);
            }
        }
        let collapse = masses.iter().all(|ms| ms.windows(2).all(|w| w[1] <= w[0]));
        let last_t = conns.len() - 1;
        let bounded = table
            .rows
            .iter()
            .filter(|r| r[0] == ts[last_t])
            .all(|r| r[1] <= r[3]);
        let limit_zero = table.rows.iter().filter(|r| r[0] == 0.0).all(|r| r[1] == 0.0);
        let densify = counts.windows(2).all(|w| w[1] >= w[0]);
        ok &= collapse && bounded && limit_zero && densify;
        runs.push(json!({
            "m": m,
            "deficit": deficit_json(m, &counter),
            "arc_mass_nonincreasing": collapse,
            "terminal_within_tail_bound": bounded,
            "limit_mass_zero": limit_zero,
            "distinct_angle_counts": counts,
            "densification_nondecreasing": densify,
            "resolution": F17(cfg.resolution),
        }));
        report.tables.push(table);
    }
    report.summary = json!({ "runs": runs });
    report.verdict = Some(Verdict::from_bool(ok));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Distance from `h` to the subgroup: arc length for U(1) elements, Frobenius otherwise.
pub fn subgroup_distance(h: &HolonomyElement, group: &SubgroupDescriptor) -> Result<f64> {
    let q = *h.matrix();
    Ok(match group {
        SubgroupDescriptor::Roots { order } => {
            if *order == 0 {
                return Err(Error::InvalidSubgroup("roots of unity need order >= 1".into()));
            }
            let n = *order as f64;
            match h.u1_angle() {
                Some(a) => 2.0 * PI * circular_gap(a * n, 0.0) / n,
                None if q.rank() == 2 => (0..*order)
                    .map(|k| (q - crate::linalg::Mat::rotation(2.0 * PI * k as f64 / n)).frobenius_norm())
                    .fold(f64::INFINITY, f64::min),
                None => return Err(Error::InvalidSubgroup("roots of unity live in rank 2".into())),
            }
        }
        SubgroupDescriptor::Trivial => match h.u1_angle() {
            Some(a) => 2.0 * PI * circular_gap(a, 0.0),
            None => (q - crate::linalg::Mat::identity(q.rank())).frobenius_norm(),
        },
        SubgroupDescriptor::So => {
            if h.determinant() > 0.0 {
                0.0
            } else {
                2.0
            }
        }
        SubgroupDescriptor::U1 => {
            if q.rank() != 2 {
                return Err(Error::InvalidSubgroup("U(1) lives in rank 2".into()));
            }
            0.5 * q.commutator(&crate::linalg::Mat::complex_structure()).frobenius_norm()
        }
    })
}

/// Mass outside the `merge_tol`-neighbourhood of `H` for every `m` and family member.
pub fn run_subgroup_criterion(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let group = cfg
        .subgroup
        .clone()
        .ok_or_else(|| Error::InvalidSubgroup("config has no \"subgroup\"".into()))?;
    let threshold = cfg.threshold.unwrap_or(SUBGROUP_THRESHOLD);
    let members = members(cfg, &s.manifold)?;
    let conns: Vec<MetricConnection> = members.iter().map(|m| m.1.clone()).collect();
    let mut report = ExperimentReport::new("subgroup", s.hash.clone(), s.seed);
    let mut table = Table::new("subgroup", &["m", "t", "outside_mass", "max_distance", "clusters"]);
    let mut deficits = Vec::new();
    for &m in &cfg.m {
        let (samples, counter) = sample_ensemble(cfg, &s, m, s.seed, &conns)?;
        deficits.push(deficit_json(m, &counter));
        for (k, (t, _)) in members.iter().enumerate() {
            let mu = measure_of(&samples, k, meta(cfg, m, s.seed, &counter))?;
            let mut outside = CompensatedSum::new();
            let mut max_d: f64 = 0.0;
            for a in mu.atoms() {
                let d = subgroup_distance(&a.element, &group)?;
                max_d = max_d.max(d);
                if d > cfg.merge_tol {
                    outside.add(a.weight);
                }
            }
            let clusters = support_estimate(&mu, cfg.merge_tol)?.len();
            table.push(vec![m as f64, *t, outside.value(), max_d, clusters as f64]);
        }
    }
    let worst = table.column("outside_mass").expect("column").into_iter().fold(0.0, f64::max);
    let ok = worst < threshold;
    let statement = if ok {
        "no mass detected outside H at the tested m and members: consistent with Hol contained in H (support only, not proof)"
    } else {
        "mass persists outside H: Hol is not contained in H"
    };
    report.summary = json!({
        "subgroup": group,
        "threshold": F17(threshold),
        "merge_tol": F17(cfg.merge_tol),
        "max_outside_mass": F17(worst),
        "statement": statement,
        "deficits": deficits,
    });
    report.tables.push(table);
    report.verdict = Some(Verdict::from_bool(ok));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Limit of the last three values: geometric (Aitken) when the differences shrink
/// with a common nonnegative ratio below one, else the largest value; never below zero.
pub fn extrapolate_limit(x: [f64; 3]) -> f64 {
    let d1 = x[1] - x[0];
    let d2 = x[2] - x[1];
    let fallback = x[0].max(x[1]).max(x[2]);
    if d2 == 0.0 && d1 == 0.0 {
        return x[2].max(0.0);
    }
    if d1 == 0.0 {
        return fallback.max(0.0);
    }
    let r = d2 / d1;
    if (0.0..1.0).contains(&r) {
        (x[2] + d2 * r / (1.0 - r)).max(0.0)
    } else {
        fallback.max(0.0)
    }
}

/// Arc-mass trajectories of a flat U(1) family with an extrapolated limit per ε.
pub fn run_bs_detector(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let fam = family(cfg, &s.manifold)?;
    if fam.schedule().len() < 3 {
        return Err(Error::InvalidConfig("bs-detect needs at least three schedule points".into()));
    }
    let threshold = cfg.threshold.unwrap_or(BS_THRESHOLD);
    let conns: Vec<MetricConnection> = fam.schedule().iter().map(|&t| fam.member(t)).collect();
    let forms: Vec<FlatU1Form> = conns
        .iter()
        .map(|c| {
            flat_form(&s.manifold, c)
                .cloned()
                .ok_or_else(|| Error::InvalidConnection("bs-detect needs flat_u1 members on a flat manifold".into()))
        })
        .collect::<Result<_>>()?;
    let limit_periods = fam
        .limit()
        .flat_u1()
        .map(|f| f.periods().to_vec())
        .ok_or_else(|| Error::InvalidConnection("family limit is not flat_u1".into()))?;
    let analytic: Vec<HolonomyMeasure> = forms
        .iter()
        .map(|f| analytic_flat_u1(&s.manifold, f, cfg.analytic_tail))
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::new("bs-detect", s.hash.clone(), s.seed);
    let mut ok = true;
    let mut runs = Vec::new();
    for &m in &cfg.m {
        let (samples, counter) = sample_ensemble(cfg, &s, m, s.seed, &conns)?;
        let sum_w: f64 = samples.iter().map(|x| x.weight).sum();
        let sum_w2: f64 = samples.iter().map(|x| x.weight * x.weight).sum();
        let n_eff = sum_w * sum_w / sum_w2;
        let mut table = Table::new(&format!("bs_m{m}"), &["t", "arc_mass", "eps", "analytic_arc_mass", "sigma"]);
        let measures: Vec<HolonomyMeasure> = (0..conns.len())
            .map(|k| measure_of(&samples, k, meta(cfg, m, s.seed, &counter)))
            .collect::<Result<_>>()?;
        let mut limits = Vec::new();
        for &eps in &cfg.eps {
            let mut traj = Vec::new();
            for (k, &t) in fam.schedule().iter().enumerate() {
                let p = arc_mass(&measures[k], eps)?;
                let sigma = (p * (1.0 - p) / n_eff).sqrt();
                table.push(vec![t, p, eps, arc_mass(&analytic[k], eps)?, sigma]);
                traj.push((p, sigma));
            }
            let n = traj.len();
            let limit = extrapolate_limit([traj[n - 3].0, traj[n - 2].0, traj[n - 1].0]);
            let conservative = limit + 3.0 * traj[n - 1].1;
            let pass = conservative < threshold;
            ok &= pass;
            limits.push(json!({
                "eps": F17(eps),
                "extrapolated": F17(limit),
                "conservative": F17(conservative),
                "pass": pass,
            }));
        }
        runs.push(json!({"m": m, "deficit": deficit_json(m, &counter), "limits": limits}));
        report.tables.push(table);
    }
    let periods_zero = limit_periods.iter().all(|&p| circular_gap(p, 0.0) < 1e-12);
    report.summary = json!({
        "threshold": F17(threshold),
        "limit_periods": limit_periods.iter().map(|&p| F17(p)).collect::<Vec<_>>(),
        "limit_periods_vanish": periods_zero,
        "detection": if ok { "BOHR-SOMMERFELD" } else { "NOT BOHR-SOMMERFELD" },
        "runs": runs,
    });
    report.verdict = Some(Verdict::from_bool(ok));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

/// Residuals of the loop-versus-curvature comparison on `samples` contractible loops.
pub fn run_stokes(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    let conn = MetricConnection::from_descriptor(&cfg.connection, &s.manifold)?;
    let threshold = cfg
        .threshold
        .unwrap_or(if conn.flat_u1().is_some() { 1e-12 } else { 1e-6 });
    let steps = cfg.steps_per_segment.map_or(Steps::STOKES, Steps::Fixed);
    let mut report = ExperimentReport::new("stokes", s.hash.clone(), s.seed);
    let mut table = Table::new("stokes", &["m", "index", "residual", "flux"]);
    let mut deficits = Vec::new();
    for &m in &cfg.m {
        let mut e = Ensemble::new(&s.manifold, s.base.clone(), m, cfg.sampler, s.seed, cfg.samples)?;
        e.admissibility = cfg.admissibility;
        e.max_attempts = cfg.max_attempts;
        let cap = cfg.samples.saturating_mul(cfg.max_attempts as usize);
        let mut chosen = Vec::with_capacity(cfg.samples);
        let mut counter = RejectionCounter::default();
        let mut index = 0;
        while chosen.len() < cfg.samples {
            if index >= cap {
                return Err(Error::InvalidConfig(format!(
                    "only {} contractible loops among {index} draws",
                    chosen.len()
                )));
            }
            let d = e.draw(index)?;
            counter.attempted += d.attempts;
            let rejected = if d.admissible { d.attempts - 1 } else { d.attempts };
            counter.rejected += rejected;
            counter.accepted += d.attempts - rejected;
            if winding_class(&s.manifold, &d.path)?.is_zero() {
                chosen.push((index, d.path));
            }
            index += 1;
        }
        deficits.push(deficit_json(m, &counter));
        let run = || {
            chosen
                .par_iter()
                .map(|(i, p)| stokes_check(&s.manifold, &conn, p, steps).map(|r| (*i, r)))
                .collect::<Result<Vec<_>>>()
        };
        let rows = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
            .install(run)?;
        for (i, r) in rows {
            table.push(vec![m as f64, i as f64, r.residual, r.flux]);
        }
    }
    let worst = table.column("residual").expect("column").into_iter().fold(0.0, f64::max);
    report.summary = json!({
        "max_residual": F17(worst),
        "threshold": F17(threshold),
        "deficits": deficits,
    });
    report.tables.push(table);
    report.verdict = Some(Verdict::from_bool(worst < threshold));
    report.runtime_seconds = clock.elapsed().as_secs_f64();
    Ok(report)
}

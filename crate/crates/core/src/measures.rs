//! Probability measures on O(r) and U(1) made of weighted atoms.
//!
//! U(1) angles are in turns on `[0, 1)`; distances are reported in arc length on
//! the unit circle (turns times 2π).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bridge::WindingTable;
use crate::connections::{reduce_unit, FlatU1Form};
use crate::error::{Error, Result};
use crate::geometry::Manifold;
use crate::linalg::Mat;
use crate::numeric::CompensatedSum;
use crate::output::F17;
use crate::transport::HolonomyElement;

/// Analytic atoms closer than this (in turns) are merged.
pub const ANGLE_MERGE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Empirical,
    Analytic,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureMeta {
    pub m: Option<usize>,
    pub samples: u64,
    pub seed: Option<u64>,
    /// Fraction of attempted loops outside the admissible set.
    pub deficit: f64,
    /// Mass left out by truncation (analytic measures).
    pub omitted_mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub element: HolonomyElement,
    pub weight: f64,
    /// Cached U(1) angle in turns.
    pub angle: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct HolonomyMeasure {
    kind: MeasureKind,
    rank: usize,
    atoms: Vec<Atom>,
    meta: MeasureMeta,
}

impl HolonomyMeasure {
    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn meta(&self) -> &MeasureMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut MeasureMeta {
        &mut self.meta
    }

    /// True when every atom has a U(1) angle.
    pub fn is_u1(&self) -> bool {
        self.atoms.iter().all(|a| a.angle.is_some())
    }

    /// `(angle, weight)` pairs, or `NotU1`.
    pub fn angles(&self) -> Result<Vec<(f64, f64)>> {
        self.atoms
            .iter()
            .map(|a| {
                a.angle
                    .map(|t| (t, a.weight))
                    .ok_or_else(|| Error::NotU1("measure has atoms outside SO(2)".into()))
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).collect::<CompensatedSum>().value()
    }

    /// Same atoms with new weights (normalized).
    pub fn reweighted(&self, weights: &[f64]) -> Result<Self> {
        normalized(
            self.kind,
            self.rank,
            self.atoms
                .iter()
                .zip(weights)
                .map(|(a, &w)| Atom { weight: w, ..*a })
                .collect(),
            self.meta.clone(),
        )
    }

    /// Measure file: `{kind, group, atoms: [{angle | matrix, weight}], meta}`.
    pub fn to_json(&self) -> serde_json::Value {
        let u1 = self.is_u1() && self.rank == 2;
        let group = if u1 {
            "U1".to_string()
        } else {
            format!("O({})", self.rank)
        };
        let atoms: Vec<serde_json::Value> = self
            .atoms
            .iter()
            .map(|a| {
                if u1 {
                    json!({"angle": F17(a.angle.unwrap_or(0.0)), "weight": F17(a.weight)})
                } else {
                    let rows: Vec<Vec<F17>> = a
                        .element
                        .matrix()
                        .to_rows()
                        .into_iter()
                        .map(|r| r.into_iter().map(F17).collect())
                        .collect();
                    json!({"matrix": rows, "weight": F17(a.weight)})
                }
            })
            .collect();
        json!({
            "kind": self.kind,
            "group": group,
            "atoms": atoms,
            "meta": {
                "m": self.meta.m,
                "samples": self.meta.samples,
                "seed": self.meta.seed,
                "deficit": F17(self.meta.deficit),
                "omitted_mass": F17(self.meta.omitted_mass),
            },
        })
    }
}

fn normalized(kind: MeasureKind, rank: usize, mut atoms: Vec<Atom>, meta: MeasureMeta) -> Result<HolonomyMeasure> {
    if atoms.is_empty() {
        return Err(Error::EmptySample);
    }
    if atoms.iter().any(|a| !(a.weight.is_finite() && a.weight >= 0.0)) {
        return Err(Error::InvalidConfig("atom weights must be finite and nonnegative".into()));
    }
    let total = atoms.iter().map(|a| a.weight).collect::<CompensatedSum>().value();
    if total <= 0.0 {
        return Err(Error::InvalidConfig("atom weights sum to zero".into()));
    }
    for a in &mut atoms {
        a.weight /= total;
    }
    Ok(HolonomyMeasure {
        kind,
        rank,
        atoms,
        meta,
    })
}

/// Self-normalized empirical measure; weights are summed in the given order.
pub fn empirical_measure(samples: &[(HolonomyElement, f64)], meta: MeasureMeta) -> Result<HolonomyMeasure> {
    let rank = samples.first().ok_or(Error::EmptySample)?.0.rank();
    if samples.iter().any(|s| s.0.rank() != rank) {
        return Err(Error::DimensionMismatch("samples differ in rank".into()));
    }
    let atoms = samples
        .iter()
        .map(|(e, w)| Atom {
            element: *e,
            weight: *w,
            angle: e.u1_angle(),
        })
        .collect();
    normalized(MeasureKind::Empirical, rank, atoms, meta)
}

/// Atoms from `(angle in turns, weight)` pairs.
pub fn u1_measure(kind: MeasureKind, atoms: &[(f64, f64)], meta: MeasureMeta) -> Result<HolonomyMeasure> {
    let atoms = atoms
        .iter()
        .map(|&(t, w)| {
            let t = reduce_unit(t);
            Atom {
                element: HolonomyElement::from_turns(t),
                weight: w,
                angle: Some(t),
            }
        })
        .collect();
    normalized(kind, 2, atoms, meta)
}

/// Atoms at `θ_ν` weighted by the winding distribution, with colliding angles merged.
pub fn analytic_flat_u1(manifold: &Manifold, form: &FlatU1Form, tail: f64) -> Result<HolonomyMeasure> {
    if !(tail > 0.0 && tail <= 1e-6) {
        return Err(Error::InvalidConfig(format!("analytic tail {tail} outside (0, 1e-6]")));
    }
    let lattice = manifold
        .lattice()
        .ok_or_else(|| Error::InvalidManifold("flat U(1) measures live on circles and tori".into()))?;
    if form.periods().len() != lattice.dim() {
        return Err(Error::DimensionMismatch("period count differs from manifold dimension".into()));
    }
    let table = WindingTable::new(lattice, tail);
    let mut pairs: Vec<(f64, f64)> = table
        .classes()
        .iter()
        .map(|(nu, w)| (form.holonomy_angle(nu), *w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut merged: Vec<(f64, CompensatedSum)> = Vec::new();
    for (t, w) in pairs {
        match merged.last_mut() {
            Some((t0, acc)) if t - *t0 <= ANGLE_MERGE_TOL => acc.add(w),
            _ => {
                let mut acc = CompensatedSum::new();
                acc.add(w);
                merged.push((t, acc));
            }
        }
    }
    if merged.len() > 1 {
        let last = merged.len() - 1;
        if 1.0 - merged[last].0 + merged[0].0 <= ANGLE_MERGE_TOL {
            let extra = merged.pop().expect("nonempty").1.value();
            merged[0].1.add(extra);
        }
    }
    let atoms: Vec<(f64, f64)> = merged.into_iter().map(|(t, acc)| (t, acc.value())).collect();
    u1_measure(
        MeasureKind::Analytic,
        &atoms,
        MeasureMeta {
            omitted_mass: table.omitted_mass(),
            ..Default::default()
        },
    )
}

/// Distance metrizing weak convergence: exact circular W₁ in arc length on
/// U(1), the dictionary discrepancy otherwise.
pub fn bl_distance(a: &HolonomyMeasure, b: &HolonomyMeasure) -> Result<f64> {
    if a.rank != b.rank {
        return Err(Error::DimensionMismatch(format!("ranks {} and {}", a.rank, b.rank)));
    }
    if a.rank == 2 && a.is_u1() && b.is_u1() {
        Ok(circular_w1(&a.angles()?, &b.angles()?))
    } else {
        Ok(dictionary_distance(a, b))
    }
}

/// Exact 1-Wasserstein distance on the unit circle between two atom lists
/// `(turns, mass)` of equal total mass, in arc length.
pub fn circular_w1(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(t, w)| (t, w))
        .chain(b.iter().map(|&(t, w)| (t, -w)))
        .collect();
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    circular_w1_sorted(&events)
}

/// W₁ from signed atoms already sorted by angle.
fn circular_w1_sorted(events: &[(f64, f64)]) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    // D is constant on [t_k, t_{k+1}); the wrap interval [t_last, 1) ∪ [0, t_0) carries D = 0
    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(events.len() + 1);
    let mut cum = CompensatedSum::new();
    let wrap = 1.0 - events[events.len() - 1].0 + events[0].0;
    pieces.push((0.0, wrap));
    for k in 0..events.len() - 1 {
        cum.add(events[k].1);
        let len = events[k + 1].0 - events[k].0;
        if len > 0.0 {
            pieces.push((cum.value(), len));
        }
    }
    let c = weighted_median(&mut pieces);
    let w: CompensatedSum = pieces.iter().map(|(d, l)| l * (d - c).abs()).collect();
    2.0 * PI * w.value()
}

fn weighted_median(pieces: &mut [(f64, f64)]) -> f64 {
    pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for p in pieces.iter() {
        acc += p.1;
        if acc >= 0.5 * total {
            return p.0;
        }
    }
    pieces.last().map_or(0.0, |p| p.0)
}

/// Test functions on O(r), each 1-Lipschitz for the Frobenius distance:
/// entries, halved quadratic monomials, and `tr(Q^k) / (k √r)` for `k = 1..4`.
pub fn dictionary_features(q: &Mat) -> Vec<f64> {
    let r = q.rank();
    let entries = q.as_slice();
    let mut out = Vec::with_capacity(entries.len() * (entries.len() + 3) / 2 + 4);
    out.extend_from_slice(entries);
    for i in 0..entries.len() {
        for j in i..entries.len() {
            out.push(0.5 * entries[i] * entries[j]);
        }
    }
    let mut p = *q;
    for k in 1..=4 {
        out.push(p.trace() / (k as f64 * (r as f64).sqrt()));
        p = p * *q;
    }
    out
}

fn mean_features(m: &HolonomyMeasure) -> Vec<f64> {
    let mut acc: Vec<CompensatedSum> = Vec::new();
    for a in &m.atoms {
        let f = dictionary_features(a.element.matrix());
        if acc.is_empty() {
            acc = vec![CompensatedSum::new(); f.len()];
        }
        for (s, v) in acc.iter_mut().zip(f) {
            s.add(a.weight * v);
        }
    }
    acc.iter().map(|s| s.value()).collect()
}

fn dictionary_distance(a: &HolonomyMeasure, b: &HolonomyMeasure) -> f64 {
    mean_features(a)
        .iter()
        .zip(mean_features(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Mass with angle strictly inside `(ε, 1 - ε)`.
pub fn arc_mass(m: &HolonomyMeasure, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidConfig(format!("arc half-width {eps} outside (0, 1/2)")));
    }
    let s: CompensatedSum = m
        .angles()?
        .into_iter()
        .filter(|&(t, _)| t > eps && t < 1.0 - eps)
        .map(|(_, w)| w)
        .collect();
    Ok(s.value())
}

/// Mass more than `tol` (arc length for U(1) atoms, Frobenius otherwise) away from every listed element.
pub fn mass_outside(m: &HolonomyMeasure, subgroup: &[HolonomyElement], tol: f64) -> f64 {
    let s: CompensatedSum = m
        .atoms
        .iter()
        .filter(|a| {
            !subgroup.iter().any(|h| match (a.angle, h.u1_angle()) {
                (Some(x), Some(y)) => 2.0 * PI * circular_gap(x, y) <= tol,
                _ => (*a.element.matrix() - *h.matrix()).frobenius_norm() <= tol,
            })
        })
        .map(|a| a.weight)
        .collect();
    s.value()
}

/// Distance between two angles on the circle, in turns.
pub fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[derive(Clone, Copy, Debug)]
pub struct Cluster {
    pub center: HolonomyElement,
    pub mass: f64,
    pub angle: Option<f64>,
}

/// Single-linkage clusters with merge threshold `tol`, centers projected back to the group.
///
/// U(1) measures are clustered exactly through sorted angle gaps (threshold in
/// arc length). Other measures first collapse atoms onto leaders within `tol / 3`
/// and then link leaders closer than `tol`.
pub fn support_estimate(m: &HolonomyMeasure, tol: f64) -> Result<Vec<Cluster>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("merge tolerance must be positive".into()));
    }
    let groups: Vec<Vec<usize>> = if m.is_u1() && m.rank == 2 {
        let mut idx: Vec<usize> = (0..m.atoms.len()).collect();
        idx.sort_by(|&i, &j| m.atoms[i].angle.unwrap().total_cmp(&m.atoms[j].angle.unwrap()));
        let turns = tol / (2.0 * PI);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        for &i in &idx {
            let t = m.atoms[i].angle.unwrap();
            if t - prev > turns || groups.is_empty() {
                groups.push(Vec::new());
            }
            groups.last_mut().unwrap().push(i);
            prev = t;
        }
        if groups.len() > 1 {
            let first = m.atoms[idx[0]].angle.unwrap();
            let last = m.atoms[*idx.last().unwrap()].angle.unwrap();
            if 1.0 - last + first <= turns {
                let tail = groups.pop().unwrap();
                groups[0].extend(tail);
            }
        }
        groups
    } else {
        let mut leaders: Vec<(Mat, Vec<usize>)> = Vec::new();
        for (i, a) in m.atoms.iter().enumerate() {
            let q = *a.element.matrix();
            match leaders
                .iter_mut()
                .find(|(l, _)| (*l - q).frobenius_norm() <= tol / 3.0)
            {
                Some((_, members)) => members.push(i),
                None => leaders.push((q, vec![i])),
            }
        }
        let n = leaders.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for i in 0..n {
            for j in i + 1..n {
                if (leaders[i].0 - leaders[j].0).frobenius_norm() <= tol {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push(Vec::new());
            }
            out[slot[r]].extend(leaders[i].1.iter().copied());
        }
        out
    };
    Ok(groups
        .into_iter()
        .map(|g| {
            let mut mean = Mat::zeros(m.rank);
            let mut mass = CompensatedSum::new();
            for &i in &g {
                mean = mean.add_scaled(m.atoms[i].weight, m.atoms[i].element.matrix());
                mass.add(m.atoms[i].weight);
            }
            let center = HolonomyElement::new(mean.polar());
            Cluster {
                center,
                mass: mass.value(),
                angle: center.u1_angle(),
            }
        })
        .collect())
}

/// Bootstrap spread of the distance from the estimate to resampled copies of itself:
/// root mean square of `W(μ*, μ̂)` over `reps` multinomial resamples of size `samples`.
pub fn bootstrap_sigma<R: Rng + ?Sized>(m: &HolonomyMeasure, samples: u64, reps: usize, rng: &mut R) -> Result<f64> {
    let n = m.atoms.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for a in &m.atoms {
        acc += a.weight;
        cumulative.push(acc);
    }
    let u1 = m.is_u1() && m.rank == 2;
    let order: Vec<usize> = if u1 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| m.atoms[i].angle.unwrap().total_cmp(&m.atoms[j].angle.unwrap()));
        idx
    } else {
        Vec::new()
    };
    let mut sq = CompensatedSum::new();
    for _ in 0..reps {
        let mut counts = vec![0u64; n];
        for _ in 0..samples {
            let u = rng.random::<f64>() * acc;
            let k = cumulative.partition_point(|&c| c <= u).min(n - 1);
            counts[k] += 1;
        }
        let d = if u1 {
            let events: Vec<(f64, f64)> = order
                .iter()
                .map(|&i| {
                    let a = &m.atoms[i];
                    (a.angle.unwrap(), counts[i] as f64 / samples as f64 - a.weight)
                })
                .collect();
            circular_w1_sorted(&events)
        } else {
            let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            dictionary_distance(&m.reweighted(&w)?, m)
        };
        sq.add(d * d);
    }
    Ok((sq.value() / reps as f64).sqrt())
}

/// Permutation test of equality in law for two weighted U(1) samples using W₁.
/// Returns the p-value `(1 + #{W_perm >= W_obs}) / (1 + perms)`.
pub fn permutation_test<R: Rng + ?Sized>(
    a: &[(f64, f64)],
    b: &[(f64, f64)],
    perms: usize,
    rng: &mut R,
) -> f64 {
    let stat = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        let norm = |v: &[(f64, f64)]| {
            let t: f64 = v.iter().map(|p| p.1).sum();
            v.iter().map(|&(s, w)| (s, w / t)).collect::<Vec<_>>()
        };
        circular_w1(&norm(x), &norm(y))
    };
    let observed = stat(a, b);
    let mut pooled: Vec<(f64, f64)> = a.iter().chain(b).copied().collect();
    let mut hits = 0usize;
    for _ in 0..perms {
        for i in (1..pooled.len()).rev() {
            let j = rng.random_range(0..=i);
            pooled.swap(i, j);
        }
        if stat(&pooled[..a.len()], &pooled[a.len()..]) >= observed {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + perms) as f64
}

/// Bin masses over `[offset, offset + 1)` (mod 1).
#[derive(Clone, Debug, PartialEq)]
pub struct U1Histogram {
    pub offset: f64,
    pub masses: Vec<f64>,
}

impl U1Histogram {
    pub fn new(m: &HolonomyMeasure, bins: usize, offset: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
        }
        let mut acc = vec![CompensatedSum::new(); bins];
        for (t, w) in m.angles()? {
            let k = ((reduce_unit(t - offset) * bins as f64).floor() as usize).min(bins - 1);
            acc[k].add(w);
        }
        Ok(Self {
            offset,
            masses: acc.iter().map(|s| s.value()).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// `bin_lo,bin_hi,mass` rows.
    pub fn to_csv(&self) -> String {
        let b = self.bins() as f64;
        let mut s = String::from("bin_lo,bin_hi,mass\n");
        for (k, m) in self.masses.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{}\n",
                crate::output::fmt17(self.offset + k as f64 / b),
                crate::output::fmt17(self.offset + (k + 1) as f64 / b),
                crate::output::fmt17(*m)
            ));
        }
        s
    }
}

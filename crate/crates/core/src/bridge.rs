//! Pinned Brownian loops on a dyadic partition and their piecewise-geodesic interpolation.
//!
//! A loop of partition size `m` is a vertex tuple `x_1..x_{m-1}` between two copies
//! of the base point, distributed with density
//! `p_{1/m}(x, x_1) ... p_{1/m}(x_{m-1}, x) / p_1(x, x)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{cross, norm_sq, Coords, GeodesicSegment, Lattice, Manifold, ManifoldPoint, HEAT_KERNEL_TOL};

/// Probability mass of winding classes left out of the sampling table.
pub const WINDING_TAIL: f64 = 1e-12;

/// Per-step accept-reject attempts before giving up on the sphere.
pub const PROPOSAL_RETRY_CAP: usize = 10_000;

/// Largest distance of a summed lift from the lattice before it is treated as a bug.
pub const LIFT_DEFECT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Winding class first, then a Euclidean Gaussian bridge in the universal cover (tori only).
    Exact,
    /// Forward heat-kernel walk weighted by the closing kernel.
    Is,
}

/// How loops with a step of length `>= rho` are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    /// Discard and redraw.
    #[default]
    Enforce,
    /// Keep every loop and join vertices along the sampled lifted increments (tori only).
    Lift,
}

/// Winding classes `ν` with probabilities `e^{-|Bν|²/4} / Z`.
#[derive(Clone, Debug)]
pub struct WindingTable {
    classes: Vec<(Vec<i64>, f64)>,
    cumulative: Vec<f64>,
    omitted: f64,
}

impl WindingTable {
    /// All classes except a set of total mass below `tail`, most likely first.
    pub fn new(lattice: &Lattice, tail: f64) -> Self {
        let n = lattice.dim();
        let norm = (4.0 * PI).powf(-(n as f64) / 2.0);
        let mut radius = lattice.shortest_vector_length();
        while lattice.gaussian_tail_bound(1.0, radius) >= tail * norm {
            radius += 0.5;
        }
        let zero = vec![0.0; n];
        let mut classes: Vec<(Vec<i64>, f64)> = lattice
            .points_in_ball(&zero, radius)
            .into_iter()
            .map(|(nu, y)| (nu.to_vec(), (-norm_sq(&y) / 4.0).exp()))
            .collect();
        classes.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut ascending: Vec<f64> = classes.iter().map(|c| c.1).collect();
        ascending.reverse();
        let z = crate::numeric::compensated_sum(ascending);
        for c in &mut classes {
            c.1 /= z;
        }
        let mut cumulative = Vec::with_capacity(classes.len());
        let mut acc = 0.0;
        for c in &classes {
            acc += c.1;
            cumulative.push(acc);
        }
        let omitted = lattice.gaussian_tail_bound(1.0, radius) / (norm * z);
        Self {
            classes,
            cumulative,
            omitted,
        }
    }

    pub fn classes(&self) -> &[(Vec<i64>, f64)] {
        &self.classes
    }

    pub fn probability(&self, nu: &[i64]) -> f64 {
        self.classes
            .iter()
            .find(|(c, _)| c.as_slice() == nu)
            .map_or(0.0, |c| c.1)
    }

    /// Upper bound on the mass of classes outside the table.
    pub fn omitted_mass(&self) -> f64 {
        self.omitted
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[i64] {
        let u = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let k = self.cumulative.partition_point(|&c| c <= u);
        &self.classes[k.min(self.classes.len() - 1)].0
    }
}

/// Free vertices of a sampled loop and its importance weight.
#[derive(Clone, Debug)]
pub struct LoopVertices {
    base: ManifoldPoint,
    vertices: Vec<ManifoldPoint>,
    weight: f64,
    drawn_winding: Option<Vec<i64>>,
    increments: Option<Vec<Coords>>,
}

impl LoopVertices {
    pub fn new(base: ManifoldPoint, vertices: Vec<ManifoldPoint>, weight: f64) -> Result<Self> {
        let m = vertices.len() + 1;
        if !m.is_power_of_two() || m < 2 {
            return Err(Error::InvalidConfig(format!(
                "partition size {m} is not a power of two >= 2"
            )));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidConfig(format!("loop weight {weight} is not positive")));
        }
        Ok(Self {
            base,
            vertices,
            weight,
            drawn_winding: None,
            increments: None,
        })
    }

    /// Attaches lifted increments `x_{i+1} - x_i` (`m` of them, summing to a lattice vector).
    pub fn with_increments(mut self, increments: Vec<Coords>) -> Self {
        self.increments = Some(increments);
        self
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn m(&self) -> usize {
        self.vertices.len() + 1
    }

    pub fn vertices(&self) -> &[ManifoldPoint] {
        &self.vertices
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Winding class of the sampled lifted path, before any admissibility filtering.
    pub fn drawn_winding(&self) -> Option<&[i64]> {
        self.drawn_winding.as_deref()
    }

    pub fn increments(&self) -> Option<&[Coords]> {
        self.increments.as_deref()
    }

    /// `x_0, x_1, ..., x_{m-1}, x_m` with both ends at the base.
    pub fn closed_points(&self) -> Vec<&ManifoldPoint> {
        std::iter::once(&self.base)
            .chain(&self.vertices)
            .chain(std::iter::once(&self.base))
            .collect()
    }

    /// The `2m` representative of the same loop: geodesic midpoints inserted
    /// (lifted midpoints when increments are attached).
    pub fn refined(&self, manifold: &Manifold) -> Result<Self> {
        let pts = self.closed_points();
        let mut vertices = Vec::with_capacity(2 * self.vertices.len() + 1);
        let mut increments = self.increments.as_ref().map(|_| Vec::new());
        for i in 0..pts.len() - 1 {
            let mid = match &self.increments {
                Some(inc) => {
                    let half: Coords = inc[i].iter().map(|d| 0.5 * d).collect();
                    let lifted: Coords = pts[i].coords().iter().zip(&half).map(|(a, b)| a + b).collect();
                    let list = increments.as_mut().expect("present");
                    list.push(half.clone());
                    list.push(half);
                    manifold.reduce_lifted(&lifted)
                }
                None => manifold.interpolate(pts[i], pts[i + 1], 0.5)?,
            };
            vertices.push(mid);
            if i + 1 < pts.len() - 1 {
                vertices.push(pts[i + 1].clone());
            }
        }
        Ok(Self {
            base: self.base.clone(),
            vertices,
            weight: self.weight,
            drawn_winding: self.drawn_winding.clone(),
            increments,
        })
    }
}

/// Counts of the admissibility check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounter {
    pub attempted: u64,
    pub accepted: u64,
    pub rejected: u64,
}

impl RejectionCounter {
    pub fn merge(&mut self, other: &Self) {
        self.attempted += other.attempted;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.rejected as f64 / self.attempted as f64
        }
    }
}

/// True iff every consecutive vertex distance is strictly below `rho`.
pub fn is_admissible(manifold: &Manifold, v: &LoopVertices) -> bool {
    let rho = manifold.rho();
    let pts = v.closed_points();
    pts.windows(2).all(|w| manifold.distance(w[0], w[1]) < rho)
}

/// [`is_admissible`] with bookkeeping.
pub fn admissibility_filter(manifold: &Manifold, v: &LoopVertices, counter: &mut RejectionCounter) -> bool {
    let ok = is_admissible(manifold, v);
    counter.attempted += 1;
    if ok {
        counter.accepted += 1;
    } else {
        counter.rejected += 1;
    }
    ok
}

pub struct BridgeSampler<'a> {
    manifold: &'a Manifold,
    base: ManifoldPoint,
    m: usize,
    kind: SamplerKind,
    table: Option<WindingTable>,
    sphere_bound: f64,
    diagonal: f64,
}

impl<'a> BridgeSampler<'a> {
    pub fn new(manifold: &'a Manifold, base: ManifoldPoint, m: usize, kind: SamplerKind) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "partition size m = {m} must be a power of two >= 2"
            )));
        }
        let table = match (kind, manifold.lattice()) {
            (SamplerKind::Exact, Some(l)) => Some(WindingTable::new(l, WINDING_TAIL)),
            (SamplerKind::Exact, None) => {
                return Err(Error::InvalidConfig(
                    "the exact sampler needs a circle or flat torus; use \"is\" on the sphere".into(),
                ))
            }
            _ => None,
        };
        let sphere_bound = if manifold.is_flat() {
            0.0
        } else {
            sphere_dominating_constant(manifold, 1.0 / m as f64)?
        };
        let diagonal = manifold.heat_kernel_diagonal_total(&base);
        Ok(Self {
            manifold,
            base,
            m,
            kind,
            table,
            sphere_bound,
            diagonal,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn winding_table(&self) -> Option<&WindingTable> {
        self.table.as_ref()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LoopVertices> {
        match (self.kind, self.manifold.lattice()) {
            (SamplerKind::Exact, Some(l)) => Ok(self.sample_exact(l, rng)),
            (SamplerKind::Is, Some(l)) => self.sample_is_flat(l, rng),
            (SamplerKind::Is, None) => self.sample_is_sphere(rng),
            (SamplerKind::Exact, None) => unreachable!("rejected at construction"),
        }
    }

    fn sample_exact<R: Rng + ?Sized>(&self, lattice: &Lattice, rng: &mut R) -> LoopVertices {
        let nu = self.table.as_ref().expect("exact table").sample(rng).to_vec();
        let target = lattice.vector(&nu);
        let n = lattice.dim();
        let m = self.m;
        let mut x: Coords = SmallVec::from_elem(0.0, n);
        let mut vertices = Vec::with_capacity(m - 1);
        let mut increments = Vec::with_capacity(m);
        for i in 0..m - 1 {
            let remaining = (m - i) as f64;
            let sd = (2.0 / m as f64 * (remaining - 1.0) / remaining).sqrt();
            let next: Coords = (0..n)
                .map(|k| {
                    let z: f64 = rng.sample(StandardNormal);
                    x[k] + (target[k] - x[k]) / remaining + sd * z
                })
                .collect();
            increments.push(next.iter().zip(&x).map(|(a, b)| a - b).collect());
            x = next;
            let lifted: Coords = self.base.coords().iter().zip(&x).map(|(a, b)| a + b).collect();
            vertices.push(self.manifold.reduce_lifted(&lifted));
        }
        increments.push(target.iter().zip(&x).map(|(a, b)| a - b).collect());
        LoopVertices {
            base: self.base.clone(),
            vertices,
            weight: 1.0,
            drawn_winding: Some(nu),
            increments: Some(increments),
        }
    }

    fn sample_is_flat<R: Rng + ?Sized>(&self, lattice: &Lattice, rng: &mut R) -> Result<LoopVertices> {
        let n = lattice.dim();
        let m = self.m;
        let s = 1.0 / m as f64;
        let sd = (2.0 * s).sqrt();
        let mut x: Coords = self.base.coords().iter().copied().collect();
        let mut vertices = Vec::with_capacity(m - 1);
        let mut increments: Vec<Coords> = Vec::with_capacity(m);
        let mut total: Coords = SmallVec::from_elem(0.0, n);
        for _ in 0..m - 1 {
            let step: Coords = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            for k in 0..n {
                x[k] += step[k];
                total[k] += step[k];
            }
            vertices.push(self.manifold.reduce_lifted(&x));
            increments.push(step);
        }
        let delta: Coords = self.base.coords().iter().zip(&x).map(|(b, a)| b - a).collect();
        let (terms, _) = lattice.image_terms(&delta, s, crate::geometry::HEAT_KERNEL_TOL);
        let closing: f64 = terms.iter().map(|t| t.1).sum();
        let u = rng.random::<f64>() * closing;
        let mut acc = 0.0;
        let mut chosen = &terms[terms.len() - 1].0;
        for (y, v) in &terms {
            acc += v;
            if u < acc {
                chosen = y;
                break;
            }
        }
        for k in 0..n {
            total[k] += chosen[k];
        }
        increments.push(chosen.clone());
        let winding = round_to_lattice(lattice, &total)?;
        let weight = closing / self.diagonal;
        Ok(LoopVertices {
            base: self.base.clone(),
            vertices,
            weight,
            drawn_winding: Some(winding),
            increments: Some(increments),
        })
    }

    fn sample_is_sphere<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LoopVertices> {
        let m = self.m;
        let s = 1.0 / m as f64;
        let mut x = self.base.clone();
        let mut vertices = Vec::with_capacity(m - 1);
        for _ in 0..m - 1 {
            x = self.sphere_step(&x, s, rng)?;
            vertices.push(x.clone());
        }
        let d = self.manifold.distance(&x, &self.base);
        // Far closings sit below the spectral tolerance and may come out as tiny negatives.
        let weight = self.manifold.sphere_heat_kernel_at_distance(s, d)?.max(0.0) / self.diagonal;
        Ok(LoopVertices {
            base: self.base.clone(),
            vertices,
            weight,
            drawn_winding: None,
            increments: None,
        })
    }

    /// Exact draw from `p_s(x, ·)`: tangent Gaussian through the exponential map,
    /// corrected by accept-reject against the spectral kernel.
    fn sphere_step<R: Rng + ?Sized>(&self, x: &ManifoldPoint, s: f64, rng: &mut R) -> Result<ManifoldPoint> {
        let sd = (2.0 * s).sqrt();
        let (t1, t2) = tangent_basis(x.coords());
        for _ in 0..PROPOSAL_RETRY_CAP {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let d = sd * z1.hypot(z2);
            if d >= PI {
                continue;
            }
            let ratio = self.manifold.sphere_heat_kernel_at_distance(s, d)?
                / (self.sphere_bound * sphere_proposal_density(s, d));
            if u < ratio {
                let v = [
                    sd * (z1 * t1[0] + z2 * t2[0]),
                    sd * (z1 * t1[1] + z2 * t2[1]),
                    sd * (z1 * t1[2] + z2 * t2[2]),
                ];
                return Ok(self.manifold.sphere_exp(x, &v));
            }
        }
        Err(Error::ProposalFailure {
            attempts: PROPOSAL_RETRY_CAP,
        })
    }
}

/// Density on the sphere of `exp_x(V)`, `V ~ N(0, 2s I)` in the tangent plane, at distance `d < π`.
pub fn sphere_proposal_density(s: f64, d: f64) -> f64 {
    let jac = if d == 0.0 { 1.0 } else { d / d.sin() };
    (-d * d / (4.0 * s)).exp() / (4.0 * PI * s) * jac
}

/// `1.05 · max_d p_s(d) / proposal(d)` over a fine grid of `[0, d_max]`.
///
/// Past `d_max` the proposal density is within `10^4` of the spectral tolerance,
/// so the ratio there is truncation noise and is not trusted.
fn sphere_dominating_constant(manifold: &Manifold, s: f64) -> Result<f64> {
    let grid = 4000;
    let exponent = (1.0 / (4.0 * PI * s * 1e4 * HEAT_KERNEL_TOL)).ln().max(0.0);
    let d_max = (PI - 1e-3).min((4.0 * s * exponent).sqrt());
    let mut best: f64 = 0.0;
    for k in 0..grid {
        let d = d_max * k as f64 / (grid - 1) as f64;
        let q = sphere_proposal_density(s, d);
        if q > 0.0 {
            best = best.max(manifold.sphere_heat_kernel_at_distance(s, d)? / q);
        }
    }
    Ok(1.05 * best)
}

fn tangent_basis(p: &[f64]) -> ([f64; 3], [f64; 3]) {
    let mut axis = 0;
    for k in 1..3 {
        if p[k].abs() < p[axis].abs() {
            axis = k;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let d = p[axis];
    let mut t1 = [e[0] - d * p[0], e[1] - d * p[1], e[2] - d * p[2]];
    let n = norm_sq(&t1).sqrt();
    for v in &mut t1 {
        *v /= n;
    }
    (t1, cross(p, &t1))
}

fn round_to_lattice(lattice: &Lattice, total: &[f64]) -> Result<Vec<i64>> {
    let f = lattice.to_fractional(total);
    let nu: Vec<i64> = f.iter().map(|v| v.round() as i64).collect();
    let defect = f
        .iter()
        .zip(&nu)
        .map(|(a, b)| (a - *b as f64).abs())
        .fold(0.0, f64::max);
    if defect >= LIFT_DEFECT_TOL {
        return Err(Error::LiftDefect { defect });
    }
    Ok(nu)
}

/// The piecewise-geodesic loop `Φ_m(x_1, ..., x_{m-1})`, segment `i` from `x_i` to `x_{i+1}`.
#[derive(Clone, Debug)]
pub struct PiecewiseGeodesicLoop {
    base: ManifoldPoint,
    segments: Vec<GeodesicSegment>,
}

/// Minimal geodesics between consecutive vertices.
pub fn build_loop(manifold: &Manifold, v: &LoopVertices) -> Result<PiecewiseGeodesicLoop> {
    let pts = v.closed_points();
    let segments = pts
        .windows(2)
        .map(|w| manifold.geodesic(w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PiecewiseGeodesicLoop {
        base: v.base.clone(),
        segments,
    })
}

/// Straight segments along the sampled lifted increments.
pub fn build_lifted_loop(manifold: &Manifold, v: &LoopVertices) -> Result<PiecewiseGeodesicLoop> {
    let inc = v
        .increments
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("loop carries no lifted increments".into()))?;
    let pts = v.closed_points();
    let segments = inc
        .iter()
        .zip(&pts)
        .map(|(d, p)| manifold.lifted_segment(p, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(PiecewiseGeodesicLoop {
        base: v.base.clone(),
        segments,
    })
}

impl PiecewiseGeodesicLoop {
    /// Minimal-geodesic loop through `base, points..., base`.
    pub fn through(manifold: &Manifold, base: &ManifoldPoint, points: &[ManifoldPoint]) -> Result<Self> {
        let mut segments = Vec::with_capacity(points.len() + 1);
        let mut prev = base;
        for p in points.iter().chain(std::iter::once(base)) {
            segments.push(manifold.geodesic(prev, p)?);
            prev = p;
        }
        Ok(Self {
            base: base.clone(),
            segments,
        })
    }

    pub fn from_segments(base: ManifoldPoint, segments: Vec<GeodesicSegment>) -> Self {
        Self { base, segments }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn segments(&self) -> &[GeodesicSegment] {
        &self.segments
    }

    pub fn m(&self) -> usize {
        self.segments.len()
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length()).sum()
    }

    /// Position at loop time `s ∈ [0, 1]`, segment `i` covering `[i/m, (i+1)/m]`.
    pub fn point_at(&self, manifold: &Manifold, s: f64) -> ManifoldPoint {
        let m = self.segments.len();
        let scaled = s * m as f64;
        let k = (scaled.floor() as usize).min(m - 1);
        manifold.segment_point(&self.segments[k], scaled - k as f64)
    }

    /// The same curve traversed backwards.
    pub fn reversed(&self) -> Self {
        Self {
            base: self.base.clone(),
            segments: self.segments.iter().rev().map(|s| s.reversed()).collect(),
        }
    }

    /// `self` followed by `other`, both based at the same point.
    pub fn concat(&self, other: &Self) -> Self {
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        Self {
            base: self.base.clone(),
            segments,
        }
    }

    /// Each segment split at its midpoint.
    pub fn refined(&self, manifold: &Manifold) -> Result<Self> {
        let mut segments = Vec::with_capacity(2 * self.segments.len());
        for seg in &self.segments {
            let mid = manifold.segment_point(seg, 0.5);
            match seg.displacement() {
                Some(d) => {
                    let half: Vec<f64> = d.iter().map(|v| 0.5 * v).collect();
                    segments.push(manifold.lifted_segment(seg.start(), &half)?);
                    segments.push(manifold.lifted_segment(&mid, &half)?);
                }
                None => {
                    segments.push(manifold.geodesic(seg.start(), &mid)?);
                    segments.push(manifold.geodesic(&mid, seg.end())?);
                }
            }
        }
        Ok(Self {
            base: self.base.clone(),
            segments,
        })
    }
}

/// Homotopy class of a loop: a lattice vector on flat members, empty on the simply connected sphere.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindingClass(pub Vec<i64>);

impl WindingClass {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }
}

/// Sum of lifted segment displacements, rounded to the lattice.
pub fn winding_class(manifold: &Manifold, lp: &PiecewiseGeodesicLoop) -> Result<WindingClass> {
    let Some(lattice) = manifold.lattice() else {
        return Ok(WindingClass(Vec::new()));
    };
    let n = lattice.dim();
    let mut total = vec![crate::numeric::CompensatedSum::new(); n];
    for seg in lp.segments() {
        let d = seg.displacement().expect("flat segment");
        for k in 0..n {
            total[k].add(d[k]);
        }
    }
    let total: Vec<f64> = total.iter().map(|c| c.value()).collect();
    round_to_lattice(lattice, &total).map(WindingClass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn circle() -> Manifold {
        Manifold::circle(1.0).unwrap()
    }

    fn circle_loop(m: &Manifold, k: usize) -> LoopVertices {
        let base = m.default_base_point();
        let vs = (1..k).map(|i| m.point(&[i as f64 / k as f64]).unwrap()).collect();
        LoopVertices::new(base, vs, 1.0).unwrap()
    }

    #[test]
    fn winding_table_matches_theta_weights() {
        let m = circle();
        let t = WindingTable::new(m.lattice().unwrap(), WINDING_TAIL);
        let expect = [
            (0, 0.28209479177387814),
            (1, 0.21969564473386122),
            (2, 0.10377687435514868),
            (3, 0.029732572305907355),
        ];
        for (nu, w) in expect {
            assert!((t.probability(&[nu]) - w).abs() < 1e-12, "{nu}");
            assert!((t.probability(&[-nu]) - w).abs() < 1e-12, "{nu}");
        }
        assert!(t.omitted_mass() < WINDING_TAIL);
    }

    #[test]
    fn constant_loop_is_admissible_with_zero_winding() {
        let m = Manifold::square_torus(2).unwrap();
        let base = m.default_base_point();
        let v = LoopVertices::new(base.clone(), vec![base.clone(); 7], 1.0).unwrap();
        let mut c = RejectionCounter::default();
        assert!(admissibility_filter(&m, &v, &mut c));
        let lp = build_loop(&m, &v).unwrap();
        assert_eq!(lp.length(), 0.0);
        assert!(winding_class(&m, &lp).unwrap().is_zero());
        assert_eq!(c.attempted, c.accepted + c.rejected);
    }

    #[test]
    fn boundary_distance_is_rejected() {
        let m = circle();
        let base = m.default_base_point();
        let v = LoopVertices::new(base, vec![m.point(&[0.25]).unwrap()], 1.0).unwrap();
        assert!(!is_admissible(&m, &v));
    }

    #[test]
    fn uniform_circle_loop_winds_once() {
        let m = circle();
        let v = circle_loop(&m, 16);
        let lp = build_loop(&m, &v).unwrap();
        assert!((lp.length() - 1.0).abs() < 1e-14);
        assert_eq!(winding_class(&m, &lp).unwrap(), WindingClass(vec![1]));
        assert_eq!(winding_class(&m, &lp.reversed()).unwrap(), WindingClass(vec![-1]));
    }

    #[test]
    fn orientation_is_distinguished_on_torus() {
        let m = Manifold::square_torus(2).unwrap();
        let base = m.default_base_point();
        let fwd: Vec<_> = (1..8).map(|i| m.point(&[i as f64 / 8.0, 0.0]).unwrap()).collect();
        let bwd: Vec<_> = fwd.iter().rev().cloned().collect();
        let a = PiecewiseGeodesicLoop::through(&m, &base, &fwd).unwrap();
        let b = PiecewiseGeodesicLoop::through(&m, &base, &bwd).unwrap();
        assert_eq!(winding_class(&m, &a).unwrap(), WindingClass(vec![1, 0]));
        assert_eq!(winding_class(&m, &b).unwrap(), WindingClass(vec![-1, 0]));
    }

    #[test]
    fn refined_vertices_trace_the_same_loop() {
        let m = Manifold::square_torus(2).unwrap();
        let s = BridgeSampler::new(&m, m.default_base_point(), 512, SamplerKind::Exact).unwrap();
        let mut r = rng::stream(11, rng::SAMPLING, 0);
        let mut checked = 0;
        while checked < 5 {
            let v = s.sample(&mut r).unwrap();
            if !is_admissible(&m, &v) {
                continue;
            }
            checked += 1;
            let plain = LoopVertices::new(v.base().clone(), v.vertices().to_vec(), 1.0).unwrap();
            let pairs = [
                (build_loop(&m, &plain).unwrap(), build_loop(&m, &plain.refined(&m).unwrap()).unwrap()),
                (
                    build_lifted_loop(&m, &v).unwrap(),
                    build_lifted_loop(&m, &v.refined(&m).unwrap()).unwrap(),
                ),
            ];
            for (a, b) in pairs {
                assert_eq!(b.m(), 1024);
                for k in 0..=200 {
                    let t = k as f64 / 200.0;
                    let d = m.distance(&a.point_at(&m, t), &b.point_at(&m, t));
                    assert!(d < 1e-10, "{d}");
                }
            }
        }
    }

    #[test]
    fn exact_bridge_lands_on_drawn_class() {
        let m = circle();
        let s = BridgeSampler::new(&m, m.default_base_point(), 64, SamplerKind::Exact).unwrap();
        let mut r = rng::stream(3, rng::SAMPLING, 0);
        for _ in 0..50 {
            let v = s.sample(&mut r).unwrap();
            let lp = build_lifted_loop(&m, &v).unwrap();
            assert_eq!(winding_class(&m, &lp).unwrap().0, v.drawn_winding().unwrap());
            assert_eq!(v.weight(), 1.0);
        }
    }

    #[test]
    fn sphere_sampler_produces_unit_vectors() {
        let m = Manifold::sphere();
        let s = BridgeSampler::new(&m, m.default_base_point(), 8, SamplerKind::Is).unwrap();
        let mut r = rng::stream(5, rng::SAMPLING, 0);
        let v = s.sample(&mut r).unwrap();
        assert_eq!(v.vertices().len(), 7);
        for p in v.vertices() {
            assert!((norm_sq(p.coords()) - 1.0).abs() < 1e-12);
        }
        assert!(v.weight() > 0.0);
    }

    #[test]
    fn non_dyadic_partition_is_rejected() {
        let m = circle();
        assert!(BridgeSampler::new(&m, m.default_base_point(), 12, SamplerKind::Exact).is_err());
        assert!(BridgeSampler::new(&Manifold::sphere(), Manifold::sphere().default_base_point(), 8, SamplerKind::Exact).is_err());
    }
}

//! Catalog manifolds: circles, flat tori and the round unit 2-sphere.
//!
//! Every member comes with exact geodesics, distances, injectivity radius and
//! a heat kernel for `d/ds p = Δ p`, i.e. Brownian motion with variance `2s`
//! per coordinate. Kernel values are truncated sums carrying a certified bound
//! on the omitted tail.
//!
//! Torus points are stored as Euclidean coordinates of the representative in
//! `B [0,1)^n`, where the columns of `B` generate the lattice. Sphere points are
//! unit vectors in R^3.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

pub type Coords = SmallVec<[f64; 3]>;

/// Default truncation tolerance for heat-kernel sums.
pub const HEAT_KERNEL_TOL: f64 = 1e-12;

/// Below this time the spherical spectral sum needs many terms and loses accuracy.
pub const SPECTRAL_SMALL_TIME: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    coords: Coords,
}

impl ManifoldPoint {
    /// Wraps raw coordinates without validation; use [`Manifold::point`] for checked input.
    pub fn from_raw(coords: &[f64]) -> Self {
        Self {
            coords: coords.iter().copied().collect(),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldDescriptor {
    Circle { circumference: f64 },
    FlatTorus { basis: Vec<Vec<f64>> },
    Sphere2,
}

/// Full-rank lattice in R^n given by its generators.
#[derive(Clone, Debug)]
pub struct Lattice {
    dim: usize,
    generators: Vec<Vec<f64>>,
    /// Row-major `B`, column `j` is generator `j`.
    basis: Vec<f64>,
    inverse: Vec<f64>,
    shortest: f64,
    smallest_singular: f64,
    covolume: f64,
}

impl Lattice {
    pub fn new(generators: Vec<Vec<f64>>) -> Result<Self> {
        let n = generators.len();
        if n == 0 {
            return Err(Error::InvalidManifold("lattice needs at least one generator".into()));
        }
        for (j, g) in generators.iter().enumerate() {
            if g.len() != n {
                return Err(Error::InvalidManifold(format!(
                    "generator {j} has {} components, expected {n}",
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidManifold(format!("generator {j} is not finite")));
            }
        }
        let b = DMatrix::from_fn(n, n, |i, j| generators[j][i]);
        let det = b.determinant();
        let scale: f64 = generators
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .product();
        if det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidManifold("lattice basis is singular".into()));
        }
        let inv = b
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidManifold("lattice basis is singular".into()))?;
        let smallest_singular = b
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mut lattice = Self {
            dim: n,
            basis: (0..n * n).map(|k| b[(k / n, k % n)]).collect(),
            inverse: (0..n * n).map(|k| inv[(k / n, k % n)]).collect(),
            generators,
            shortest: 0.0,
            smallest_singular,
            covolume: det.abs(),
        };
        lattice.shortest = lattice.compute_shortest();
        Ok(lattice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    /// Length of the shortest nonzero lattice vector.
    pub fn shortest_vector_length(&self) -> f64 {
        self.shortest
    }

    pub fn covolume(&self) -> f64 {
        self.covolume
    }

    /// Row `i` of `B^{-1}`: the differential of the `i`-th lattice coordinate.
    pub fn dual_row(&self, i: usize) -> &[f64] {
        &self.inverse[i * self.dim..(i + 1) * self.dim]
    }

    /// `B^{-T} k`, the Euclidean covector of the lattice-coordinate form `k . u`.
    pub fn dual_covector(&self, k: &[f64]) -> Coords {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.inverse[j * n + i] * k[j]).sum())
            .collect()
    }

    pub fn vector(&self, nu: &[i64]) -> Coords {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.basis[i * n + j] * nu[j] as f64).sum())
            .collect()
    }

    pub fn to_fractional(&self, x: &[f64]) -> Coords {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.inverse[i * n + j] * x[j]).sum())
            .collect()
    }

    pub fn from_fractional(&self, f: &[f64]) -> Coords {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.basis[i * n + j] * f[j]).sum())
            .collect()
    }

    /// Representative of `x` in `B [0,1)^n`.
    pub fn reduce(&self, x: &[f64]) -> Coords {
        let f: Coords = self
            .to_fractional(x)
            .iter()
            .map(|&v| {
                let r = v - v.floor();
                if r >= 1.0 {
                    0.0
                } else {
                    r
                }
            })
            .collect();
        self.from_fractional(&f)
    }

    /// Shortest vector in `delta + Λ`, searched over the 3^n shifts around the
    /// rounded fractional representative.
    pub fn nearest_image(&self, delta: &[f64]) -> Coords {
        let n = self.dim;
        let f = self.to_fractional(delta);
        let rounded: SmallVec<[i64; 3]> = f.iter().map(|v| v.round() as i64).collect();
        let shift = self.vector(&rounded);
        let base: Coords = delta.iter().zip(&shift).map(|(d, s)| d - s).collect();
        let mut best = base.clone();
        let mut best_norm = norm_sq(&base);
        let mut k: SmallVec<[i64; 3]> = smallvec![-1; n];
        loop {
            if k.iter().any(|&v| v != 0) {
                let lv = self.vector(&k);
                let cand: Coords = base.iter().zip(&lv).map(|(b, l)| b + l).collect();
                let c = norm_sq(&cand);
                if c < best_norm {
                    best_norm = c;
                    best = cand;
                }
            }
            if !odometer(&mut k, -1, 1) {
                break;
            }
        }
        best
    }

    /// All `nu` with `|center + B nu| <= radius`, together with the shifted vector.
    pub fn points_in_ball(&self, center: &[f64], radius: f64) -> Vec<(SmallVec<[i64; 3]>, Coords)> {
        let n = self.dim;
        let reach = ((radius + norm_sq(center).sqrt()) / self.smallest_singular).floor() as i64 + 1;
        let mut out = Vec::new();
        let mut k: SmallVec<[i64; 3]> = smallvec![-reach; n];
        let r2 = radius * radius;
        loop {
            let lv = self.vector(&k);
            let y: Coords = center.iter().zip(&lv).map(|(c, l)| c + l).collect();
            if norm_sq(&y) <= r2 {
                out.push((k.clone(), y));
            }
            if !odometer(&mut k, -reach, reach) {
                break;
            }
        }
        out
    }

    /// Upper bound on `sum_{λ : |c+λ| > radius} (4πs)^{-n/2} exp(-|c+λ|^2 / 4s)`,
    /// uniform in the offset `c`.
    ///
    /// Coset points are at least `a` (shortest vector) apart, so balls of radius
    /// `a/2` around them are disjoint and each Gaussian term is dominated by the
    /// average of `exp(-(|z| - a/2)^2 / 4s)` over its ball. Valid for `radius >= a`.
    pub fn gaussian_tail_bound(&self, s: f64, radius: f64) -> f64 {
        let a = self.shortest;
        if radius < a {
            return f64::INFINITY;
        }
        let n = self.dim;
        let half = 0.5 * a;
        let lower = radius - a;
        let nf = n as f64;
        let sphere_area = 2.0 * PI.powf(nf / 2.0) / gamma(nf / 2.0);
        let ball_volume = PI.powf(nf / 2.0) * half.powi(n as i32) / gamma(nf / 2.0 + 1.0);
        let moments = gaussian_tail_moments(s, lower, n - 1);
        let mut radial = 0.0;
        for (k, mk) in moments.iter().enumerate() {
            radial += binomial(n - 1, k) * half.powi((n - 1 - k) as i32) * mk;
        }
        (4.0 * PI * s).powf(-nf / 2.0) * sphere_area / ball_volume * radial
    }

    /// Truncated image sum `sum_λ (4πs)^{-n/2} exp(-|delta+λ|^2/4s)` with the
    /// certified bound on what was left out.
    pub fn gaussian_image_sum(&self, delta: &[f64], s: f64, tol: f64) -> (f64, f64) {
        let (terms, bound) = self.image_terms(delta, s, tol);
        let mut values: Vec<f64> = terms.into_iter().map(|(_, v)| v).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        (crate::numeric::compensated_sum(values), bound)
    }

    /// The individual image terms `(y, (4πs)^{-n/2} exp(-|y|^2/4s))` for `y` in
    /// `delta + Λ` up to the truncation radius, plus the tail bound.
    pub fn image_terms(&self, delta: &[f64], s: f64, tol: f64) -> (Vec<(Coords, f64)>, f64) {
        let nearest = self.nearest_image(delta);
        let radius = self.truncation_radius(s, norm_sq(&nearest).sqrt(), tol);
        let norm = (4.0 * PI * s).powf(-(self.dim as f64) / 2.0);
        let terms = self
            .points_in_ball(&nearest, radius)
            .into_iter()
            .map(|(_, y)| {
                let v = norm * (-norm_sq(&y) / (4.0 * s)).exp();
                (y, v)
            })
            .collect();
        (terms, self.gaussian_tail_bound(s, radius))
    }

    fn truncation_radius(&self, s: f64, offset: f64, tol: f64) -> f64 {
        let step = s.sqrt();
        let mut radius = self.shortest + offset;
        while self.gaussian_tail_bound(s, radius) >= tol {
            radius += step;
        }
        radius
    }

    fn compute_shortest(&self) -> f64 {
        let candidate = self
            .generators
            .iter()
            .map(|g| norm_sq(g).sqrt())
            .fold(f64::INFINITY, f64::min);
        let reach = (candidate / self.smallest_singular).floor() as i64 + 1;
        let mut best = candidate;
        let mut k: SmallVec<[i64; 3]> = smallvec![-reach; self.dim];
        loop {
            if k.iter().any(|&v| v != 0) {
                let l = norm_sq(&self.vector(&k)).sqrt();
                if l < best {
                    best = l;
                }
            }
            if !odometer(&mut k, -reach, reach) {
                break;
            }
        }
        best
    }
}

/// `I_k = ∫_A^∞ u^k exp(-u^2/4s) du` for `k = 0..=max_k`.
fn gaussian_tail_moments(s: f64, lower: f64, max_k: usize) -> Vec<f64> {
    let g = (-lower * lower / (4.0 * s)).exp();
    let mut m = vec![0.0; max_k + 1];
    m[0] = (PI * s).sqrt() * erfc(lower / (2.0 * s.sqrt()));
    if max_k >= 1 {
        m[1] = 2.0 * s * g;
    }
    for k in 2..=max_k {
        m[k] = 2.0 * s * lower.powi(k as i32 - 1) * g + 2.0 * s * (k as f64 - 1.0) * m[k - 2];
    }
    m
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Advances a counter in `[lo, hi]^n`; false once it wraps around.
pub(crate) fn odometer(k: &mut [i64], lo: i64, hi: i64) -> bool {
    for v in k.iter_mut() {
        if *v < hi {
            *v += 1;
            return true;
        }
        *v = lo;
    }
    false
}

#[inline]
pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Clone, Debug)]
pub enum ManifoldKind {
    Circle { circumference: f64, lattice: Lattice },
    FlatTorus(Lattice),
    Sphere2,
}

#[derive(Clone, Debug)]
pub struct Manifold {
    kind: ManifoldKind,
    /// `p_1(x, x)`; catalog manifolds are homogeneous so one value serves every base point.
    diagonal: OnceLock<f64>,
}

impl Manifold {
    pub fn circle(circumference: f64) -> Result<Self> {
        if !(circumference > 0.0 && circumference.is_finite()) {
            return Err(Error::InvalidManifold(format!(
                "circumference must be positive, got {circumference}"
            )));
        }
        let lattice = Lattice::new(vec![vec![circumference]])?;
        Ok(Self::from_kind(ManifoldKind::Circle {
            circumference,
            lattice,
        }))
    }

    pub fn flat_torus(generators: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self::from_kind(ManifoldKind::FlatTorus(Lattice::new(generators)?)))
    }

    /// `R^n / Z^n`.
    pub fn square_torus(n: usize) -> Result<Self> {
        Self::flat_torus(
            (0..n)
                .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn sphere() -> Self {
        Self::from_kind(ManifoldKind::Sphere2)
    }

    fn from_kind(kind: ManifoldKind) -> Self {
        Self {
            kind,
            diagonal: OnceLock::new(),
        }
    }

    pub fn from_descriptor(d: &ManifoldDescriptor) -> Result<Self> {
        match d {
            ManifoldDescriptor::Circle { circumference } => Self::circle(*circumference),
            ManifoldDescriptor::FlatTorus { basis } => Self::flat_torus(basis.clone()),
            ManifoldDescriptor::Sphere2 => Ok(Self::sphere()),
        }
    }

    pub fn descriptor(&self) -> ManifoldDescriptor {
        match &self.kind {
            ManifoldKind::Circle { circumference, .. } => ManifoldDescriptor::Circle {
                circumference: *circumference,
            },
            ManifoldKind::FlatTorus(l) => ManifoldDescriptor::FlatTorus {
                basis: l.generators.clone(),
            },
            ManifoldKind::Sphere2 => ManifoldDescriptor::Sphere2,
        }
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }

    /// The deck lattice for flat members, `None` on the sphere.
    pub fn lattice(&self) -> Option<&Lattice> {
        match &self.kind {
            ManifoldKind::Circle { lattice, .. } | ManifoldKind::FlatTorus(lattice) => Some(lattice),
            ManifoldKind::Sphere2 => None,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.lattice().is_some()
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Circle { .. } => 1,
            ManifoldKind::FlatTorus(l) => l.dim,
            ManifoldKind::Sphere2 => 2,
        }
    }

    /// Number of stored coordinates per point.
    pub fn ambient_dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Sphere2 => 3,
            _ => self.dim(),
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            ManifoldKind::Circle { circumference, .. } => *circumference,
            ManifoldKind::FlatTorus(l) => l.covolume,
            ManifoldKind::Sphere2 => 4.0 * PI,
        }
    }

    pub fn point(&self, coords: &[f64]) -> Result<ManifoldPoint> {
        if coords.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, manifold expects {}",
                coords.len(),
                self.ambient_dim()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidManifold("point coordinates must be finite".into()));
        }
        match &self.kind {
            ManifoldKind::Sphere2 => {
                let n = norm_sq(coords).sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidManifold(format!(
                        "sphere point has norm {n}, expected 1"
                    )));
                }
                Ok(ManifoldPoint {
                    coords: coords.iter().map(|v| v / n).collect(),
                })
            }
            _ => Ok(self.reduce_lifted(coords)),
        }
    }

    /// Origin on flat members, `(1, 0, 0)` on the sphere.
    pub fn default_base_point(&self) -> ManifoldPoint {
        match &self.kind {
            ManifoldKind::Sphere2 => ManifoldPoint::from_raw(&[1.0, 0.0, 0.0]),
            _ => ManifoldPoint {
                coords: smallvec![0.0; self.dim()],
            },
        }
    }

    /// Projects lifted Euclidean coordinates (flat) or an ambient vector (sphere) back onto `M`.
    pub fn reduce_lifted(&self, coords: &[f64]) -> ManifoldPoint {
        match self.lattice() {
            Some(l) => ManifoldPoint {
                coords: l.reduce(coords),
            },
            None => {
                let n = norm_sq(coords).sqrt();
                ManifoldPoint {
                    coords: coords.iter().map(|v| v / n).collect(),
                }
            }
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match &self.kind {
            ManifoldKind::Circle { circumference, .. } => 0.5 * circumference,
            ManifoldKind::FlatTorus(l) => 0.5 * l.shortest,
            ManifoldKind::Sphere2 => PI,
        }
    }

    /// Half the injectivity radius; consecutive loop vertices must be closer than this.
    pub fn rho(&self) -> f64 {
        0.5 * self.injectivity_radius()
    }

    /// Nearest-image displacement from `p` to `q` on flat members.
    pub fn flat_displacement(&self, p: &ManifoldPoint, q: &ManifoldPoint) -> Option<Coords> {
        self.lattice().map(|l| {
            let delta: Coords = q.coords.iter().zip(&p.coords).map(|(a, b)| a - b).collect();
            l.nearest_image(&delta)
        })
    }

    pub fn distance(&self, p: &ManifoldPoint, q: &ManifoldPoint) -> f64 {
        match self.flat_displacement(p, q) {
            Some(d) => norm_sq(&d).sqrt(),
            None => sphere_angle(&p.coords, &q.coords),
        }
    }

    /// The unique minimal geodesic from `p` to `q`; requires `d(p, q) < rho`.
    pub fn geodesic(&self, p: &ManifoldPoint, q: &ManifoldPoint) -> Result<GeodesicSegment> {
        let rho = self.rho();
        match self.flat_displacement(p, q) {
            Some(d) => {
                let len = norm_sq(&d).sqrt();
                if len >= rho {
                    return Err(Error::DistanceTooLarge { distance: len, rho });
                }
                Ok(GeodesicSegment::flat(p.clone(), q.clone(), d))
            }
            None => {
                let angle = sphere_angle(&p.coords, &q.coords);
                if angle >= rho {
                    return Err(Error::DistanceTooLarge {
                        distance: angle,
                        rho,
                    });
                }
                Ok(GeodesicSegment::great_circle(p.clone(), q.clone()))
            }
        }
    }

    /// Straight segment from `p` along a lifted displacement (flat members only).
    /// It is a geodesic of the torus but is minimal only when `|displacement| < rho`.
    pub fn lifted_segment(&self, p: &ManifoldPoint, displacement: &[f64]) -> Result<GeodesicSegment> {
        if !self.is_flat() {
            return Err(Error::InvalidManifold("lifted segments need a flat manifold".into()));
        }
        let end: Coords = p.coords.iter().zip(displacement).map(|(a, b)| a + b).collect();
        Ok(GeodesicSegment::flat(
            p.clone(),
            self.reduce_lifted(&end),
            displacement.iter().copied().collect(),
        ))
    }

    pub fn interpolate(&self, p: &ManifoldPoint, q: &ManifoldPoint, t: f64) -> Result<ManifoldPoint> {
        let seg = self.geodesic(p, q)?;
        Ok(self.segment_point(&seg, t))
    }

    pub fn segment_point(&self, seg: &GeodesicSegment, t: f64) -> ManifoldPoint {
        if t == 0.0 {
            return seg.start.clone();
        }
        if t == 1.0 {
            return seg.end.clone();
        }
        let mut buf = [0.0; 8];
        let n = seg.ambient_dim();
        seg.point_into(t, &mut buf[..n]);
        self.reduce_lifted(&buf[..n])
    }

    /// Exponential map at a sphere point applied to an ambient tangent vector.
    pub fn sphere_exp(&self, p: &ManifoldPoint, v: &[f64; 3]) -> ManifoldPoint {
        let len = norm_sq(v).sqrt();
        if len == 0.0 {
            return p.clone();
        }
        let (s, c) = len.sin_cos();
        let x = &p.coords;
        let y = [
            c * x[0] + s * v[0] / len,
            c * x[1] + s * v[1] / len,
            c * x[2] + s * v[2] / len,
        ];
        self.reduce_lifted(&y)
    }

    pub fn heat_kernel(&self, s: f64, p: &ManifoldPoint, q: &ManifoldPoint) -> Result<f64> {
        self.heat_kernel_certified(s, p, q, HEAT_KERNEL_TOL).map(|(v, _)| v)
    }

    /// Heat kernel value with the bound on the truncated remainder (always `< tol`).
    /// Arguments are put in a canonical order first so the result is exactly symmetric.
    pub fn heat_kernel_certified(
        &self,
        s: f64,
        p: &ManifoldPoint,
        q: &ManifoldPoint,
        tol: f64,
    ) -> Result<(f64, f64)> {
        if !(s > 0.0) {
            return Err(Error::NonPositiveTime(s));
        }
        let (a, b) = match p.coords.partial_cmp(&q.coords) {
            Some(Ordering::Greater) => (q, p),
            _ => (p, q),
        };
        match self.lattice() {
            Some(l) => {
                let delta: Coords = b.coords.iter().zip(&a.coords).map(|(x, y)| x - y).collect();
                Ok(l.gaussian_image_sum(&delta, s, tol))
            }
            None => {
                let c = a.coords[0] * b.coords[0] + a.coords[1] * b.coords[1] + a.coords[2] * b.coords[2];
                Ok(sphere_spectral_sum(s, c.clamp(-1.0, 1.0), tol))
            }
        }
    }

    /// Flat kernel as a function of a lifted displacement.
    pub fn heat_kernel_displacement(&self, s: f64, delta: &[f64]) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::NonPositiveTime(s));
        }
        let l = self
            .lattice()
            .ok_or_else(|| Error::InvalidManifold("displacement kernel needs a flat manifold".into()))?;
        Ok(l.gaussian_image_sum(delta, s, HEAT_KERNEL_TOL).0)
    }

    /// Sphere kernel as a function of geodesic distance.
    pub fn sphere_heat_kernel_at_distance(&self, s: f64, distance: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::NonPositiveTime(s));
        }
        Ok(sphere_spectral_sum(s, distance.cos(), HEAT_KERNEL_TOL).0)
    }

    /// `p_1(x, x)`, computed once per manifold.
    pub fn heat_kernel_diagonal_total(&self, p: &ManifoldPoint) -> f64 {
        *self.diagonal.get_or_init(|| {
            self.heat_kernel(1.0, p, p)
                .expect("unit time is positive")
        })
    }
}

/// Angle between unit vectors, stable near 0 and π.
pub(crate) fn sphere_angle(p: &[f64], q: &[f64]) -> f64 {
    let c = cross(p, q);
    let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    norm_sq(&c).sqrt().atan2(dot)
}

pub(crate) fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `sum_l (2l+1)/(4π) e^{-l(l+1)s} P_l(cos d)`, stopped once the geometric bound on
/// the remaining terms drops below `tol`.
fn sphere_spectral_sum(s: f64, cos_d: f64, tol: f64) -> (f64, f64) {
    if s < SPECTRAL_SMALL_TIME {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| {
            log::warn!("spectral heat kernel at s = {s} converges slowly and loses accuracy")
        });
    }
    let term = |l: f64| (2.0 * l + 1.0) * (-l * (l + 1.0) * s).exp() / (4.0 * PI);
    let mut acc = crate::numeric::CompensatedSum::new();
    let (mut p_prev, mut p_cur) = (1.0, cos_d);
    acc.add(term(0.0));
    let mut l = 1usize;
    loop {
        let lf = l as f64;
        acc.add(term(lf) * p_cur);
        let next = term(lf + 1.0);
        let ratio = (2.0 * lf + 5.0) / (2.0 * lf + 3.0) * (-2.0 * (lf + 2.0) * s).exp();
        if ratio < 1.0 {
            let tail = next / (1.0 - ratio);
            if tail < tol {
                return (acc.value(), tail);
            }
        }
        let p_next = ((2.0 * lf + 1.0) * cos_d * p_cur - lf * p_prev) / (lf + 1.0);
        p_prev = p_cur;
        p_cur = p_next;
        l += 1;
    }
}

#[derive(Clone, Debug)]
enum SegmentPath {
    Flat {
        origin: Coords,
        displacement: Coords,
    },
    GreatCircle {
        from: [f64; 3],
        tangent: [f64; 3],
        angle: f64,
    },
}

/// Constant-speed geodesic parameterized over `[0, 1]`.
#[derive(Clone, Debug)]
pub struct GeodesicSegment {
    start: ManifoldPoint,
    end: ManifoldPoint,
    length: f64,
    path: SegmentPath,
}

impl GeodesicSegment {
    fn flat(start: ManifoldPoint, end: ManifoldPoint, displacement: Coords) -> Self {
        Self {
            length: norm_sq(&displacement).sqrt(),
            path: SegmentPath::Flat {
                origin: start.coords.clone(),
                displacement,
            },
            start,
            end,
        }
    }

    fn great_circle(start: ManifoldPoint, end: ManifoldPoint) -> Self {
        let p = &start.coords;
        let q = &end.coords;
        let angle = sphere_angle(p, q);
        let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
        let w = [q[0] - dot * p[0], q[1] - dot * p[1], q[2] - dot * p[2]];
        let wn = norm_sq(&w).sqrt();
        let tangent = if wn > 0.0 && angle > 0.0 {
            [w[0] / wn, w[1] / wn, w[2] / wn]
        } else {
            [0.0; 3]
        };
        Self {
            length: angle,
            path: SegmentPath::GreatCircle {
                from: [p[0], p[1], p[2]],
                tangent,
                angle: if wn > 0.0 { angle } else { 0.0 },
            },
            start,
            end,
        }
    }

    pub fn start(&self) -> &ManifoldPoint {
        &self.start
    }

    pub fn end(&self) -> &ManifoldPoint {
        &self.end
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.path {
            SegmentPath::Flat { origin, .. } => origin.len(),
            SegmentPath::GreatCircle { .. } => 3,
        }
    }

    /// Lifted displacement of a flat segment.
    pub fn displacement(&self) -> Option<&[f64]> {
        match &self.path {
            SegmentPath::Flat { displacement, .. } => Some(displacement),
            SegmentPath::GreatCircle { .. } => None,
        }
    }

    /// Unit normal of the supporting great circle (sphere segments of positive length).
    pub fn great_circle_normal(&self) -> Option<[f64; 3]> {
        match &self.path {
            SegmentPath::GreatCircle { from, tangent, angle } if *angle > 0.0 => {
                Some(cross(from, tangent))
            }
            _ => None,
        }
    }

    /// Initial velocity `γ'(0)`.
    pub fn initial_velocity(&self) -> Coords {
        let mut v: Coords = smallvec![0.0; self.ambient_dim()];
        self.velocity_into(0.0, &mut v);
        v
    }

    /// Lifted position (flat) or ambient position (sphere) at parameter `t`.
    #[inline]
    pub fn point_into(&self, t: f64, out: &mut [f64]) {
        match &self.path {
            SegmentPath::Flat { origin, displacement } => {
                for ((o, a), d) in out.iter_mut().zip(origin).zip(displacement) {
                    *o = a + t * d;
                }
            }
            SegmentPath::GreatCircle { from, tangent, angle } => {
                let (s, c) = (t * angle).sin_cos();
                for k in 0..3 {
                    out[k] = c * from[k] + s * tangent[k];
                }
            }
        }
    }

    #[inline]
    pub fn velocity_into(&self, t: f64, out: &mut [f64]) {
        match &self.path {
            SegmentPath::Flat { displacement, .. } => out.copy_from_slice(displacement),
            SegmentPath::GreatCircle { from, tangent, angle } => {
                let (s, c) = (t * angle).sin_cos();
                for k in 0..3 {
                    out[k] = angle * (-s * from[k] + c * tangent[k]);
                }
            }
        }
    }

    pub fn reversed(&self) -> Self {
        match &self.path {
            SegmentPath::Flat { displacement, .. } => {
                let lifted_end: Coords = self
                    .start
                    .coords
                    .iter()
                    .zip(displacement)
                    .map(|(a, d)| a + d)
                    .collect();
                Self {
                    start: self.end.clone(),
                    end: self.start.clone(),
                    length: self.length,
                    path: SegmentPath::Flat {
                        origin: lifted_end,
                        displacement: displacement.iter().map(|d| -d).collect(),
                    },
                }
            }
            SegmentPath::GreatCircle { .. } => {
                Self::great_circle(self.end.clone(), self.start.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(m: &Manifold, c: &[f64]) -> ManifoldPoint {
        m.point(c).unwrap()
    }

    #[test]
    fn distances_on_catalog() {
        let c = Manifold::circle(1.0).unwrap();
        assert!((c.distance(&pt(&c, &[0.0]), &pt(&c, &[0.3])) - 0.3).abs() < 1e-15);
        let t = Manifold::square_torus(2).unwrap();
        let d = t.distance(&pt(&t, &[0.0, 0.0]), &pt(&t, &[0.9, 0.0]));
        assert!((d - 0.1).abs() < 1e-15);
        let s = Manifold::sphere();
        let d = s.distance(&pt(&s, &[0.0, 0.0, 1.0]), &pt(&s, &[1.0, 0.0, 0.0]));
        assert!((d - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn injectivity_and_rho() {
        let c = Manifold::circle(1.0).unwrap();
        assert_eq!((c.injectivity_radius(), c.rho()), (0.5, 0.25));
        let t = Manifold::square_torus(2).unwrap();
        assert_eq!((t.injectivity_radius(), t.rho()), (0.5, 0.25));
        let s = Manifold::sphere();
        assert_eq!((s.injectivity_radius(), s.rho()), (PI, PI / 2.0));
        // a skewed basis whose shortest vector is not a generator
        let skew = Manifold::flat_torus(vec![vec![1.0, 0.0], vec![0.9, 0.3]]).unwrap();
        let shortest = (0.1f64 * 0.1 + 0.3 * 0.3).sqrt();
        assert!((skew.injectivity_radius() - 0.5 * shortest).abs() < 1e-15);
    }

    #[test]
    fn interpolation_examples() {
        let t = Manifold::square_torus(2).unwrap();
        let m = t.interpolate(&pt(&t, &[0.0, 0.0]), &pt(&t, &[0.2, 0.0]), 0.5).unwrap();
        assert!((m.coords()[0] - 0.1).abs() < 1e-15 && m.coords()[1] == 0.0);

        let c = Manifold::circle(1.0).unwrap();
        let m = c.interpolate(&pt(&c, &[0.9]), &pt(&c, &[0.1]), 0.5).unwrap();
        let x = m.coords()[0];
        assert!(x.min(1.0 - x) < 1e-15, "{x}");

        let s = Manifold::sphere();
        let p = pt(&s, &[1.0, 0.0, 0.0]);
        let q = pt(&s, &[0.4f64.cos(), 0.4f64.sin(), 0.0]);
        let m = s.interpolate(&p, &q, 0.25).unwrap();
        assert!((s.distance(&p, &m) - 0.1).abs() < 1e-14);
        assert!(m.coords()[2].abs() < 1e-15);
    }

    #[test]
    fn interpolation_rejects_far_points() {
        let c = Manifold::circle(1.0).unwrap();
        let err = c.interpolate(&pt(&c, &[0.0]), &pt(&c, &[0.25]), 0.5);
        assert!(matches!(err, Err(Error::DistanceTooLarge { .. })));
    }

    #[test]
    fn heat_kernel_rejects_nonpositive_time() {
        let c = Manifold::circle(1.0).unwrap();
        let p = c.default_base_point();
        assert!(matches!(c.heat_kernel(0.0, &p, &p), Err(Error::NonPositiveTime(_))));
        assert!(matches!(c.heat_kernel(-1.0, &p, &p), Err(Error::NonPositiveTime(_))));
    }

    #[test]
    fn singular_lattice_is_rejected() {
        assert!(Manifold::flat_torus(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).is_err());
        assert!(Manifold::circle(0.0).is_err());
        assert!(Manifold::circle(-1.0).is_err());
    }

    #[test]
    fn tail_bound_dominates_brute_force_remainder() {
        let l = Lattice::new(vec![vec![1.0, 0.0], vec![0.4, 0.8]]).unwrap();
        let s = 0.3;
        let delta = [0.17, -0.05];
        let radius = 1.5;
        let norm = 1.0 / (4.0 * PI * s);
        let remainder: f64 = l
            .points_in_ball(&delta, 12.0)
            .into_iter()
            .map(|(_, y)| norm_sq(&y))
            .filter(|&r2| r2 > radius * radius)
            .map(|r2| norm * (-r2 / (4.0 * s)).exp())
            .sum();
        assert!(remainder > 0.0);
        assert!(l.gaussian_tail_bound(s, radius) >= remainder);
    }

    #[test]
    fn point_reduction_lands_in_fundamental_domain() {
        let t = Manifold::flat_torus(vec![vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let p = t.point(&[-3.3, 7.25]).unwrap();
        let f = t.lattice().unwrap().to_fractional(p.coords());
        assert!(f.iter().all(|v| (0.0..1.0).contains(v)), "{f:?}");
        let s = Manifold::sphere();
        assert!(s.point(&[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn reversed_segment_swaps_endpoints() {
        let s = Manifold::sphere();
        let p = pt(&s, &[1.0, 0.0, 0.0]);
        let q = pt(&s, &[0.6, 0.48, 0.64]);
        let seg = s.geodesic(&p, &q).unwrap();
        let rev = seg.reversed();
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for t in [0.0, 0.3, 1.0] {
            seg.point_into(t, &mut a);
            rev.point_into(1.0 - t, &mut b);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
        }
    }
}

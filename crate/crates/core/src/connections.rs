//! Metric connections `∇ = d + Σ Γ_i dx^i` on trivialized bundles over catalog manifolds.
//!
//! Flat members use one global chart: `Γ` is evaluated at lifted Euclidean
//! coordinates and every field is lattice periodic. The sphere carries the
//! Levi-Civita connection of its tangent bundle written in the orthonormal
//! spherical frame `(e_θ, e_φ)` about one of the three coordinate axes.
//!
//! A U(1) bundle is a rank-2 real bundle with the complex structure `J` fixed;
//! U(1)-valued fields are real multiples of `J`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GeodesicSegment, Manifold, ManifoldPoint};
use crate::linalg::Mat;
use crate::numeric::CompensatedSum;

/// `evaluate_gamma` refuses sphere points this close to the z-axis poles.
pub const SPHERE_POLE_MARGIN: f64 = 0.2;

/// Step of the central-difference curvature fallback.
pub const CURVATURE_FD_STEP: f64 = 1e-5;

const SKEW_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationDescriptor {
    /// Integer frequencies in lattice coordinates.
    pub wavevector: Vec<i64>,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConnectionDescriptor {
    /// Flat U(1) connection with holonomy `exp(2πi θ_j)` around generator `j`, plus an
    /// optional exact term `d(b sin(2π k·u))` in lattice coordinates `u`.
    FlatU1 {
        periods: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        oscillation: Option<OscillationDescriptor>,
    },
    /// `a sin(2π u¹) J du²` on a 2-torus with lattice coordinates `u`.
    SinForm { amplitude: f64 },
    LeviCivita,
    Trivial {
        #[serde(default = "default_rank")]
        rank: usize,
    },
    /// Constant skew matrices, one per coordinate direction.
    Constant { matrices: Vec<Vec<Vec<f64>>> },
    Family {
        base: Box<ConnectionDescriptor>,
        delta: Box<ConnectionDescriptor>,
        schedule: Vec<f64>,
    },
}

fn default_rank() -> usize {
    2
}

/// Periods of a flat U(1) connection, reduced to `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatU1Form {
    periods: Vec<f64>,
}

impl FlatU1Form {
    pub fn new(periods: &[f64]) -> Self {
        Self {
            periods: periods.iter().map(|&t| reduce_unit(t)).collect(),
        }
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    /// `θ_ν = Σ ν_j θ_j mod 1`.
    pub fn holonomy_angle(&self, nu: &[i64]) -> f64 {
        let s: CompensatedSum = nu
            .iter()
            .zip(&self.periods)
            .map(|(&n, &t)| n as f64 * t)
            .collect();
        reduce_unit(s.value())
    }
}

pub fn flat_u1_holonomy_angle(form: &FlatU1Form, nu: &[i64]) -> f64 {
    form.holonomy_angle(nu)
}

/// Maps a real number to `[0, 1)`.
pub fn reduce_unit(t: f64) -> f64 {
    let r = t.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug)]
enum Field {
    Constant(Vec<Mat>),
    /// `Γ_i(x) = a sin(2π κ·x + φ) η_i G`.
    Wave {
        amplitude: f64,
        wavevector: Vec<f64>,
        phase: f64,
        covector: Vec<f64>,
        generator: Mat,
    },
    LeviCivita,
}

impl Field {
    fn j_multiple(&self) -> bool {
        let is_j = |m: &Mat| {
            m.rank() == 2 && m.get(0, 0) == 0.0 && m.get(1, 1) == 0.0 && m.get(0, 1) == -m.get(1, 0)
        };
        match self {
            Field::Constant(ms) => ms.iter().all(is_j),
            Field::Wave { generator, .. } => is_j(generator),
            Field::LeviCivita => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricConnection {
    rank: usize,
    dim: usize,
    on_sphere: bool,
    terms: Vec<(f64, Field)>,
    flat_u1: Option<FlatU1Form>,
    u1: bool,
}

impl MetricConnection {
    pub fn trivial(rank: usize, manifold: &Manifold) -> Result<Self> {
        if !(1..=crate::linalg::MAX_RANK).contains(&rank) {
            return Err(Error::InvalidConnection(format!(
                "rank {rank} outside 1..={}",
                crate::linalg::MAX_RANK
            )));
        }
        let flat_u1 = match (rank, manifold.lattice()) {
            (2, Some(l)) => Some(FlatU1Form::new(&vec![0.0; l.dim()])),
            _ => None,
        };
        Ok(Self {
            rank,
            dim: manifold.dim(),
            on_sphere: !manifold.is_flat(),
            terms: Vec::new(),
            flat_u1,
            u1: rank == 2,
        })
    }

    /// Builds a single connection; family descriptors are rejected.
    pub fn from_descriptor(d: &ConnectionDescriptor, manifold: &Manifold) -> Result<Self> {
        let flat_only = |name: &str| -> Result<()> {
            if manifold.is_flat() {
                Ok(())
            } else {
                Err(Error::InvalidConnection(format!("{name} needs a circle or flat torus")))
            }
        };
        match d {
            ConnectionDescriptor::Trivial { rank } => Self::trivial(*rank, manifold),
            ConnectionDescriptor::FlatU1 {
                periods,
                oscillation,
            } => {
                flat_only("flat_u1")?;
                let lattice = manifold.lattice().expect("flat");
                if periods.len() != lattice.dim() {
                    return Err(Error::InvalidConnection(format!(
                        "flat_u1 needs {} periods, got {}",
                        lattice.dim(),
                        periods.len()
                    )));
                }
                if periods.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidConnection("periods must be finite".into()));
                }
                let j = Mat::complex_structure();
                // holonomy exp(-∫Γ) = rotation(2π ∫c) for Γ = -2π c J, c = B^{-T} θ
                let c = lattice.dual_covector(periods);
                let mut terms = vec![(
                    1.0,
                    Field::Constant(c.iter().map(|&ci| j.scale(-2.0 * PI * ci)).collect()),
                )];
                if let Some(osc) = oscillation {
                    if osc.wavevector.len() != lattice.dim() {
                        return Err(Error::InvalidConnection(
                            "oscillation wavevector has wrong length".into(),
                        ));
                    }
                    let k: Vec<f64> = osc.wavevector.iter().map(|&v| v as f64).collect();
                    let kappa: Vec<f64> = lattice.dual_covector(&k).to_vec();
                    terms.push((
                        1.0,
                        Field::Wave {
                            amplitude: -4.0 * PI * PI * osc.amplitude,
                            wavevector: kappa.clone(),
                            phase: 0.5 * PI,
                            covector: kappa,
                            generator: j,
                        },
                    ));
                }
                Ok(Self {
                    rank: 2,
                    dim: lattice.dim(),
                    on_sphere: false,
                    terms,
                    flat_u1: Some(FlatU1Form::new(periods)),
                    u1: true,
                })
            }
            ConnectionDescriptor::SinForm { amplitude } => {
                flat_only("sin_form")?;
                let lattice = manifold.lattice().expect("flat");
                if lattice.dim() != 2 {
                    return Err(Error::InvalidConnection("sin_form needs a 2-torus".into()));
                }
                Ok(Self {
                    rank: 2,
                    dim: 2,
                    on_sphere: false,
                    terms: vec![(
                        1.0,
                        Field::Wave {
                            amplitude: *amplitude,
                            wavevector: lattice.dual_row(0).to_vec(),
                            phase: 0.0,
                            covector: lattice.dual_row(1).to_vec(),
                            generator: Mat::complex_structure(),
                        },
                    )],
                    flat_u1: None,
                    u1: true,
                })
            }
            ConnectionDescriptor::LeviCivita => {
                if manifold.is_flat() {
                    // flat metric: the coordinate frame is parallel
                    return Self::trivial(manifold.dim(), manifold).map(|mut c| {
                        c.flat_u1 = None;
                        c.u1 = false;
                        c
                    });
                }
                Ok(Self {
                    rank: 2,
                    dim: 2,
                    on_sphere: true,
                    terms: vec![(1.0, Field::LeviCivita)],
                    flat_u1: None,
                    u1: true,
                })
            }
            ConnectionDescriptor::Constant { matrices } => {
                flat_only("constant")?;
                if matrices.len() != manifold.dim() {
                    return Err(Error::InvalidConnection(format!(
                        "constant connection needs {} matrices, got {}",
                        manifold.dim(),
                        matrices.len()
                    )));
                }
                let ms = matrices
                    .iter()
                    .map(|rows| Mat::from_rows(rows))
                    .collect::<Result<Vec<_>>>()?;
                let rank = ms[0].rank();
                for (i, m) in ms.iter().enumerate() {
                    if m.rank() != rank {
                        return Err(Error::InvalidConnection("matrices differ in rank".into()));
                    }
                    if m.skew_defect() >= SKEW_TOL {
                        return Err(Error::InvalidConnection(format!(
                            "matrix {i} is not skew-symmetric"
                        )));
                    }
                }
                let field = Field::Constant(ms);
                let u1 = field.j_multiple();
                Ok(Self {
                    rank,
                    dim: manifold.dim(),
                    on_sphere: false,
                    terms: vec![(1.0, field)],
                    flat_u1: None,
                    u1,
                })
            }
            ConnectionDescriptor::Family { .. } => Err(Error::InvalidConnection(
                "expected a single connection, got a family".into(),
            )),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn flat_u1(&self) -> Option<&FlatU1Form> {
        self.flat_u1.as_ref()
    }

    /// True when every coefficient is a multiple of `J`.
    pub fn is_u1(&self) -> bool {
        self.u1
    }

    pub fn is_trivial(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when `Γ` does not depend on the point (flat members only).
    pub fn has_constant_coefficients(&self) -> bool {
        !self.on_sphere && self.terms.iter().all(|(_, f)| matches!(f, Field::Constant(_)))
    }

    /// Upper bound on the operator norm of `Γ⟨v⟩` over unit vectors `v`
    /// (for the sphere: over points at least `asin(1/√3)` from the chart poles).
    pub fn coefficient_bound(&self) -> f64 {
        // skew matrices satisfy ‖A‖_op <= ‖A‖_F / √2
        let r2 = std::f64::consts::SQRT_2;
        self.terms
            .iter()
            .map(|(w, f)| {
                w.abs()
                    * match f {
                        Field::Constant(ms) => {
                            ms.iter().map(|m| m.frobenius_norm().powi(2)).sum::<f64>().sqrt() / r2
                        }
                        Field::Wave {
                            amplitude,
                            covector,
                            generator,
                            ..
                        } => {
                            amplitude.abs() * dot(covector, covector).sqrt() * generator.frobenius_norm()
                                / r2
                        }
                        Field::LeviCivita => 1.5,
                    }
            })
            .sum()
    }

    fn check_manifold(&self, manifold: &Manifold) -> Result<()> {
        if manifold.is_flat() == self.on_sphere || manifold.dim() != self.dim {
            return Err(Error::DimensionMismatch(
                "connection was built for a different manifold".into(),
            ));
        }
        Ok(())
    }

    /// `Γ⟨v⟩ = Σ_i Γ_i(x) v^i` at lifted coordinates of a flat manifold.
    #[inline]
    pub fn contract_flat(&self, x: &[f64], v: &[f64]) -> Mat {
        let mut g = Mat::zeros(self.rank);
        for (w, f) in &self.terms {
            match f {
                Field::Constant(ms) => {
                    for (m, vi) in ms.iter().zip(v) {
                        g = g.add_scaled(w * vi, m);
                    }
                }
                Field::Wave {
                    amplitude,
                    wavevector,
                    phase,
                    covector,
                    generator,
                } => {
                    let arg = 2.0 * PI * dot(wavevector, x) + phase;
                    g = g.add_scaled(w * amplitude * arg.sin() * dot(covector, v), generator);
                }
                Field::LeviCivita => unreachable!("Levi-Civita field lives on the sphere"),
            }
        }
        g
    }

    /// `Γ⟨v⟩` for an ambient point `y` and tangent `v` on the sphere, in the frame of chart `axis`.
    #[inline]
    pub fn contract_sphere(&self, axis: usize, y: &[f64], v: &[f64]) -> Mat {
        let mut g = Mat::zeros(self.rank);
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for (w, f) in &self.terms {
            if let Field::LeviCivita = f {
                // cot θ · (e_φ · v) with e_φ = (-y_c, y_b)/sin θ
                let sin2 = y[b] * y[b] + y[c] * y[c];
                let coeff = y[axis] * (y[b] * v[c] - y[c] * v[b]) / sin2;
                g = g.add_scaled(w * coeff, &Mat::complex_structure());
            }
        }
        g
    }

    /// Coefficient matrices `Γ_1..Γ_n` at `x`. On the sphere these are the
    /// coordinate components `(Γ_θ, Γ_φ)` of the z-axis chart.
    pub fn evaluate_gamma(&self, manifold: &Manifold, x: &ManifoldPoint) -> Result<Vec<Mat>> {
        self.check_manifold(manifold)?;
        let coords = self.chart_coordinates(manifold, x)?;
        Ok(self.gamma_at_chart(&coords))
    }

    fn chart_coordinates(&self, manifold: &Manifold, x: &ManifoldPoint) -> Result<Vec<f64>> {
        if manifold.is_flat() {
            return Ok(x.coords().to_vec());
        }
        let y = x.coords();
        let theta = (y[0].hypot(y[1])).atan2(y[2]);
        if theta < SPHERE_POLE_MARGIN || theta > PI - SPHERE_POLE_MARGIN {
            return Err(Error::ChartUndefined {
                point: y.to_vec(),
                margin: SPHERE_POLE_MARGIN,
            });
        }
        Ok(vec![theta, y[1].atan2(y[0])])
    }

    /// Coefficients in chart coordinates: lifted Euclidean (flat) or `(θ, φ)` (sphere).
    fn gamma_at_chart(&self, u: &[f64]) -> Vec<Mat> {
        let n = self.dim;
        let mut out = vec![Mat::zeros(self.rank); n];
        for (w, f) in &self.terms {
            match f {
                Field::Constant(ms) => {
                    for (o, m) in out.iter_mut().zip(ms) {
                        *o = o.add_scaled(*w, m);
                    }
                }
                Field::Wave {
                    amplitude,
                    wavevector,
                    phase,
                    covector,
                    generator,
                } => {
                    let s = amplitude * (2.0 * PI * dot(wavevector, u) + phase).sin();
                    for (o, eta) in out.iter_mut().zip(covector) {
                        *o = o.add_scaled(w * s * eta, generator);
                    }
                }
                Field::LeviCivita => {
                    out[1] = out[1].add_scaled(w * u[0].cos(), &Mat::complex_structure());
                }
            }
        }
        out
    }

    /// Analytic `∂_i Γ_j` in chart coordinates, indexed `[i][j]`.
    fn gamma_derivative_at_chart(&self, u: &[f64]) -> Vec<Vec<Mat>> {
        let n = self.dim;
        let mut out = vec![vec![Mat::zeros(self.rank); n]; n];
        for (w, f) in &self.terms {
            match f {
                Field::Constant(_) => {}
                Field::Wave {
                    amplitude,
                    wavevector,
                    phase,
                    covector,
                    generator,
                } => {
                    let c = 2.0 * PI * amplitude * (2.0 * PI * dot(wavevector, u) + phase).cos();
                    for i in 0..n {
                        for j in 0..n {
                            out[i][j] = out[i][j].add_scaled(
                                w * c * wavevector[i] * covector[j],
                                generator,
                            );
                        }
                    }
                }
                Field::LeviCivita => {
                    out[0][1] = out[0][1].add_scaled(-w * u[0].sin(), &Mat::complex_structure());
                }
            }
        }
        out
    }

    /// `F_ij = ∂_i Γ_j - ∂_j Γ_i + [Γ_i, Γ_j]` for `i < j`, in the chart of [`Self::evaluate_gamma`].
    pub fn curvature(&self, manifold: &Manifold, x: &ManifoldPoint) -> Result<CurvatureForm> {
        self.check_manifold(manifold)?;
        let n = self.dim;
        if self.flat_u1.is_some() {
            return Ok(CurvatureForm::zero(n, self.rank));
        }
        let u = self.chart_coordinates(manifold, x)?;
        let g = self.gamma_at_chart(&u);
        let dg = self.gamma_derivative_at_chart(&u);
        Ok(CurvatureForm::assemble(n, self.rank, |i, j| {
            dg[i][j] - dg[j][i] + g[i].commutator(&g[j])
        }))
    }

    /// Curvature from central differences of `Γ` with step [`CURVATURE_FD_STEP`].
    pub fn curvature_finite_difference(
        &self,
        manifold: &Manifold,
        x: &ManifoldPoint,
    ) -> Result<CurvatureForm> {
        self.check_manifold(manifold)?;
        let n = self.dim;
        let u = self.chart_coordinates(manifold, x)?;
        let g = self.gamma_at_chart(&u);
        let h = CURVATURE_FD_STEP;
        let partial = |i: usize, j: usize| {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            (self.gamma_at_chart(&up)[j] - self.gamma_at_chart(&dn)[j]).scale(0.5 / h)
        };
        Ok(CurvatureForm::assemble(n, self.rank, |i, j| {
            partial(i, j) - partial(j, i) + g[i].commutator(&g[j])
        }))
    }

    /// `∫_seg α` for a U(1) connection `Γ = α J` on a flat manifold, in closed form.
    pub fn u1_line_integral(&self, seg: &GeodesicSegment) -> Result<f64> {
        if !self.u1 || self.on_sphere {
            return Err(Error::NotU1(
                "closed-form line integrals need a J-valued connection on a flat manifold".into(),
            ));
        }
        let delta = seg.displacement().expect("flat segment");
        let mut x0 = [0.0; 8];
        seg.point_into(0.0, &mut x0[..delta.len()]);
        let x0 = &x0[..delta.len()];
        let mut acc = CompensatedSum::new();
        for (w, f) in &self.terms {
            match f {
                Field::Constant(ms) => {
                    for (m, d) in ms.iter().zip(delta) {
                        acc.add(w * m.get(1, 0) * d);
                    }
                }
                Field::Wave {
                    amplitude,
                    wavevector,
                    phase,
                    covector,
                    generator,
                } => {
                    // ∫_0^1 sin(φ0 + ψ t) dt = sin(φ0 + ψ/2) sinc(ψ/2)
                    let phi0 = 2.0 * PI * dot(wavevector, x0) + phase;
                    let half = PI * dot(wavevector, delta);
                    let sinc = if half == 0.0 { 1.0 } else { half.sin() / half };
                    acc.add(
                        w * generator.get(1, 0)
                            * amplitude
                            * dot(covector, delta)
                            * (phi0 + half).sin()
                            * sinc,
                    );
                }
                Field::LeviCivita => unreachable!(),
            }
        }
        Ok(acc.value())
    }

    /// Scalar curvature density `f` with `F_12 = f J` for U(1) connections on a 2-torus.
    pub fn u1_curvature_density(&self, x: &[f64]) -> Result<f64> {
        if !self.u1 || self.on_sphere || self.dim != 2 {
            return Err(Error::NotU1("curvature density needs a U(1) connection on a 2-torus".into()));
        }
        if self.flat_u1.is_some() {
            return Ok(0.0);
        }
        let dg = self.gamma_derivative_at_chart(x);
        Ok((dg[0][1] - dg[1][0]).get(1, 0))
    }

    /// Sum of two connections with the second scaled by `t`.
    fn combine(base: &Self, delta: &Self, t: f64) -> Result<Self> {
        if base.rank != delta.rank || base.dim != delta.dim || base.on_sphere != delta.on_sphere {
            return Err(Error::InvalidConnection(
                "family base and delta disagree in rank or manifold".into(),
            ));
        }
        let mut terms = base.terms.clone();
        if t != 0.0 {
            terms.extend(delta.terms.iter().map(|(w, f)| (w * t, f.clone())));
        }
        let flat_u1 = match (&base.flat_u1, &delta.flat_u1) {
            (Some(a), Some(b)) => Some(FlatU1Form::new(
                &a.periods
                    .iter()
                    .zip(&b.periods)
                    .map(|(x, y)| x + t * y)
                    .collect::<Vec<_>>(),
            )),
            (Some(a), None) if t == 0.0 => Some(a.clone()),
            _ => None,
        };
        Ok(Self {
            rank: base.rank,
            dim: base.dim,
            on_sphere: base.on_sphere,
            terms,
            flat_u1,
            u1: base.u1 && delta.u1,
        })
    }
}

/// Curvature components `F_ij`, `i < j`.
#[derive(Clone, Debug)]
pub struct CurvatureForm {
    dim: usize,
    components: Vec<Mat>,
}

impl CurvatureForm {
    fn zero(dim: usize, rank: usize) -> Self {
        Self::assemble(dim, rank, |_, _| Mat::zeros(rank))
    }

    fn assemble(dim: usize, _rank: usize, mut f: impl FnMut(usize, usize) -> Mat) -> Self {
        let mut components = Vec::new();
        for i in 0..dim {
            for j in i + 1..dim {
                components.push(f(i, j));
            }
        }
        Self { dim, components }
    }

    /// `F_ij`, with `F_ji = -F_ij` and `F_ii = 0`.
    pub fn component(&self, i: usize, j: usize) -> Mat {
        use std::cmp::Ordering::*;
        let idx = |a: usize, b: usize| a * self.dim - a * (a + 1) / 2 + (b - a - 1);
        match i.cmp(&j) {
            Less => self.components[idx(i, j)],
            Greater => -self.components[idx(j, i)],
            Equal => Mat::zeros(self.components.first().map_or(1, |m| m.rank())),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|m| m.frobenius_norm())
            .fold(0.0, f64::max)
    }
}

/// `Γ^t = Γ^0 + t Δ`.
#[derive(Clone, Debug)]
pub struct ConnectionFamily {
    base: MetricConnection,
    delta: MetricConnection,
    schedule: Vec<f64>,
}

impl ConnectionFamily {
    pub fn from_descriptor(d: &ConnectionDescriptor, manifold: &Manifold) -> Result<Self> {
        let ConnectionDescriptor::Family {
            base,
            delta,
            schedule,
        } = d
        else {
            return Err(Error::InvalidConnection("expected a family descriptor".into()));
        };
        if schedule.is_empty() || schedule.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidConnection(
                "family schedule must be a nonempty list of nonnegative numbers".into(),
            ));
        }
        let base = MetricConnection::from_descriptor(base, manifold)?;
        let delta = MetricConnection::from_descriptor(delta, manifold)?;
        MetricConnection::combine(&base, &delta, 0.0)?;
        Ok(Self {
            base,
            delta,
            schedule: schedule.clone(),
        })
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    pub fn limit(&self) -> MetricConnection {
        self.base.clone()
    }

    pub fn member(&self, t: f64) -> MetricConnection {
        MetricConnection::combine(&self.base, &self.delta, t).expect("validated at construction")
    }

    /// `max_x ‖Γ^t(x) - Γ^0(x)‖` over a grid of about `points` points, using
    /// Frobenius norms summed over coordinate directions.
    pub fn c0_deviation(&self, manifold: &Manifold, t: f64, points: usize) -> Result<f64> {
        let member = self.member(t);
        let mut worst: f64 = 0.0;
        for u in chart_grid(manifold, points) {
            let a = member.gamma_at_chart(&u);
            let b = self.base.gamma_at_chart(&u);
            let dev = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (*x - *y).frobenius_norm().powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(dev);
        }
        Ok(worst)
    }
}

/// Grid in chart coordinates: lattice-coordinate grid on flat members,
/// a `(θ, φ)` grid away from the poles on the sphere.
fn chart_grid(manifold: &Manifold, points: usize) -> Vec<Vec<f64>> {
    match manifold.lattice() {
        Some(l) => {
            let n = l.dim();
            let side = (points as f64).powf(1.0 / n as f64).ceil().max(1.0) as i64;
            let mut k = vec![0i64; n];
            let mut out = Vec::new();
            loop {
                let f: Vec<f64> = k.iter().map(|&v| v as f64 / side as f64).collect();
                out.push(l.from_fractional(&f).to_vec());
                if !crate::geometry::odometer(&mut k, 0, side - 1) {
                    break;
                }
            }
            out
        }
        None => {
            let side = (points as f64).sqrt().ceil().max(1.0) as usize;
            let lo = SPHERE_POLE_MARGIN;
            let hi = PI - SPHERE_POLE_MARGIN;
            let mut out = Vec::with_capacity(side * side);
            for a in 0..side {
                for b in 0..side {
                    out.push(vec![
                        lo + (hi - lo) * (a as f64 + 0.5) / side as f64,
                        -PI + 2.0 * PI * b as f64 / side as f64,
                    ]);
                }
            }
            out
        }
    }
}

/// Orthonormal frame `(e_θ, e_φ)` at `y` for the spherical chart about `axis`.
pub fn sphere_frame(axis: usize, y: &[f64]) -> [[f64; 3]; 2] {
    let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
    let s = y[b].hypot(y[c]);
    let (cp, sp) = (y[b] / s, y[c] / s);
    let mut e_theta = [0.0; 3];
    let mut e_phi = [0.0; 3];
    e_theta[b] = y[axis] * cp;
    e_theta[c] = y[axis] * sp;
    e_theta[axis] = -s;
    e_phi[b] = -sp;
    e_phi[c] = cp;
    [e_theta, e_phi]
}

/// Chart axis farthest from the poles at `y`: the smallest `|y_k|`, ties to the lowest index.
pub fn preferred_axis(y: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if y[k].abs() < y[best].abs() {
            best = k;
        }
    }
    best
}

/// Chart axis whose poles stay farthest from the great circle with normal `n`.
pub fn segment_axis(n: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if n[k].abs() > n[best].abs() {
            best = k;
        }
    }
    best
}

/// Change of frame `E_to^T E_from` at `y`.
pub fn frame_transition(from: usize, to: usize, y: &[f64]) -> Mat {
    if from == to {
        return Mat::identity(2);
    }
    let ef = sphere_frame(from, y);
    let et = sphere_frame(to, y);
    let mut m = Mat::zeros(2);
    for i in 0..2 {
        for j in 0..2 {
            m.set(i, j, dot(&et[i], &ef[j]));
        }
    }
    m
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus() -> Manifold {
        Manifold::square_torus(2).unwrap()
    }

    #[test]
    fn flat_u1_on_circle_is_constant() {
        let m = Manifold::circle(1.0).unwrap();
        let c = MetricConnection::from_descriptor(
            &ConnectionDescriptor::FlatU1 {
                periods: vec![0.3],
                oscillation: None,
            },
            &m,
        )
        .unwrap();
        for x in [0.0, 0.4, 0.77] {
            let g = c.evaluate_gamma(&m, &m.point(&[x]).unwrap()).unwrap();
            let expect = Mat::complex_structure().scale(-2.0 * PI * 0.3);
            assert!((g[0] - expect).frobenius_norm() < 1e-15);
        }
    }

    #[test]
    fn sin_form_example_point() {
        let m = torus();
        let c = MetricConnection::from_descriptor(&ConnectionDescriptor::SinForm { amplitude: 1.0 }, &m)
            .unwrap();
        let g = c.evaluate_gamma(&m, &m.point(&[0.25, 0.6]).unwrap()).unwrap();
        assert_eq!(g[0].frobenius_norm(), 0.0);
        assert!((g[1] - Mat::complex_structure()).frobenius_norm() < 1e-15);
    }

    #[test]
    fn trivial_connection_is_zero() {
        let m = torus();
        let c = MetricConnection::trivial(3, &m).unwrap();
        let g = c.evaluate_gamma(&m, &m.point(&[0.1, 0.2]).unwrap()).unwrap();
        assert!(g.iter().all(|x| x.frobenius_norm() == 0.0));
    }

    #[test]
    fn period_angles() {
        let f = FlatU1Form::new(&[0.3]);
        assert!((f.holonomy_angle(&[1]) - 0.3).abs() < 1e-15);
        assert_eq!(f.holonomy_angle(&[0]), 0.0);
        let f = FlatU1Form::new(&[0.3, 0.5]);
        assert!((f.holonomy_angle(&[2, 1]) - 0.1).abs() < 1e-15);
        assert!((FlatU1Form::new(&[1.25]).periods()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sin_form_curvature_analytic_and_fd_agree() {
        let m = torus();
        let c = MetricConnection::from_descriptor(&ConnectionDescriptor::SinForm { amplitude: 1.0 }, &m)
            .unwrap();
        for x in [[0.1, 0.2], [0.37, 0.9], [0.5, 0.5]] {
            let p = m.point(&x).unwrap();
            let a = c.curvature(&m, &p).unwrap().component(0, 1);
            let expect = Mat::complex_structure().scale(2.0 * PI * (2.0 * PI * x[0]).cos());
            assert!((a - expect).frobenius_norm() < 1e-12);
            let fd = c.curvature_finite_difference(&m, &p).unwrap().component(0, 1);
            assert!((a - fd).frobenius_norm() < 1e-7);
        }
    }

    #[test]
    fn flat_curvature_is_exactly_zero() {
        let m = torus();
        let c = MetricConnection::from_descriptor(
            &ConnectionDescriptor::FlatU1 {
                periods: vec![0.3, 0.45],
                oscillation: Some(OscillationDescriptor {
                    wavevector: vec![1, 2],
                    amplitude: 0.1,
                }),
            },
            &m,
        )
        .unwrap();
        let f = c.curvature(&m, &m.point(&[0.3, 0.8]).unwrap()).unwrap();
        assert_eq!(f.max_norm(), 0.0);
    }

    #[test]
    fn levi_civita_curvature_is_area_form() {
        let s = Manifold::sphere();
        let c = MetricConnection::from_descriptor(&ConnectionDescriptor::LeviCivita, &s).unwrap();
        let p = s.point(&[0.6, 0.0, 0.8]).unwrap();
        let a = c.curvature(&s, &p).unwrap().component(0, 1);
        let fd = c.curvature_finite_difference(&s, &p).unwrap().component(0, 1);
        assert!((a - fd).frobenius_norm() < 1e-7);
        // F_θφ = -sin θ J, i.e. Gauss curvature 1 on the orthonormal frame
        let sin_theta = 0.6;
        assert!((a - Mat::complex_structure().scale(-sin_theta)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn sphere_chart_refuses_poles() {
        let s = Manifold::sphere();
        let c = MetricConnection::from_descriptor(&ConnectionDescriptor::LeviCivita, &s).unwrap();
        let p = s.point(&[0.0, 0.1f64.sin(), 0.1f64.cos()]).unwrap();
        assert!(matches!(c.evaluate_gamma(&s, &p), Err(Error::ChartUndefined { .. })));
    }

    #[test]
    fn constant_rejects_non_skew() {
        let m = Manifold::circle(1.0).unwrap();
        let d = ConnectionDescriptor::Constant {
            matrices: vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
        };
        assert!(MetricConnection::from_descriptor(&d, &m).is_err());
    }

    #[test]
    fn sphere_frames_are_orthonormal_and_transitions_orthogonal() {
        let y = [0.48, 0.6, 0.64];
        for k in 0..3 {
            let [a, b] = sphere_frame(k, &y);
            assert!((dot(&a, &a) - 1.0).abs() < 1e-15 && (dot(&b, &b) - 1.0).abs() < 1e-15);
            assert!(dot(&a, &b).abs() < 1e-15 && dot(&a, &y).abs() < 1e-15);
            for l in 0..3 {
                let t = frame_transition(k, l, &y);
                assert!(t.orthogonality_defect() < 1e-14);
                assert!((t.determinant() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn descriptors_round_trip_through_json() {
        let json = r#"{"type":"family","base":{"type":"trivial"},"delta":{"type":"flat_u1","periods":[0.7]},"schedule":[1.0,0.5]}"#;
        let d: ConnectionDescriptor = serde_json::from_str(json).unwrap();
        let back: ConnectionDescriptor = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(d, back);
        let m = Manifold::circle(1.0).unwrap();
        let fam = ConnectionFamily::from_descriptor(&d, &m).unwrap();
        let half = fam.member(0.5);
        assert!((half.flat_u1().unwrap().periods()[0] - 0.35).abs() < 1e-15);
    }
}

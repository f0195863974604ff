//! Parallel transport of orthonormal frames and loop holonomy.
//!
//! A frame `Q` solves `Q' = -Γ⟨γ'⟩ Q` along each segment; segment maps compose
//! new ∘ old, so `hol(γ₁·γ₂) = hol(γ₂) hol(γ₁)`.
//!
//! On the sphere a frame at a point is expressed in the spherical chart whose
//! axis is least aligned with that point. Each segment is integrated in the
//! chart whose poles are farthest from its great circle.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bridge::{winding_class, LoopVertices, PiecewiseGeodesicLoop};
use crate::connections::{frame_transition, preferred_axis, segment_axis, MetricConnection};
use crate::error::{Error, Result};
use crate::geometry::{GeodesicSegment, Manifold};
use crate::linalg::Mat;
use crate::numeric::integrate_gl16;

/// Per-segment Runge-Kutta resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Steps {
    /// `max(min_steps, ceil(len / max_h), ceil(len · ‖Γ‖ / max_phase))`.
    Rule {
        min_steps: usize,
        max_h: f64,
        max_phase: f64,
    },
    Fixed(usize),
}

impl Steps {
    pub const DEFAULT: Steps = Steps::Rule {
        min_steps: 8,
        max_h: 0.01,
        max_phase: 0.004,
    };

    /// Finer rule used by the Stokes comparison.
    pub const STOKES: Steps = Steps::Rule {
        min_steps: 8,
        max_h: 0.01,
        max_phase: 5e-4,
    };

    pub fn fixed_or_default(fixed: Option<usize>) -> Steps {
        fixed.map_or(Steps::DEFAULT, Steps::Fixed)
    }

    pub fn count(&self, length: f64, bound: f64) -> usize {
        match *self {
            Steps::Fixed(n) => n.max(1),
            Steps::Rule {
                min_steps,
                max_h,
                max_phase,
            } => min_steps
                .max((length / max_h).ceil() as usize)
                .max((length * bound / max_phase).ceil() as usize),
        }
    }
}

/// Orthogonal matrix `//₁(γ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolonomyElement {
    matrix: Mat,
}

/// Commutation defect with `J` tolerated by the U(1) view.
pub const U1_VIEW_TOL: f64 = 1e-9;

impl HolonomyElement {
    pub fn new(matrix: Mat) -> Self {
        Self { matrix }
    }

    pub fn identity(rank: usize) -> Self {
        Self::new(Mat::identity(rank))
    }

    /// Rotation by `2π · turns`.
    pub fn from_turns(turns: f64) -> Self {
        Self::new(Mat::rotation(2.0 * PI * turns))
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.matrix.rank()
    }

    pub fn orthogonality_defect(&self) -> f64 {
        self.matrix.orthogonality_defect()
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.matrix.transpose())
    }

    /// Angle in turns `[0, 1)` when the element is a rotation of the plane commuting with `J`.
    pub fn u1_angle(&self) -> Option<f64> {
        if self.rank() != 2 || self.determinant() <= 0.0 {
            return None;
        }
        let j = Mat::complex_structure();
        if (j * self.matrix - self.matrix * j).frobenius_norm() >= U1_VIEW_TOL {
            return None;
        }
        let a = self.matrix.get(1, 0).atan2(self.matrix.get(0, 0));
        Some(crate::connections::reduce_unit(a / (2.0 * PI)))
    }
}

/// RK4 for `Q' = -G(t) Q` on `[0, 1]`, then polar projection.
fn rk4<F: FnMut(f64) -> Mat>(q: Mat, steps: usize, mut gamma: F) -> Mat {
    let h = 1.0 / steps as f64;
    let mut q = q;
    let mut g0 = gamma(0.0);
    for k in 0..steps {
        let t = k as f64 * h;
        let gm = gamma(t + 0.5 * h);
        let g1 = gamma(t + h);
        let k1 = -(g0 * q);
        let k2 = -(gm * q.add_scaled(0.5 * h, &k1));
        let k3 = -(gm * q.add_scaled(0.5 * h, &k2));
        let k4 = -(g1 * q.add_scaled(h, &k3));
        q = q
            .add_scaled(h / 6.0, &k1)
            .add_scaled(h / 3.0, &k2)
            .add_scaled(h / 3.0, &k3)
            .add_scaled(h / 6.0, &k4);
        g0 = g1;
    }
    q.polar()
}

/// One RK4 step for constant `G`: the degree-4 Taylor polynomial of `exp(-hG)`.
fn rk4_constant(q: Mat, steps: usize, g: &Mat) -> Mat {
    let h = 1.0 / steps as f64;
    let a = g.scale(-h);
    let a2 = a * a;
    let a3 = a2 * a;
    let a4 = a3 * a;
    let step = Mat::identity(g.rank())
        .add_scaled(1.0, &a)
        .add_scaled(0.5, &a2)
        .add_scaled(1.0 / 6.0, &a3)
        .add_scaled(1.0 / 24.0, &a4);
    let mut q = q;
    for _ in 0..steps {
        q = step * q;
    }
    q.polar()
}

/// Transports `q` along a flat segment (frames in the global trivialization).
fn transport_flat(conn: &MetricConnection, seg: &GeodesicSegment, q: Mat, steps: usize) -> Mat {
    let n = seg.ambient_dim();
    let v = seg.initial_velocity();
    if conn.has_constant_coefficients() {
        let g = conn.contract_flat(&vec![0.0; n], &v);
        return rk4_constant(q, steps, &g);
    }
    let mut x = [0.0; 8];
    rk4(q, steps, |t| {
        seg.point_into(t, &mut x[..n]);
        conn.contract_flat(&x[..n], &v)
    })
}

/// Transports a frame given in the preferred chart at the segment start to the
/// preferred chart at its end.
fn transport_sphere(conn: &MetricConnection, seg: &GeodesicSegment, q: Mat, steps: usize) -> Mat {
    let from = preferred_axis(seg.start().coords());
    let to = preferred_axis(seg.end().coords());
    let Some(normal) = seg.great_circle_normal() else {
        return frame_transition(from, to, seg.start().coords()) * q;
    };
    let axis = segment_axis(&normal);
    let q = frame_transition(from, axis, seg.start().coords()) * q;
    let mut y = [0.0; 3];
    let mut v = [0.0; 3];
    let q = rk4(q, steps, |t| {
        seg.point_into(t, &mut y);
        seg.velocity_into(t, &mut v);
        conn.contract_sphere(axis, &y, &v)
    });
    (frame_transition(axis, to, seg.end().coords()) * q).polar()
}

/// RK4 transport of the frame `q` along one geodesic segment.
pub fn transport_segment(
    manifold: &Manifold,
    conn: &MetricConnection,
    seg: &GeodesicSegment,
    q: Mat,
    steps: usize,
) -> Result<Mat> {
    if q.rank() != conn.rank() {
        return Err(Error::DimensionMismatch(format!(
            "frame rank {} vs connection rank {}",
            q.rank(),
            conn.rank()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("steps per segment must be >= 1".into()));
    }
    Ok(if manifold.is_flat() {
        transport_flat(conn, seg, q, steps)
    } else {
        transport_sphere(conn, seg, q, steps)
    })
}

/// `//₁` along a loop by composing segment transports from the identity frame.
pub fn holonomy(
    manifold: &Manifold,
    conn: &MetricConnection,
    lp: &PiecewiseGeodesicLoop,
    steps: Steps,
) -> Result<HolonomyElement> {
    let rank = conn.rank();
    if conn.is_trivial() {
        return Ok(HolonomyElement::identity(rank));
    }
    let bound = conn.coefficient_bound();
    let mut q = Mat::identity(rank);
    for seg in lp.segments() {
        if seg.length() == 0.0 && manifold.is_flat() {
            continue;
        }
        q = transport_segment(manifold, conn, seg, q, steps.count(seg.length(), bound))?;
    }
    Ok(HolonomyElement::new(q))
}

/// Closed-form U(1) holonomy `exp(-∫_γ α J)` on flat manifolds.
pub fn holonomy_u1_exact(conn: &MetricConnection, lp: &PiecewiseGeodesicLoop) -> Result<HolonomyElement> {
    let mut total = crate::numeric::CompensatedSum::new();
    for seg in lp.segments() {
        total.add(conn.u1_line_integral(seg)?);
    }
    Ok(HolonomyElement::new(Mat::rotation(-total.value())))
}

#[derive(Clone, Copy, Debug)]
pub struct StokesReport {
    /// `‖hol(γ) - exp(-∬F)‖_F`.
    pub residual: f64,
    pub holonomy: HolonomyElement,
    /// `∬_D f` for `F = f J dx¹∧dx²`.
    pub flux: f64,
}

/// Compares loop holonomy with `exp(-∬_D F)` over the cone from the base point
/// in the universal cover.
pub fn stokes_check(
    manifold: &Manifold,
    conn: &MetricConnection,
    lp: &PiecewiseGeodesicLoop,
    steps: Steps,
) -> Result<StokesReport> {
    let nu = winding_class(manifold, lp)?;
    if !nu.is_zero() {
        return Err(Error::NotContractible { winding: nu.0 });
    }
    let dim = manifold.dim();
    if !manifold.is_flat() || dim > 2 {
        return Err(Error::InvalidManifold("stokes check needs a circle or 2-torus".into()));
    }
    let hol = holonomy(manifold, conn, lp, steps)?;
    let mut flux = crate::numeric::CompensatedSum::new();
    if dim == 2 {
        let b = lp.base().coords();
        let mut p = [b[0], b[1]];
        for seg in lp.segments() {
            let d = seg.displacement().expect("flat");
            let e = [p[0] - b[0], p[1] - b[1]];
            let jac = e[0] * d[1] - e[1] * d[0];
            if jac != 0.0 {
                let size = (e[0].hypot(e[1])).max((e[0] + d[0]).hypot(e[1] + d[1]));
                let pieces = (size / 0.25).ceil().max(1.0) as usize;
                let mut err = None;
                let inner = |tau: f64, err: &mut Option<Error>| {
                    integrate_gl16(0.0, 1.0, pieces, |r| {
                        let x = [b[0] + r * (e[0] + tau * d[0]), b[1] + r * (e[1] + tau * d[1])];
                        match conn.u1_curvature_density(&x) {
                            Ok(f) => f * r,
                            Err(er) => {
                                *err = Some(er);
                                0.0
                            }
                        }
                    })
                };
                let v = integrate_gl16(0.0, 1.0, pieces, |tau| inner(tau, &mut err));
                if let Some(er) = err {
                    return Err(er);
                }
                flux.add(jac * v);
            }
            p = [p[0] + d[0], p[1] + d[1]];
        }
    }
    let flux = flux.value();
    let expected = Mat::rotation(-flux);
    Ok(StokesReport {
        residual: (*hol.matrix() - expected).frobenius_norm(),
        holonomy: hol,
        flux,
    })
}

/// Coefficient `c` of the correction term `c Σ Γ_i Γ_i A ds` as printed.
pub const ITO_LITERAL: f64 = 2.0;
/// The Stratonovich-to-Itô correction for quadratic variation `2 ds`.
pub const ITO_CONVENTIONAL: f64 = -1.0;

/// Euler-Maruyama transport along the bridge refined to `substeps` points per
/// partition interval, using `dA + 2 Σ Γ_i Γ_i A ds + Σ Γ_i A dX^i = 0`.
pub fn transport_ito_euler<R: Rng + ?Sized>(
    manifold: &Manifold,
    conn: &MetricConnection,
    v: &LoopVertices,
    substeps: usize,
    rng: &mut R,
) -> Result<HolonomyElement> {
    transport_ito_euler_with(manifold, conn, v, substeps, ITO_LITERAL, rng)
}

/// [`transport_ito_euler`] with `dA + c Σ Γ_i Γ_i A ds + Σ Γ_i A dX^i = 0`.
pub fn transport_ito_euler_with<R: Rng + ?Sized>(
    manifold: &Manifold,
    conn: &MetricConnection,
    v: &LoopVertices,
    substeps: usize,
    correction: f64,
    rng: &mut R,
) -> Result<HolonomyElement> {
    let lattice = manifold
        .lattice()
        .ok_or_else(|| Error::InvalidManifold("the Itô scheme runs on flat manifolds only".into()))?;
    if substeps == 0 {
        return Err(Error::InvalidConfig("substeps must be >= 1".into()));
    }
    let rank = conn.rank();
    if conn.is_trivial() {
        return Ok(HolonomyElement::identity(rank));
    }
    let n = lattice.dim();
    let m = v.m();
    let pts = v.closed_points();
    let increments: Vec<Vec<f64>> = match v.increments() {
        Some(inc) => inc.iter().map(|d| d.to_vec()).collect(),
        None => pts
            .windows(2)
            .map(|w| manifold.flat_displacement(w[0], w[1]).expect("flat").to_vec())
            .collect(),
    };
    let ds = 1.0 / (m * substeps) as f64;
    let mut x: Vec<f64> = v.base().coords().to_vec();
    let mut a = Mat::identity(rank);
    let mut unit = vec![0.0; n];
    for inc in &increments {
        // Gaussian bridge from x to x + inc over one partition interval
        let target: Vec<f64> = x.iter().zip(inc).map(|(p, d)| p + d).collect();
        for j in 0..substeps {
            let remaining = (substeps - j) as f64;
            let sd = (2.0 * ds * (remaining - 1.0) / remaining).sqrt();
            let next: Vec<f64> = (0..n)
                .map(|k| {
                    let z: f64 = rng.sample(StandardNormal);
                    x[k] + (target[k] - x[k]) / remaining + sd * z
                })
                .collect();
            let dx: Vec<f64> = next.iter().zip(&x).map(|(p, q)| p - q).collect();
            let mut drift = Mat::zeros(rank);
            for i in 0..n {
                unit.iter_mut().for_each(|u| *u = 0.0);
                unit[i] = 1.0;
                let gi = conn.contract_flat(&x, &unit);
                drift = drift + gi * gi;
            }
            let g = conn.contract_flat(&x, &dx);
            a = a - g * a - (drift * a).scale(correction * ds);
            x = next;
        }
    }
    Ok(HolonomyElement::new(a.polar()))
}

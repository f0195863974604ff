use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{Admissibility, SamplerKind};
use crate::connections::ConnectionDescriptor;
use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldDescriptor, ManifoldPoint};
use crate::transport::Steps;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    /// Projected RK4 along each geodesic segment.
    #[default]
    Ode,
    /// Closed-form line integrals (flat manifolds, U(1) connections).
    ExactU1,
    /// Euler-Maruyama on the refined bridge.
    Ito,
}

/// Closed subgroup tested by `subgroup`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubgroupDescriptor {
    /// `q`-th roots of unity in U(1) = SO(2).
    Roots { order: u32 },
    Trivial,
    /// Orientation-preserving part of O(r).
    So,
    /// Rotations commuting with the complex structure (rank 2).
    U1,
}

fn default_sampler() -> SamplerKind {
    SamplerKind::Exact
}
fn default_ito_substeps() -> usize {
    16
}
fn default_ito_correction() -> f64 {
    crate::transport::ITO_LITERAL
}
fn default_max_attempts() -> u64 {
    1000
}
fn default_workers() -> usize {
    1
}
fn default_bootstrap() -> usize {
    200
}
fn default_bins() -> usize {
    100
}
fn default_eps() -> Vec<f64> {
    vec![0.05, 0.1]
}
fn default_merge_tol() -> f64 {
    0.01
}
fn default_tail() -> f64 {
    1e-12
}
fn default_resolution() -> f64 {
    0.01
}
fn default_enumerate() -> i64 {
    100
}
fn default_permutations() -> usize {
    200
}

/// One experiment. Every field except the manifold, connection, `m`, `samples`
/// and `seed` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: ManifoldDescriptor,
    /// A connection, or a `family` descriptor for `family`, `jump`, `subgroup` and `bs-detect`.
    pub connection: ConnectionDescriptor,
    #[serde(default)]
    pub base_point: Option<Vec<f64>>,
    /// Partition sizes, powers of two.
    pub m: Vec<usize>,
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub transport: TransportKind,
    /// Fixed RK4 steps per segment; the adaptive rule when absent.
    #[serde(default)]
    pub steps_per_segment: Option<usize>,
    #[serde(default = "default_ito_substeps")]
    pub ito_substeps: usize,
    /// Coefficient of the `Σ Γ_i Γ_i A ds` term in the Itô scheme.
    #[serde(default = "default_ito_correction")]
    pub ito_correction: f64,
    #[serde(default)]
    pub admissibility: Admissibility,
    /// Draws per loop before `enforce` gives up.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_bins")]
    pub hist_bins: usize,
    /// Arc half-widths in turns.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Clustering and subgroup neighbourhood radius (arc length or Frobenius).
    #[serde(default = "default_merge_tol")]
    pub merge_tol: f64,
    /// Verdict threshold; each subcommand has its own default.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub subgroup: Option<SubgroupDescriptor>,
    /// Partition size of the empirical reference in `refine` when no analytic measure exists.
    #[serde(default)]
    pub reference_m: Option<usize>,
    #[serde(default = "default_tail")]
    pub analytic_tail: f64,
    /// Angle resolution of the densification track in `jump`, in turns.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    /// Largest |ν| enumerated by the densification track.
    #[serde(default = "default_enumerate")]
    pub enumerate: i64,
    /// Permutations of the two-sample test in `dist` when `compare_seed` is set.
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default)]
    pub compare_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::InvalidConfig("no seed given: set \"seed\" in the config or pass --seed".into())
        })
    }

    pub fn steps(&self) -> Steps {
        Steps::fixed_or_default(self.steps_per_segment)
    }

    pub fn manifold(&self) -> Result<Manifold> {
        Manifold::from_descriptor(&self.manifold)
    }

    pub fn base_point(&self, manifold: &Manifold) -> Result<ManifoldPoint> {
        match &self.base_point {
            Some(c) => manifold.point(c),
            None => Ok(manifold.default_base_point()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m.is_empty() {
            return bad("m schedule is empty".into());
        }
        for &m in self.m.iter().chain(self.reference_m.iter()) {
            if m < 2 || !m.is_power_of_two() {
                return bad(format!("m = {m} is not a power of two >= 2"));
            }
        }
        if self.samples == 0 {
            return bad("samples must be >= 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        if self.steps_per_segment == Some(0) || self.ito_substeps == 0 {
            return bad("step counts must be >= 1".into());
        }
        if !self.ito_correction.is_finite() {
            return bad("ito_correction must be finite".into());
        }
        if self.bootstrap == 0 || self.hist_bins == 0 {
            return bad("bootstrap and hist_bins must be >= 1".into());
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
            return bad(format!("eps = {e} outside (0, 1/2)"));
        }
        if !(self.merge_tol > 0.0) || !(self.resolution > 0.0) {
            return bad("merge_tol and resolution must be positive".into());
        }
        if !(self.analytic_tail > 0.0 && self.analytic_tail <= 1e-6) {
            return bad(format!("analytic_tail = {} outside (0, 1e-6]", self.analytic_tail));
        }
        let manifold = self.manifold()?;
        self.base_point(&manifold)?;
        if self.admissibility == Admissibility::Lift && manifold.lattice().is_none() {
            return bad("admissibility \"lift\" needs a circle or flat torus".into());
        }
        if self.sampler == SamplerKind::Exact && manifold.lattice().is_none() {
            return bad("the exact sampler needs a circle or flat torus; use \"is\"".into());
        }
        if matches!(self.transport, TransportKind::ExactU1 | TransportKind::Ito) && !manifold.is_flat() {
            return bad("exact_u1 and ito transport run on flat manifolds only".into());
        }
        if let ConnectionDescriptor::Family { schedule, .. } = &self.connection {
            if schedule.is_empty() {
                return bad("family schedule is empty".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `out` and `workers`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = 1;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "manifold": {"kind": "circle", "circumference": 1.0},
        "connection": {"type": "flat_u1", "periods": [0.3]},
        "m": [64], "samples": 10, "seed": 7
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.sampler, SamplerKind::Exact);
        assert_eq!(c.bootstrap, 200);
        assert_eq!(c.eps, vec![0.05, 0.1]);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.seed = None;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn non_dyadic_m_is_rejected() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.m = vec![48];
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        b.workers = 8;
        assert_eq!(a.hash(), b.hash());
        b.seed = Some(8);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_fields_fail() {
        let text = MINIMAL.replace("\"samples\"", "\"sample\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}

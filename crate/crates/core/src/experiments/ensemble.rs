//! Loop ensembles drawn index by index from independent substreams.

use rayon::prelude::*;

use crate::bridge::{
    build_lifted_loop, build_loop, is_admissible, Admissibility, BridgeSampler, LoopVertices, PiecewiseGeodesicLoop,
    RejectionCounter, SamplerKind,
};
use crate::connections::MetricConnection;
use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldPoint};
use crate::rng::{stream, ITO, SAMPLING};
use crate::transport::{holonomy, holonomy_u1_exact, transport_ito_euler_with, HolonomyElement, Steps};

use super::config::TransportKind;

/// Everything needed to regenerate loop `i` of an ensemble.
pub struct Ensemble<'a> {
    pub manifold: &'a Manifold,
    pub sampler: BridgeSampler<'a>,
    pub seed: u64,
    pub samples: usize,
    pub admissibility: Admissibility,
    pub max_attempts: u64,
    pub workers: usize,
}

pub struct DrawnLoop {
    pub vertices: LoopVertices,
    pub path: PiecewiseGeodesicLoop,
    pub attempts: u64,
    pub admissible: bool,
}

impl<'a> Ensemble<'a> {
    pub fn new(
        manifold: &'a Manifold,
        base: ManifoldPoint,
        m: usize,
        kind: SamplerKind,
        seed: u64,
        samples: usize,
    ) -> Result<Self> {
        Ok(Self {
            manifold,
            sampler: BridgeSampler::new(manifold, base, m, kind)?,
            seed,
            samples,
            admissibility: Admissibility::Enforce,
            max_attempts: 1000,
            workers: 1,
        })
    }

    pub fn m(&self) -> usize {
        self.sampler.m()
    }

    /// Loop `index`: redrawn from its own stream until admissible under `enforce`,
    /// the first draw under `lift`.
    pub fn draw(&self, index: usize) -> Result<DrawnLoop> {
        let mut rng = stream(self.seed, SAMPLING, index as u64);
        let mut attempts: u64 = 0;
        loop {
            let v = self.sampler.sample(&mut rng)?;
            attempts += 1;
            let admissible = is_admissible(self.manifold, &v);
            match self.admissibility {
                Admissibility::Lift => {
                    let path = build_lifted_loop(self.manifold, &v)?;
                    return Ok(DrawnLoop {
                        vertices: v,
                        path,
                        attempts: attempts,
                        admissible,
                    });
                }
                Admissibility::Enforce if admissible => {
                    let path = build_loop(self.manifold, &v)?;
                    return Ok(DrawnLoop {
                        vertices: v,
                        path,
                        attempts: attempts,
                        admissible,
                    });
                }
                Admissibility::Enforce if attempts >= self.max_attempts => {
                    return Err(Error::AdmissibilityExhausted {
                        index,
                        attempts: attempts as usize,
                        m: self.m(),
                    })
                }
                Admissibility::Enforce => {}
            }
        }
    }

    /// `f` over every loop, results in index order regardless of worker count.
    pub fn map<T, F>(&self, f: F) -> Result<(Vec<T>, RejectionCounter)>
    where
        T: Send,
        F: Fn(usize, &DrawnLoop) -> Result<T> + Sync,
    {
        let run = || {
            (0..self.samples)
                .into_par_iter()
                .map(|i| {
                    let d = self.draw(i)?;
                    let value = f(i, &d)?;
                    let rejected = if d.admissible { d.attempts - 1 } else { d.attempts };
                    Ok((value, d.attempts, rejected))
                })
                .collect::<Result<Vec<_>>>()
        };
        let rows = if self.workers == rayon::current_num_threads() {
            run()?
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
                .install(run)?
        };
        let mut counter = RejectionCounter::default();
        let mut out = Vec::with_capacity(rows.len());
        for (value, attempts, rejected) in rows {
            counter.attempted += attempts;
            counter.rejected += rejected;
            counter.accepted += attempts - rejected;
            out.push(value);
        }
        Ok((out, counter))
    }
}

/// Holonomy of a drawn loop under the chosen transport.
pub fn loop_holonomy(
    manifold: &Manifold,
    conn: &MetricConnection,
    d: &DrawnLoop,
    transport: TransportKind,
    steps: Steps,
    ito: (u64, usize, usize, f64),
) -> Result<HolonomyElement> {
    match transport {
        TransportKind::Ode => holonomy(manifold, conn, &d.path, steps),
        TransportKind::ExactU1 => {
            if !conn.is_u1() {
                return Err(Error::NotU1("exact_u1 transport needs a U(1) connection".into()));
            }
            holonomy_u1_exact(conn, &d.path)
        }
        TransportKind::Ito => {
            let (seed, index, substeps, correction) = ito;
            let mut rng = stream(seed, ITO, index as u64);
            transport_ito_euler_with(manifold, conn, &d.vertices, substeps, correction, &mut rng)
        }
    }
}

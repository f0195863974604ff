//! Probability measures on holonomy groups induced by Brownian loops.

pub mod bridge;
pub mod connections;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod measures;
pub mod numeric;
pub mod output;
pub mod rng;
pub mod transport;

pub use bridge::{
    Admissibility, BridgeSampler, LoopVertices, PiecewiseGeodesicLoop, RejectionCounter, SamplerKind,
    WindingClass,
};
pub use connections::{ConnectionDescriptor, ConnectionFamily, FlatU1Form, MetricConnection};
pub use error::{Error, Result};
pub use experiments::{ExperimentConfig, ExperimentReport, Verdict};
pub use geometry::{GeodesicSegment, Lattice, Manifold, ManifoldDescriptor, ManifoldKind, ManifoldPoint};
pub use linalg::Mat;
pub use measures::{HolonomyMeasure, MeasureKind, MeasureMeta};
pub use transport::{HolonomyElement, Steps};

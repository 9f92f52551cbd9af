//! Crate-wide error type. One enum keeps cross-module error plumbing simple
//! while variants stay specific enough for callers to react (retry with a
//! wider halo, enlarge a support, abort the run with context).

use crate::store::ParticleId;
use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate particle id {0}")]
    DuplicateId(ParticleId),

    #[error("unknown particle id {0}")]
    UnknownId(ParticleId),

    #[error("support domain is empty")]
    EmptySupport,

    #[error(
        "shape solve did not converge: residual {residual:.3e} after {iterations} iterations \
         (tolerance {tolerance:.3e})"
    )]
    ShapeNonConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    #[error("degenerate support geometry: shape constraint system is singular")]
    DegenerateSupport,

    #[error("query radius {radius:.6e} exceeds grid cell size {cell_size:.6e}")]
    RadiusExceedsCell { radius: f64, cell_size: f64 },

    #[error(
        "support of material point {id} still unsatisfied after {attempts} radius enlargements \
         (last radius {radius:.6e}): {detail}"
    )]
    SupportUnsatisfiable {
        id: ParticleId,
        attempts: u32,
        radius: f64,
        detail: String,
    },

    #[error("halo width still insufficient after {attempts} widening rounds (width {width:.6e})")]
    HaloWidthExhausted { attempts: u32, width: f64 },

    #[error("support node {node} of material point {point} is not resident (owned or halo)")]
    MissingNeighbor { point: ParticleId, node: ParticleId },

    #[error(
        "material point {id}: incremental deformation gradient has non-positive determinant \
         {det:.6e}"
    )]
    Inverted { id: ParticleId, det: f64 },

    #[error("elastic state lost positive definiteness (principal value {eigenvalue:.6e})")]
    NonSpdState { eigenvalue: f64 },

    #[error("plastic return did not converge: {0}")]
    PlasticReturn(String),

    #[error("material point {id}: {source}")]
    Constitutive {
        id: ParticleId,
        #[source]
        source: Box<Error>,
    },

    #[error("step {step} rank {rank} phase '{phase}': {source}")]
    Step {
        step: u64,
        rank: usize,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("transport protocol violation: {0}")]
    Protocol(String),

    #[error("record decode failed at byte {offset}: {detail}")]
    Decode { offset: usize, detail: String },

    #[error("mesh parse error at line {line}: {detail}")]
    MeshParse { line: usize, detail: String },

    #[error("degenerate element {element}: volume {volume:.6e} <= 0")]
    DegenerateElement { element: u64, volume: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("metrics input has no single-worker baseline run")]
    MissingBaseline,

    #[error("worker {rank} failed: {detail}")]
    Worker { rank: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps a phase error with its step/rank/phase context.
    pub fn in_step(self, step: u64, rank: usize, phase: &'static str) -> Error {
        Error::Step {
            step,
            rank,
            phase,
            source: Box::new(self),
        }
    }

    /// Wraps a constitutive error with the offending material point id.
    pub fn at_point(self, id: ParticleId) -> Error {
        Error::Constitutive {
            id,
            source: Box::new(self),
        }
    }
}

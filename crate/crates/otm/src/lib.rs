//! Distributed-memory Optimal Transportation Meshfree (OTM) solver for
//! explicit large-deformation solid dynamics.
//!
//! The solver advances two particle families: *nodes* carry the kinematic
//! unknowns (displacement increments, lumped mass) and *material points*
//! carry the integration data (mass, volume, deformation gradient, stress,
//! material state). Each time step assembles lumped masses and residuals
//! from material points onto their support nodes, updates nodes with an
//! explicit central-difference rule, convects material points through the
//! updated max-entropy interpolation, and runs the constitutive update.
//!
//! Domain decomposition is geometric (recursive coordinate bisection over
//! the pooled particle cloud). Each worker owns one subdomain and sees
//! neighbor data only through read-only halo copies refreshed every step
//! over an abstract message-passing [`transport`]. All reductions iterate
//! in ascending particle-id order and halo payloads are bit-exact, so a
//! run's particle trajectories are bitwise independent of the worker count.
//!
//! Module map:
//! - [`store`]: keyed particle storage with deterministic iteration.
//! - [`lme`]: local maximum-entropy shape functions and gradients.
//! - [`search`]: linked-cell grid, radius queries, support construction.
//! - [`material`]: J2 finite plasticity and Johnson-Cook flow/fracture.
//! - [`contact`]: rigid-wall projection and penalty tool contact.
//! - [`partition`]: RCB plans, imbalance metric, migration.
//! - [`transport`]: message-passing contract + in-process backend.
//! - [`wire`]: bit-exact particle record serialization.
//! - [`halo`]: bounding boxes, neighbor detection, halo construction.
//! - [`step`]: the per-subdomain explicit OTM step (phase pipeline).
//! - [`mesh`], [`deck`], [`synth`]: problem ingestion and generation.
//! - [`runner`]: worker lifecycle for multi-worker in-process runs.
//! - [`vtk`], [`timing`], [`metrics`]: outputs and scaling tables.

pub mod contact;
pub mod deck;
pub mod error;
pub mod halo;
pub mod lme;
pub mod material;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod partition;
pub mod runner;
pub mod search;
pub mod step;
pub mod store;
pub mod synth;
pub mod timing;
pub mod transport;
pub mod vtk;
pub mod wire;

pub use error::{Error, Result};
pub use math::{Mat3, Real, Vec3};
pub use store::ParticleId;

//! Numerical toolkit for first-order integro-differential inclusions and
//! perturbed state-dependent sweeping processes.
//!
//! The crate is organized around a small set of value types (time grids,
//! piecewise-linear trajectories, growth envelopes, constraint-set geometry)
//! and pure operations on them:
//!
//! * [`grid`] / [`problem`]: grids, trajectories, growth envelopes and
//!   history-integral quadrature;
//! * [`bounds`]: Gronwall engine and a-priori state/velocity envelopes,
//!   including the coupled `(m, r)` system used by sweeping processes;
//! * [`sets`]: distances, nearest-point projections, distance subgradients
//!   and moving constraint-set families;
//! * [`galerkin`]: orthonormal projectors, radial truncation and a
//!   noncompactness profile estimator;
//! * [`solver`]: Euler stepping with least-norm selection, the dimension
//!   cascade, catching-up and reduced schemes, and convergence diagnostics;
//! * [`control`]: direct transcription of the optimal control problem;
//! * [`scenario`] / [`runner`]: the declarative front end used by the
//!   `inclusol` binary.
//!
//! All types are immutable after construction and safe to share across
//! threads; independent solves run concurrently where it pays off.

pub mod bounds;
pub mod columns;
pub mod control;
pub mod error;
pub mod expr;
pub mod galerkin;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sets;
pub mod solver;

pub use crate::error::{Error, Result};

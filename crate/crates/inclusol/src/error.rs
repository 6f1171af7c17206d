//! Error type shared by all modules.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone)]
pub enum Error {
    /// Grid construction with zero steps or a nonpositive horizon.
    EmptyGrid(String),
    /// A time argument fell outside `[0, T]`.
    TimeOutOfRange {
        t: f64,
        horizon: f64,
    },
    /// Two tables or trajectories live on different grids.
    GridMismatch(String),
    /// Vector dimensions disagree.
    DimensionMismatch {
        expected: usize,
        got: usize,
    },
    /// `exp_factor` called with `t1 > t2`.
    ReversedInterval {
        t1: f64,
        t2: f64,
    },
    /// Negative initial value where a nonnegative one is required.
    NegativeInitial(f64),
    /// Negative radius passed to a radial operation.
    NegativeRadius(f64),
    /// The far-parameter condition `alpha^2 > L` fails.
    AlphaFarViolated {
        alpha: f64,
        lipschitz: f64,
    },
    /// Picard iteration for the coupled `(m, r)` system did not converge.
    PicardDiverged {
        residual: f64,
        iterations: usize,
    },
    /// A single grid step already violates the horizon-split budget.
    RhoTooSmallForGrid {
        step_integral: f64,
        budget: f64,
    },
    /// No sample fell inside the tube `0 < d(x, S) < rho`.
    EmptyTubeSample,
    /// Subgradient requested at an interior point.
    NoSubgradient,
    /// Empty point cloud passed to an estimator.
    EmptyCloud,
    /// Invalid Galerkin dimension list.
    InvalidDims(String),
    /// Refinement grids in a convergence study do not nest.
    MisalignedGrids(String),
    /// A computed quantity is NaN or infinite.
    NonFinite(String),
    /// Geometry or map variant cannot be handled by the requested operation.
    Unsupported(String),
    /// Scenario text could not be parsed.
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },
    /// Scenario parsed but violates a declared invariant.
    Validation {
        line: usize,
        msg: String,
    },
    /// Line search in the optimizer diverged.
    DivergentLineSearch {
        cost: f64,
    },
    /// Catching-up step left the constraint set beyond tolerance.
    ProjectionFailure {
        step: usize,
        distance: f64,
    },
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyGrid(msg) => write!(f, "empty grid: {msg}"),
            Error::TimeOutOfRange { t, horizon } => {
                write!(f, "time {t} outside [0, {horizon}]")
            }
            Error::GridMismatch(msg) => write!(f, "grid mismatch: {msg}"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::ReversedInterval { t1, t2 } => {
                write!(f, "reversed interval: t1 = {t1} > t2 = {t2}")
            }
            Error::NegativeInitial(v) => write!(f, "negative initial value {v}"),
            Error::NegativeRadius(r) => write!(f, "negative radius {r}"),
            Error::AlphaFarViolated { alpha, lipschitz } => {
                write!(f, "alpha^2 = {} must exceed L = {lipschitz}", alpha * alpha)
            }
            Error::PicardDiverged {
                residual,
                iterations,
            } => {
                write!(
                    f,
                    "Picard iteration stalled after {iterations} iterations, residual {residual:e}"
                )
            }
            Error::RhoTooSmallForGrid {
                step_integral,
                budget,
            } => {
                write!(f, "rho too small for grid: one step contributes {step_integral:e} against budget {budget:e}")
            }
            Error::EmptyTubeSample => write!(f, "empty tube sample"),
            Error::NoSubgradient => {
                write!(f, "no nonzero subgradient selected at an interior point")
            }
            Error::EmptyCloud => write!(f, "empty point cloud"),
            Error::InvalidDims(msg) => write!(f, "invalid dimension list: {msg}"),
            Error::MisalignedGrids(msg) => write!(f, "misaligned grids: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Parse { line, col, msg } => {
                write!(f, "parse error at line {line}, column {col}: {msg}")
            }
            Error::Validation { line, msg } => write!(f, "validation error at line {line}: {msg}"),
            Error::DivergentLineSearch { cost } => {
                write!(f, "divergent line search (best cost {cost:e})")
            }
            Error::ProjectionFailure { step, distance } => {
                write!(
                    f,
                    "projection failure at step {step}: residual distance {distance:e}"
                )
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

//! Time grids, piecewise-linear trajectories, and trapezoid quadrature.
//!
//! A [`Trajectory`] stores node states together with the per-segment
//! velocities; the stored data *is* the piecewise-linear absolutely
//! continuous representative, so `x[k+1] = x[k] + h[k] * v[k]` holds by
//! construction.

use crate::error::{Error, Result};
use crate::linalg;

/// Partition of `[0, T]` into `N` steps, `t[0] = 0 < t[1] < ... < t[N] = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with spacing `T / n`.
    pub fn uniform(horizon: f64, n: usize) -> Result<TimeGrid> {
        if n == 0 {
            return Err(Error::EmptyGrid("step count must be at least 1".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::EmptyGrid(format!(
                "horizon {horizon} must be positive"
            )));
        }
        let nodes = (0..=n).map(|i| horizon * (i as f64) / (n as f64)).collect();
        Ok(TimeGrid { nodes })
    }

    /// Grid from explicit nodes; must start at 0 and increase strictly.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<TimeGrid> {
        if nodes.len() < 2 {
            return Err(Error::EmptyGrid("need at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::EmptyGrid("first node must be 0".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::EmptyGrid("nodes must increase strictly".into()));
        }
        Ok(TimeGrid { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Number of steps `N` (one less than the number of nodes).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Spacing of step `k`, `t[k+1] - t[k]`.
    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Nominal uniform spacing `T / N`.
    pub fn mean_step(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }

    /// Index of the segment containing `t`, clamped to `[0, N-1]`.
    pub fn segment_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * (1.0 + self.horizon());
        if !t.is_finite() || t < -tol || t > self.horizon() + tol {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        let k = self.nodes.partition_point(|&n| n <= t);
        Ok(k.saturating_sub(1).min(self.steps() - 1))
    }

    /// True when the grid node at index `k` equals `t` exactly.
    pub fn is_node(&self, t: f64) -> Option<usize> {
        if !t.is_finite() {
            return None;
        }
        self.nodes
            .binary_search_by(|n| n.partial_cmp(&t).unwrap())
            .ok()
    }
}

/// Discrete absolutely continuous solution on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Validates lengths, equal dimensions and the consistency
    /// `x[k+1] = x[k] + h[k] v[k]` to machine precision.
    pub fn new(
        grid: TimeGrid,
        states: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
    ) -> Result<Trajectory> {
        if states.len() != grid.steps() + 1 || velocities.len() != grid.steps() {
            return Err(Error::GridMismatch(format!(
                "{} states and {} velocities against {} steps",
                states.len(),
                velocities.len(),
                grid.steps()
            )));
        }
        let dim = states[0].len();
        for s in states.iter().chain(velocities.iter()) {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
        }
        let scale = states
            .iter()
            .map(|s| linalg::norm(s))
            .fold(1.0_f64, f64::max);
        for k in 0..grid.steps() {
            let h = grid.step(k);
            let drift: f64 = (0..dim)
                .map(|i| (states[k + 1][i] - states[k][i] - h * velocities[k][i]).abs())
                .fold(0.0, f64::max);
            if drift > 1e-9 * scale {
                return Err(Error::GridMismatch(format!(
                    "trajectory inconsistent at step {k}: drift {drift:e}"
                )));
            }
        }
        Ok(Trajectory {
            grid,
            states,
            velocities,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    pub fn velocity(&self, k: usize) -> &[f64] {
        &self.velocities[k]
    }

    /// Value of the piecewise-linear representative at time `t`.
    /// Exact at grid nodes.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        if let Some(k) = self.grid.is_node(t) {
            return Ok(self.states[k].clone());
        }
        let k = self.grid.segment_of(t)?;
        let theta = (t - self.grid.node(k)) / self.grid.step(k);
        let theta = theta.clamp(0.0, 1.0);
        Ok(self.states[k]
            .iter()
            .zip(&self.states[k + 1])
            .map(|(a, b)| a + theta * (b - a))
            .collect())
    }

    pub fn sup_state_norm(&self) -> f64 {
        self.states
            .iter()
            .map(|s| linalg::norm(s))
            .fold(0.0, f64::max)
    }
}

/// Incremental constructor; keeps the consistency invariant exact.
pub struct TrajectoryBuilder {
    grid: TimeGrid,
    states: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

impl TrajectoryBuilder {
    pub fn new(grid: TimeGrid, x0: Vec<f64>) -> TrajectoryBuilder {
        let n = grid.steps();
        let mut states = Vec::with_capacity(n + 1);
        states.push(x0);
        TrajectoryBuilder {
            grid,
            states,
            velocities: Vec::with_capacity(n),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// Advance one step with velocity `v`; the next state is
    /// `x + h v` evaluated in exactly that form.
    pub fn step_with_velocity(&mut self, v: Vec<f64>) {
        let k = self.velocities.len();
        let h = self.grid.step(k);
        let x = self.states.last().unwrap();
        let next: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + h * vi).collect();
        self.states.push(next);
        self.velocities.push(v);
    }

    /// Advance one step to a prescribed next state; the realized
    /// velocity `(x_next - x) / h` is stored and the state recomputed
    /// from it so the consistency invariant stays exact.
    pub fn step_to(&mut self, x_next: &[f64]) {
        let k = self.velocities.len();
        let h = self.grid.step(k);
        let x = self.states.last().unwrap();
        let v: Vec<f64> = x_next.iter().zip(x).map(|(b, a)| (b - a) / h).collect();
        self.step_with_velocity(v);
    }

    pub fn finish(self) -> Trajectory {
        debug_assert_eq!(self.velocities.len(), self.grid.steps());
        Trajectory {
            grid: self.grid,
            states: self.states,
            velocities: self.velocities,
        }
    }
}

/// `make_grid(T, N)` from the public surface; uniform spacing `h = T/N`.
pub fn make_grid(horizon: f64, n: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(horizon, n)
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// A grid refined by an integer factor; base nodes are shared bit-exactly.
#[derive(Debug, Clone)]
pub struct RefinedGrid {
    ts: Vec<f64>,
    factor: usize,
}

impl RefinedGrid {
    pub fn new(grid: &TimeGrid, factor: usize) -> RefinedGrid {
        let factor = factor.max(1);
        let mut ts = Vec::with_capacity(grid.steps() * factor + 1);
        for k in 0..grid.steps() {
            let a = grid.node(k);
            let h = grid.step(k);
            ts.push(a);
            for j in 1..factor {
                ts.push(a + h * (j as f64) / (factor as f64));
            }
        }
        ts.push(grid.horizon());
        RefinedGrid { ts, factor }
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    /// Refined index of base node `k`.
    pub fn base_index(&self, k: usize) -> usize {
        k * self.factor
    }
}

/// Composite trapezoid of tabulated values over the full node range.
pub fn trapezoid(ts: &[f64], vals: &[f64]) -> f64 {
    debug_assert_eq!(ts.len(), vals.len());
    let mut acc = 0.0;
    for i in 0..ts.len().saturating_sub(1) {
        acc += 0.5 * (ts[i + 1] - ts[i]) * (vals[i] + vals[i + 1]);
    }
    acc
}

/// Cumulative trapezoid table: `cum[i] =` integral of the tabulated
/// integrand from `ts[0]` to `ts[i]`. Evaluation between nodes treats the
/// integrand as linear, which keeps the table additive: for any `a <= b <= c`,
/// `eval(c) - eval(a) = (eval(c) - eval(b)) + (eval(b) - eval(a))` exactly.
#[derive(Debug, Clone)]
pub struct CumTable {
    ts: Vec<f64>,
    vals: Vec<f64>,
    cum: Vec<f64>,
}

impl CumTable {
    pub fn from_values(ts: Vec<f64>, vals: Vec<f64>) -> CumTable {
        debug_assert_eq!(ts.len(), vals.len());
        let mut cum = Vec::with_capacity(ts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for i in 0..ts.len() - 1 {
            acc += 0.5 * (ts[i + 1] - ts[i]) * (vals[i] + vals[i + 1]);
            cum.push(acc);
        }
        CumTable { ts, vals, cum }
    }

    pub fn from_fn(ts: &[f64], f: impl Fn(f64) -> f64) -> CumTable {
        let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
        CumTable::from_values(ts.to_vec(), vals)
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn value_at_index(&self, i: usize) -> f64 {
        self.cum[i]
    }

    /// Integral from `ts[0]` to `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return 0.0;
        }
        if t >= self.ts[n - 1] {
            return self.cum[n - 1];
        }
        let j = self.ts.partition_point(|&x| x <= t) - 1;
        let dt = t - self.ts[j];
        let w = self.ts[j + 1] - self.ts[j];
        let theta = dt / w;
        let f_t = self.vals[j] + theta * (self.vals[j + 1] - self.vals[j]);
        self.cum[j] + 0.5 * dt * (self.vals[j] + f_t)
    }
}

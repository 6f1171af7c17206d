//! Time-stepping solvers and convergence diagnostics.
//!
//! All schemes are explicit Euler variants with least-norm selection of the
//! velocity map: an implicit step would require solving an inclusion per
//! step without improving the first-order accuracy. The catching-up scheme
//! evaluates the moving set at `(t_{k+1}, x_k)`; the state dependence lags
//! one step, which avoids an inner fixed point and is covered by the `L < 1`
//! contraction of the state dependence. Velocities always store the realized
//! increment `(x_{k+1} - x_k) / h`, so envelope checks apply to the true
//! discrete derivative.

use std::thread;

use crate::bounds::{self, BoundTable, ExpFactor};
use crate::error::{Error, Result};
use crate::galerkin::Projector;
use crate::grid::{Trajectory, TrajectoryBuilder};
use crate::linalg;
use crate::problem::{
    history_integral_into, BivariateFn, ControlGrid, GrowthEnvelope, ProblemSpec, ScalarFn,
    VelocityMap,
};
use crate::sets::MovingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Cascade,
    CatchingUp,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Minimal-norm element of `F(t, x)`; realizes the growth bound
    /// `c(t) ||x|| + d(t)`.
    LeastNorm,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub selection: SelectionRule,
    /// Galerkin ranks for the cascade; strictly increasing, max <= D.
    pub dims: Vec<usize>,
    pub tol_projection: f64,
    pub quad_refine: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Euler,
            selection: SelectionRule::LeastNorm,
            dims: Vec::new(),
            tol_projection: 1e-12,
            quad_refine: 4,
        }
    }
}

/// Least-norm point of `F(t, x)` for the supported representations.
pub fn select(map: &VelocityMap, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    select_into(map, t, x, &mut out)?;
    Ok(out)
}

fn select_into(map: &VelocityMap, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    match map {
        VelocityMap::Singleton(field) => {
            field(t, x, out);
        }
        VelocityMap::OffsetSet { center, set } => {
            // least-norm point of c + S is c + proj_S(-c)
            center(t, x, out);
            let neg: Vec<f64> = out.iter().map(|v| -v).collect();
            let p = set.project(&neg);
            for (o, pi) in out.iter_mut().zip(&p) {
                *o += pi;
            }
        }
        VelocityMap::VelocityBox { lo, hi } => {
            for i in 0..out.len() {
                out[i] = 0.0_f64.clamp(lo[i], hi[i]);
            }
        }
    }
    if !linalg::all_finite(out) {
        return Err(Error::NonFinite("velocity selection".into()));
    }
    Ok(())
}

/// Shared Euler loop: `v_k = select(F, t_k, a_k) + int_0^{t_k} g(t_k, s, a_s) ds`
/// where `a` is the (optionally projected) state argument.
fn euler_loop(
    spec: &ProblemSpec,
    projector: Option<&Projector>,
    control: Option<&ControlGrid>,
) -> Result<Trajectory> {
    let grid = &spec.grid;
    let dim = spec.dim();
    let n = grid.steps();
    let x0 = match projector {
        Some(p) => p.apply(&spec.x0)?,
        None => spec.x0.clone(),
    };
    let mut builder = TrajectoryBuilder::new(grid.clone(), x0.clone());
    let mut args: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    args.push(x0);
    let mut v = vec![0.0; dim];
    let mut hist = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for k in 0..n {
        let t = grid.node(k);
        select_into(&spec.velocity_map, t, &args[k], &mut v)?;
        if !spec.kernel.is_zero() {
            history_integral_into(&args, grid, &spec.kernel, k, control, &mut hist, &mut buf)?;
            for (vi, hi) in v.iter_mut().zip(&hist) {
                *vi += hi;
            }
        }
        builder.step_with_velocity(v.clone());
        let next = builder.last_state();
        let arg_next = match projector {
            Some(p) => p.apply(next)?,
            None => next.to_vec(),
        };
        args.push(arg_next);
    }
    Ok(builder.finish())
}

/// Explicit Euler for the unconstrained integro-differential inclusion.
pub fn solve_idi(spec: &ProblemSpec, _cfg: &SolverConfig) -> Result<Trajectory> {
    if spec.moving_set.is_some() {
        return Err(Error::Unsupported(
            "solve_idi expects no moving set; use solve_sweeping".into(),
        ));
    }
    euler_loop(spec, None, None)
}

/// Euler with a controlled history kernel; used by the control module.
pub fn solve_idi_controlled(spec: &ProblemSpec, control: &ControlGrid) -> Result<Trajectory> {
    euler_loop(spec, None, Some(control))
}

/// Gap table and its theoretical dominating bound at the grid nodes.
#[derive(Debug, Clone)]
pub struct GapTable {
    pub theta: Vec<f64>,
    pub bound: Vec<f64>,
}

impl GapTable {
    /// True when `theta <= bound + slack` at every node.
    pub fn dominated_within(&self, slack: f64) -> bool {
        self.theta
            .iter()
            .zip(&self.bound)
            .all(|(t, b)| *t <= b + slack)
    }

    pub fn nonincreasing_within(&self, tol: f64) -> bool {
        self.theta.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

#[derive(Debug, Clone)]
pub struct PairGap {
    pub rank_high: usize,
    pub rank_low: usize,
    pub gap: GapTable,
    /// Sup over nodes of the unsquared distance between the projected
    /// trajectories.
    pub sup_distance: f64,
}

/// Squared-gap diagnostics shared by the cascade and uniqueness checks.
#[derive(Debug, Clone)]
pub struct CauchyDiagnostics {
    pub pairs: Vec<PairGap>,
    pub vartheta: Option<GapTable>,
    /// First-order slack `K h` accompanying the continuous bounds.
    pub slack: f64,
}

impl CauchyDiagnostics {
    pub fn compliant(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.gap.dominated_within(self.slack))
            && self
                .vartheta
                .as_ref()
                .map_or(true, |g| g.dominated_within(self.slack))
    }
}

#[derive(Debug, Clone)]
pub struct CascadeResult {
    pub dims: Vec<usize>,
    pub trajectories: Vec<Trajectory>,
    pub diagnostics: CauchyDiagnostics,
}

/// Contraction factor `pi(t2, t1)` built from the one-sided rate and the
/// kernel's Lipschitz modulus frozen at radius `r(T)`.
fn contraction_factor(envelope: &GrowthEnvelope, spec: &ProblemSpec, r_horizon: f64) -> ExpFactor {
    let k_tilde = envelope.one_sided_rate.clone();
    let mu = envelope.kernel_lipschitz.clone();
    ExpFactor::build(
        &spec.grid,
        spec.quad_refine,
        &ScalarFn::new(move |t| 2.0 * k_tilde.eval(t)),
        &BivariateFn::new(move |_t, tau| 2.0 * mu.eval(r_horizon, tau)),
    )
}

/// First-order slack `K h`: the squared gap between two trajectories has
/// `|d theta / dt| <= ||x1 - x2|| ||v1 - v2|| <= (2 sup||x||)(2 sup||v||)`,
/// so one step moves it by at most `4 sup||x|| sup||v|| h`. The realized
/// sup-norms are used (the envelopes dominate them but can be wildly
/// conservative on stiff benchmarks).
fn observed_gap_slack(trajs: &[&Trajectory], h: f64) -> f64 {
    let sup_state = trajs
        .iter()
        .map(|t| t.sup_state_norm())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let sup_velocity = trajs
        .iter()
        .flat_map(|t| t.velocities().iter())
        .map(|v| linalg::norm(v))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    4.0 * sup_state * sup_velocity * h
}

/// Solves the projected problems for every rank in `cfg.dims` (concurrently)
/// and assembles the pairwise squared-gap tables with their contraction
/// bounds. At full rank the projector is the identity and the trajectory
/// coincides with [`solve_idi`] bit for bit.
pub fn solve_galerkin_cascade(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<CascadeResult> {
    let dim = spec.dim();
    if cfg.dims.is_empty() {
        return Err(Error::InvalidDims("cascade needs at least one rank".into()));
    }
    if cfg.dims.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidDims("ranks must increase strictly".into()));
    }
    if *cfg.dims.last().unwrap() > dim {
        return Err(Error::InvalidDims(format!(
            "maximal rank {} exceeds dimension {dim}",
            cfg.dims.last().unwrap()
        )));
    }
    if spec.moving_set.is_some() {
        return Err(Error::Unsupported("cascade expects no moving set".into()));
    }

    let trajectories: Vec<Trajectory> = thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .dims
            .iter()
            .map(|&n| {
                scope.spawn(move || {
                    let proj = Projector::canonical(dim, n)?;
                    euler_loop(spec, Some(&proj), None)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cascade member panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let r = bounds::state_envelope(spec)?;
    let r_horizon = *r.last().unwrap();
    let factor = contraction_factor(&spec.envelope, spec, r_horizon);
    let traj_refs: Vec<&Trajectory> = trajectories.iter().collect();
    let slack = observed_gap_slack(&traj_refs, spec.grid.mean_step());

    let mut pairs = Vec::new();
    for j in 0..cfg.dims.len() {
        for i in 0..j {
            let (lo, hi) = (cfg.dims[i], cfg.dims[j]);
            let p_lo = Projector::canonical(dim, lo)?;
            let p_hi = Projector::canonical(dim, hi)?;
            let mut theta = Vec::with_capacity(spec.grid.steps() + 1);
            let mut sup_distance = 0.0_f64;
            for k in 0..=spec.grid.steps() {
                let a = p_hi.apply(trajectories[j].state(k))?;
                let b = p_lo.apply(trajectories[i].state(k))?;
                let d = linalg::dist(&a, &b);
                sup_distance = sup_distance.max(d);
                theta.push(0.5 * d * d);
            }
            let theta0 = theta[0];
            let bound: Vec<f64> = (0..=spec.grid.steps())
                .map(|k| Ok(theta0 * factor.eval(0.0, spec.grid.node(k))?))
                .collect::<Result<Vec<_>>>()?;
            pairs.push(PairGap {
                rank_high: hi,
                rank_low: lo,
                gap: GapTable { theta, bound },
                sup_distance,
            });
        }
    }
    Ok(CascadeResult {
        dims: cfg.dims.clone(),
        trajectories,
        diagnostics: CauchyDiagnostics {
            pairs,
            vartheta: None,
            slack,
        },
    })
}

/// Catching-up: advance freely, then project onto the next constraint set
/// evaluated at the lagged state.
pub fn solve_sweeping(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<Trajectory> {
    let ms = spec
        .moving_set
        .as_ref()
        .ok_or_else(|| Error::Unsupported("solve_sweeping needs a moving set".into()))?;
    let grid = &spec.grid;
    let dim = spec.dim();
    let d0 = ms.at(0.0, &spec.x0).distance(&spec.x0);
    if d0 > cfg.tol_projection.max(1e-9) {
        return Err(Error::Validation {
            line: 0,
            msg: format!("initial state infeasible: d(x0, C(0, x0)) = {d0:e}"),
        });
    }
    let mut builder = TrajectoryBuilder::new(grid.clone(), spec.x0.clone());
    let mut v = vec![0.0; dim];
    let mut hist = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let h = grid.step(k);
        let x = builder.last_state().to_vec();
        select_into(&spec.velocity_map, t, &x, &mut v)?;
        if !spec.kernel.is_zero() {
            history_integral_into(
                builder.states(),
                grid,
                &spec.kernel,
                k,
                None,
                &mut hist,
                &mut buf,
            )?;
            for (vi, hi) in v.iter_mut().zip(&hist) {
                *vi += hi;
            }
        }
        let free: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + h * vi).collect();
        let set_next = ms.at(grid.node(k + 1), &x);
        let projected = set_next.project(&free);
        let residual = set_next.distance(&projected);
        if residual > cfg.tol_projection {
            return Err(Error::ProjectionFailure {
                step: k,
                distance: residual,
            });
        }
        builder.step_to(&projected);
    }
    Ok(builder.finish())
}

/// Unconstrained reduction: Euler on
/// `v = -m(t) g(t, x) + select(F, t, x) + history`, where `g` is a unit
/// distance subgradient off the set and zero on it.
pub fn solve_reduced(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    table: &BoundTable,
) -> Result<Trajectory> {
    if spec.moving_set.is_none() {
        return Err(Error::Unsupported(
            "solve_reduced needs a moving set".into(),
        ));
    }
    if table.grid != spec.grid {
        return Err(Error::GridMismatch(
            "bound table grid differs from spec grid".into(),
        ));
    }
    reduced_loop(spec, cfg, table, None)
}

/// Euler loop of the reduction; with a projector it solves the rank-limited
/// problem whose state argument is projected in the velocity map, the
/// history kernel, the constraint family, and the initial condition.
fn reduced_loop(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    table: &BoundTable,
    projector: Option<&Projector>,
) -> Result<Trajectory> {
    let ms = spec.moving_set.as_ref().unwrap();
    let m = table
        .m
        .as_ref()
        .ok_or_else(|| Error::Unsupported("bound table carries no drive coefficient m".into()))?;
    let grid = &spec.grid;
    let dim = spec.dim();
    let x0 = match projector {
        Some(p) => p.apply(&spec.x0)?,
        None => spec.x0.clone(),
    };
    let mut builder = TrajectoryBuilder::new(grid.clone(), x0.clone());
    let mut args: Vec<Vec<f64>> = Vec::with_capacity(grid.steps() + 1);
    args.push(x0);
    let mut v = vec![0.0; dim];
    let mut hist = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let off_set_tol = cfg.tol_projection.max(1e-12);
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let arg = args[k].clone();
        select_into(&spec.velocity_map, t, &arg, &mut v)?;
        if !spec.kernel.is_zero() {
            history_integral_into(&args, grid, &spec.kernel, k, None, &mut hist, &mut buf)?;
            for (vi, hi) in v.iter_mut().zip(&hist) {
                *vi += hi;
            }
        }
        let set = ms.at(t, &arg);
        let d = set.distance(&arg);
        if d > off_set_tol {
            let p = set.project(&arg);
            for i in 0..dim {
                v[i] -= m[k] * (arg[i] - p[i]) / d;
            }
        }
        builder.step_with_velocity(v.clone());
        let next = builder.last_state();
        let arg_next = match projector {
            Some(p) => p.apply(next)?,
            None => next.to_vec(),
        };
        args.push(arg_next);
    }
    Ok(builder.finish())
}

/// Per-rank feasibility of the reduced scheme: the projected problem's
/// distance to its own constraint set stays below the projection-tail term
/// `(1 + L) ||x0 - P_n x0||` plus a first-order slack
/// `K h` with `K = sup(|zeta'| + (1 + L) psi)`.
#[derive(Debug, Clone)]
pub struct RankFeasibility {
    pub rank: usize,
    /// `d(P_n x_n(t_k), C(t_k, P_n x_n(t_k)))` per node.
    pub phi: Vec<f64>,
    pub max_phi: f64,
    /// `(1 + L) ||x0 - P_n x0||`.
    pub tail: f64,
    /// `K h`.
    pub slack: f64,
    pub compliant: bool,
}

pub fn reduced_rank_feasibility(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    table: &BoundTable,
) -> Result<Vec<RankFeasibility>> {
    let ms = spec
        .moving_set
        .as_ref()
        .ok_or_else(|| Error::Unsupported("rank feasibility needs a moving set".into()))?;
    if cfg.dims.is_empty() {
        return Err(Error::InvalidDims("rank feasibility needs ranks".into()));
    }
    if cfg.dims.windows(2).any(|w| w[1] <= w[0]) || *cfg.dims.last().unwrap() > spec.dim() {
        return Err(Error::InvalidDims(
            "ranks must increase strictly up to the dimension".into(),
        ));
    }
    let grid = &spec.grid;
    let l = ms.state_lipschitz();
    let rate = ms.time_variation_rate(grid.mean_step() / spec.quad_refine as f64);
    let k_rate = (0..=grid.steps())
        .map(|k| rate.eval(grid.node(k)).abs() + (1.0 + l) * table.psi[k])
        .fold(0.0_f64, f64::max);
    let slack = k_rate * grid.mean_step();

    let mut out = Vec::with_capacity(cfg.dims.len());
    for &rank in &cfg.dims {
        let proj = Projector::canonical(spec.dim(), rank)?;
        let traj = reduced_loop(spec, cfg, table, Some(&proj))?;
        let tail = (1.0 + l) * proj.residual(&spec.x0)?;
        let mut phi = Vec::with_capacity(grid.steps() + 1);
        for k in 0..=grid.steps() {
            let projected = proj.apply(traj.state(k))?;
            phi.push(ms.at(grid.node(k), &projected).distance(&projected));
        }
        let max_phi = phi.iter().copied().fold(0.0, f64::max);
        let compliant = phi.iter().all(|&p| p <= tail + slack);
        out.push(RankFeasibility {
            rank,
            phi,
            max_phi,
            tail,
            slack,
            compliant,
        });
    }
    Ok(out)
}

/// Squared-gap check between two trajectories of the same problem data:
/// `vartheta(t) = ||x1(t) - x2(t)||^2 / 2` against
/// `vartheta(0) pi(t, 0) + K h`.
pub fn uniqueness_gap(
    a: &Trajectory,
    b: &Trajectory,
    envelope: &GrowthEnvelope,
    quad_refine: usize,
) -> Result<CauchyDiagnostics> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch(
            "trajectories live on different grids".into(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let grid = a.grid();
    let u0 = linalg::norm(a.state(0)).max(linalg::norm(b.state(0)));
    let r = bounds::state_envelope_for(envelope, u0, grid, quad_refine)?;
    let r_horizon = *r.last().unwrap();
    let k_tilde = envelope.one_sided_rate.clone();
    let mu = envelope.kernel_lipschitz.clone();
    let factor = ExpFactor::build(
        grid,
        quad_refine,
        &ScalarFn::new(move |t| 2.0 * k_tilde.eval(t)),
        &BivariateFn::new(move |_t, tau| 2.0 * mu.eval(r_horizon, tau)),
    );
    let slack = observed_gap_slack(&[a, b], grid.mean_step());

    let mut theta = Vec::with_capacity(grid.steps() + 1);
    for k in 0..=grid.steps() {
        let d = linalg::dist(a.state(k), b.state(k));
        theta.push(0.5 * d * d);
    }
    let theta0 = theta[0];
    let bound: Vec<f64> = (0..=grid.steps())
        .map(|k| Ok(theta0 * factor.eval(0.0, grid.node(k))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(CauchyDiagnostics {
        pairs: Vec::new(),
        vartheta: Some(GapTable { theta, bound }),
        slack,
    })
}

/// Per-node distances of a trajectory to its own moving set, plus the lagged
/// per-step distances the catching-up scheme controls directly.
#[derive(Debug, Clone)]
pub struct ViolationReport {
    /// `d(x_k, C(t_k, x_k))` per node.
    pub per_node: Vec<f64>,
    pub max: f64,
    /// `d(x_{k+1}, C(t_{k+1}, x_k))` per step.
    pub lagged: Vec<f64>,
    pub lagged_max: f64,
}

pub fn constraint_violation(traj: &Trajectory, ms: &MovingSet) -> ViolationReport {
    let grid = traj.grid();
    let per_node: Vec<f64> = (0..=grid.steps())
        .map(|k| ms.at(grid.node(k), traj.state(k)).distance(traj.state(k)))
        .collect();
    let lagged: Vec<f64> = (0..grid.steps())
        .map(|k| {
            ms.at(grid.node(k + 1), traj.state(k))
                .distance(traj.state(k + 1))
        })
        .collect();
    let max = per_node.iter().copied().fold(0.0, f64::max);
    let lagged_max = lagged.iter().copied().fold(0.0, f64::max);
    ViolationReport {
        per_node,
        max,
        lagged,
        lagged_max,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrderEstimate {
    /// All refinement gaps were numerically zero.
    Exact,
    Slope(f64),
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub ns: Vec<usize>,
    /// Sup-norm gap between consecutive refinements at shared nodes.
    pub gaps: Vec<f64>,
    pub order: OrderEstimate,
}

/// Solves the same problem on nested grids and measures the empirical order
/// as the least-squares slope of `log gap` against `log h`.
pub fn convergence_study(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    ns: &[usize],
) -> Result<ConvergenceStudy> {
    if ns.len() < 2 {
        return Err(Error::MisalignedGrids(
            "need at least two step counts".into(),
        ));
    }
    for w in ns.windows(2) {
        if w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(Error::MisalignedGrids(format!(
                "{} does not refine {}",
                w[1], w[0]
            )));
        }
    }
    let solve_one = |n: usize| -> Result<Trajectory> {
        let sub = spec.with_steps(n)?;
        match cfg.scheme {
            Scheme::Euler | Scheme::Cascade => solve_idi(&sub, cfg),
            Scheme::CatchingUp => solve_sweeping(&sub, cfg),
            Scheme::Reduced => {
                let env = bounds::sweeping_envelopes(&sub)?;
                solve_reduced(&sub, cfg, &env.table)
            }
        }
    };
    let trajectories: Vec<Trajectory> = thread::scope(|scope| {
        let handles: Vec<_> = ns
            .iter()
            .map(|&n| scope.spawn(move || solve_one(n)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("study member panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut gaps = Vec::with_capacity(ns.len() - 1);
    let mut scale = 0.0_f64;
    for i in 0..ns.len() - 1 {
        let coarse = &trajectories[i];
        let fine = &trajectories[i + 1];
        let stride = ns[i + 1] / ns[i];
        let mut gap = 0.0_f64;
        for k in 0..=ns[i] {
            gap = gap.max(linalg::dist(coarse.state(k), fine.state(k * stride)));
        }
        scale = scale.max(coarse.sup_state_norm());
        gaps.push(gap);
    }
    let tiny = 1e-13 * (1.0 + scale);
    let order = if gaps.iter().all(|&g| g <= tiny) {
        OrderEstimate::Exact
    } else {
        let pts: Vec<(f64, f64)> = gaps
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > 0.0)
            .map(|(i, &g)| ((spec.grid.horizon() / ns[i] as f64).ln(), g.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        OrderEstimate::Slope(if sxx > 0.0 { sxy / sxx } else { f64::NAN })
    };
    Ok(ConvergenceStudy {
        ns: ns.to_vec(),
        gaps,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::oracle::rk4_solve;
    use crate::problem::{AlphaFar, Kernel, RadiusFn};
    use crate::sets::{SetGeometry, VariationKind};
    use std::sync::Arc;

    fn decay_spec(n: usize) -> ProblemSpec {
        let grid = make_grid(1.0, n).unwrap();
        let mut spec = ProblemSpec::new(
            grid,
            vec![1.0],
            VelocityMap::Singleton(Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = -x[0])),
            Kernel::Zero,
        );
        spec.envelope.linear_gain = ScalarFn::constant(1.0);
        spec.envelope.one_sided_rate = ScalarFn::constant(-1.0);
        spec
    }

    fn linear_idi_spec(n: usize) -> ProblemSpec {
        let mut spec = decay_spec(n);
        spec.kernel = Kernel::Plain(Arc::new(|_t, _s, x: &[f64], out: &mut [f64]| out[0] = x[0]));
        spec.envelope.kernel_growth = BivariateFn::constant(1.0);
        spec.envelope.kernel_lipschitz = RadiusFn::constant(1.0);
        spec
    }

    fn halfline_spec(n: usize) -> ProblemSpec {
        let grid = make_grid(1.0, n).unwrap();
        let mut spec = ProblemSpec::new(grid, vec![0.0], VelocityMap::zero(1), Kernel::Zero);
        spec.moving_set = Some(
            MovingSet::new(
                Arc::new(|t, _: &[f64]| SetGeometry::Halfspace {
                    normal: vec![-1.0],
                    offset: -t,
                }),
                ScalarFn::new(|t| t),
                Some(ScalarFn::constant(1.0)),
                0.0,
                VariationKind::TimeOnly,
            )
            .unwrap(),
        );
        spec.alpha_far = AlphaFar {
            alpha: 1.0,
            tube: f64::INFINITY,
        };
        spec
    }

    #[test]
    fn select_examples() {
        // singleton {-x}
        let map = VelocityMap::Singleton(Arc::new(|_, x: &[f64], out: &mut [f64]| {
            out[0] = -x[0];
            out[1] = -x[1];
        }));
        assert_eq!(select(&map, 0.0, &[3.0, -1.0]).unwrap(), vec![-3.0, 1.0]);

        // ball centered at -x with radius 1: least-norm shrinks radially
        let map = VelocityMap::OffsetSet {
            center: Arc::new(|_, x: &[f64], out: &mut [f64]| {
                out[0] = -x[0];
                out[1] = -x[1];
            }),
            set: SetGeometry::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
        };
        let v = select(&map, 0.0, &[3.0, 0.0]).unwrap();
        assert!((v[0] + 2.0).abs() < 1e-12 && v[1].abs() < 1e-12);

        // a box containing 0 selects 0
        let map = VelocityMap::VelocityBox {
            lo: vec![-1.0, -2.0],
            hi: vec![1.0, -0.5],
        };
        assert_eq!(select(&map, 0.0, &[0.0, 0.0]).unwrap(), vec![0.0, -0.5]);
    }

    #[test]
    fn solve_idi_constant_when_stationary() {
        let grid = make_grid(1.0, 16).unwrap();
        let spec = ProblemSpec::new(grid, vec![2.0, -1.0], VelocityMap::zero(2), Kernel::Zero);
        let traj = solve_idi(&spec, &SolverConfig::default()).unwrap();
        for k in 0..=16 {
            assert_eq!(traj.state(k), &[2.0, -1.0]);
        }
    }

    #[test]
    fn solve_idi_exponential_decay() {
        let spec = decay_spec(2000);
        let traj = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let end = traj.state(2000)[0];
        assert!((end - (-1.0_f64).exp()).abs() < 5e-3);
    }

    #[test]
    fn solve_idi_matches_rk4_on_linear_idi() {
        // x' = -x + y, y' = x is the augmented form of the history kernel x
        let spec = linear_idi_spec(2000);
        let traj = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let oracle = rk4_solve(
            |_, z, dz| {
                dz[0] = -z[0] + z[1];
                dz[1] = z[0];
            },
            &[1.0, 0.0],
            1.0,
            100_000,
        );
        let mut worst = 0.0_f64;
        for k in 0..=2000 {
            worst = worst.max((traj.state(k)[0] - oracle[k * 50][0]).abs());
        }
        assert!(worst < 5e-3, "worst gap {worst}");
    }

    #[test]
    fn cascade_full_rank_is_bitwise_identical() {
        let mut spec = linear_idi_spec(200);
        spec.x0 = vec![1.0];
        let plain = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            dims: vec![1],
            ..SolverConfig::default()
        };
        let cascade = solve_galerkin_cascade(&spec, &cfg).unwrap();
        assert_eq!(cascade.trajectories[0], plain);
    }

    #[test]
    fn cascade_diagonal_gap_decreases() {
        let d = 8;
        let grid = make_grid(1.0, 400).unwrap();
        let x0 = vec![1.0 / (d as f64).sqrt(); d];
        let mut spec = ProblemSpec::new(
            grid,
            x0,
            VelocityMap::Singleton(Arc::new(move |_, x: &[f64], out: &mut [f64]| {
                for i in 0..x.len() {
                    out[i] = -((i + 1) as f64) * x[i];
                }
            })),
            Kernel::Zero,
        );
        spec.envelope.linear_gain = ScalarFn::constant(d as f64);
        spec.envelope.one_sided_rate = ScalarFn::constant(-1.0);
        let cfg = SolverConfig {
            dims: (1..=d).collect(),
            ..SolverConfig::default()
        };
        let res = solve_galerkin_cascade(&spec, &cfg).unwrap();
        let full = &res.trajectories[d - 1];
        let mut prev = f64::INFINITY;
        for (i, traj) in res.trajectories.iter().enumerate() {
            let mut gap = 0.0_f64;
            for k in 0..=spec.grid.steps() {
                gap = gap.max(linalg::dist(traj.state(k), full.state(k)));
            }
            if i + 1 < d {
                assert!(gap < prev, "rank {} gap {gap} prev {prev}", i + 1);
            } else {
                assert_eq!(gap, 0.0);
            }
            prev = gap;
        }
        assert!(res.diagnostics.compliant());
    }

    #[test]
    fn cascade_trivial_when_dynamics_confined_to_first_coordinate() {
        let grid = make_grid(1.0, 100).unwrap();
        let mut spec = ProblemSpec::new(
            grid,
            vec![1.0, 0.0, 0.0],
            VelocityMap::Singleton(Arc::new(|_, x: &[f64], out: &mut [f64]| {
                out[0] = -x[0];
                out[1] = 0.0;
                out[2] = 0.0;
            })),
            Kernel::Zero,
        );
        spec.envelope.linear_gain = ScalarFn::constant(1.0);
        let cfg = SolverConfig {
            dims: vec![1, 3],
            ..SolverConfig::default()
        };
        let res = solve_galerkin_cascade(&spec, &cfg).unwrap();
        for k in 0..=100 {
            assert_eq!(res.trajectories[0].state(k), res.trajectories[1].state(k));
        }
    }

    #[test]
    fn sweeping_halfline_tracks_wall_exactly() {
        let spec = halfline_spec(500);
        let cfg = SolverConfig::default();
        let traj = solve_sweeping(&spec, &cfg).unwrap();
        for k in 0..=500 {
            assert!((traj.state(k)[0] - spec.grid.node(k)).abs() < 1e-14);
        }
        let ms = spec.moving_set.as_ref().unwrap();
        let report = constraint_violation(&traj, ms);
        assert!(report.lagged_max <= cfg.tol_projection);
    }

    #[test]
    fn sweeping_static_ball_keeps_interior_point() {
        let grid = make_grid(1.0, 64).unwrap();
        let mut spec = ProblemSpec::new(grid, vec![0.25, 0.0], VelocityMap::zero(2), Kernel::Zero);
        spec.moving_set = Some(
            MovingSet::new(
                Arc::new(|_, _: &[f64]| SetGeometry::Ball {
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                }),
                ScalarFn::zero(),
                Some(ScalarFn::zero()),
                0.0,
                VariationKind::TimeOnly,
            )
            .unwrap(),
        );
        let traj = solve_sweeping(&spec, &SolverConfig::default()).unwrap();
        for k in 0..=64 {
            assert_eq!(traj.state(k), &[0.25, 0.0]);
        }
    }

    #[test]
    fn sweeping_sine_wall_never_pushes() {
        let grid = make_grid(1.0, 128).unwrap();
        let mut spec = ProblemSpec::new(grid, vec![1.0], VelocityMap::zero(1), Kernel::Zero);
        spec.moving_set = Some(
            MovingSet::new(
                Arc::new(|t: f64, _: &[f64]| SetGeometry::Halfspace {
                    normal: vec![-1.0],
                    offset: -t.sin(),
                }),
                ScalarFn::new(|t| t.sin()),
                Some(ScalarFn::new(|t| t.cos())),
                0.0,
                VariationKind::TimeOnly,
            )
            .unwrap(),
        );
        let traj = solve_sweeping(&spec, &SolverConfig::default()).unwrap();
        for k in 0..=128 {
            assert_eq!(traj.state(k)[0], 1.0);
        }
    }

    #[test]
    fn reduced_tracks_wall_within_two_steps() {
        let spec = halfline_spec(400);
        let env = bounds::sweeping_envelopes(&spec).unwrap();
        let m = env.table.m.as_ref().unwrap();
        assert!(m.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let traj = solve_reduced(&spec, &SolverConfig::default(), &env.table).unwrap();
        let h = spec.grid.mean_step();
        for k in 0..=400 {
            let err = (traj.state(k)[0] - spec.grid.node(k)).abs();
            assert!(err <= 2.0 * h + 1e-12, "node {k}: err {err}");
        }
        let report = constraint_violation(&traj, spec.moving_set.as_ref().unwrap());
        assert!(report.max <= h + 1e-12);
    }

    #[test]
    fn rank_feasibility_static_wall() {
        // C = { x2 >= 0.4 } static with x0 = (0, 0.5): rank 1 truncates the
        // feasible coordinate, so phi_1 = 0.4 sits strictly under the
        // projection tail (1 + L) ||x0 - P_1 x0|| = 0.5; full rank is exact.
        let grid = make_grid(1.0, 100).unwrap();
        let mut spec = ProblemSpec::new(grid, vec![0.0, 0.5], VelocityMap::zero(2), Kernel::Zero);
        spec.moving_set = Some(
            MovingSet::new(
                Arc::new(|_, _: &[f64]| SetGeometry::Halfspace {
                    normal: vec![0.0, -1.0],
                    offset: -0.4,
                }),
                ScalarFn::zero(),
                Some(ScalarFn::zero()),
                0.0,
                VariationKind::TimeOnly,
            )
            .unwrap(),
        );
        let env = bounds::sweeping_envelopes(&spec).unwrap();
        let cfg = SolverConfig {
            dims: vec![1, 2],
            ..SolverConfig::default()
        };
        let ranks = reduced_rank_feasibility(&spec, &cfg, &env.table).unwrap();
        assert!((ranks[0].max_phi - 0.4).abs() < 1e-12);
        assert!((ranks[0].tail - 0.5).abs() < 1e-12);
        assert!(ranks[1].max_phi <= 1e-12);
        // the distance defect vanishes as the rank reaches the dimension
        assert!(ranks[1].max_phi <= ranks[0].max_phi);
        assert!(ranks.iter().all(|r| r.compliant));
    }

    #[test]
    fn rank_feasibility_full_rank_matches_reduced() {
        let spec = halfline_spec(200);
        let env = bounds::sweeping_envelopes(&spec).unwrap();
        let cfg = SolverConfig {
            dims: vec![1],
            ..SolverConfig::default()
        };
        let ranks = reduced_rank_feasibility(&spec, &cfg, &env.table).unwrap();
        let direct = solve_reduced(&spec, &SolverConfig::default(), &env.table).unwrap();
        let report = constraint_violation(&direct, spec.moving_set.as_ref().unwrap());
        assert_eq!(ranks[0].max_phi, report.max);
        assert!(ranks[0].compliant);
    }

    #[test]
    fn reduced_matches_idi_when_constraint_inactive() {
        // static box that contains the decaying flow: the subgradient term
        // never activates
        let mut spec = decay_spec(200);
        spec.moving_set = Some(
            MovingSet::new(
                Arc::new(|_, _: &[f64]| SetGeometry::Box {
                    lo: vec![-5.0],
                    hi: vec![5.0],
                }),
                ScalarFn::zero(),
                Some(ScalarFn::zero()),
                0.0,
                VariationKind::TimeOnly,
            )
            .unwrap(),
        );
        let env = bounds::sweeping_envelopes(&spec).unwrap();
        let constrained = solve_reduced(&spec, &SolverConfig::default(), &env.table).unwrap();
        let mut unconstrained_spec = spec.clone();
        unconstrained_spec.moving_set = None;
        let free = solve_idi(&unconstrained_spec, &SolverConfig::default()).unwrap();
        assert_eq!(constrained, free);
    }

    #[test]
    fn uniqueness_gap_identical_trajectories() {
        let spec = decay_spec(100);
        let traj = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let diag = uniqueness_gap(&traj, &traj, &spec.envelope, 4).unwrap();
        let gap = diag.vartheta.unwrap();
        assert!(gap.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniqueness_gap_monotone_benchmark() {
        let spec = linear_idi_spec(1000);
        let mut other = spec.clone();
        other.x0 = vec![1.1];
        let a = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let b = solve_idi(&other, &SolverConfig::default()).unwrap();
        let diag = uniqueness_gap(&a, &b, &spec.envelope, 4).unwrap();
        assert!(diag.compliant());
    }

    #[test]
    fn uniqueness_gap_nonexpansive_case() {
        // k_tilde = 0, mu = 0: pi == 1 and the squared gap is nonincreasing
        let mut spec = decay_spec(500);
        spec.envelope.one_sided_rate = ScalarFn::zero();
        let mut other = spec.clone();
        other.x0 = vec![1.3];
        let a = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let b = solve_idi(&other, &SolverConfig::default()).unwrap();
        let diag = uniqueness_gap(&a, &b, &spec.envelope, 4).unwrap();
        let gap = diag.vartheta.unwrap();
        assert!(gap.nonincreasing_within(1e-9));
        assert!(gap.dominated_within(diag.slack));
    }

    #[test]
    fn constraint_violation_infeasible_wall() {
        let spec = halfline_spec(4);
        let grid = spec.grid.clone();
        let frozen = Trajectory::new(grid.clone(), vec![vec![0.0]; 5], vec![vec![0.0]; 4]).unwrap();
        let report = constraint_violation(&frozen, spec.moving_set.as_ref().unwrap());
        for k in 0..=4 {
            assert!((report.per_node[k] - grid.node(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn convergence_study_linear_order_one() {
        let spec = decay_spec(100);
        let study =
            convergence_study(&spec, &SolverConfig::default(), &[250, 500, 1000, 2000]).unwrap();
        match study.order {
            OrderEstimate::Slope(s) => assert!((0.8..=1.2).contains(&s), "slope {s}"),
            OrderEstimate::Exact => panic!("expected a slope"),
        }
    }

    #[test]
    fn convergence_study_constant_is_exact() {
        let grid = make_grid(1.0, 10).unwrap();
        let spec = ProblemSpec::new(grid, vec![1.0], VelocityMap::zero(1), Kernel::Zero);
        let study = convergence_study(&spec, &SolverConfig::default(), &[10, 20, 40]).unwrap();
        assert_eq!(study.order, OrderEstimate::Exact);
    }

    #[test]
    fn convergence_study_rejects_non_nested() {
        let spec = decay_spec(10);
        assert!(matches!(
            convergence_study(&spec, &SolverConfig::default(), &[250, 300]),
            Err(Error::MisalignedGrids(_))
        ));
    }

    #[test]
    fn monotone_contraction_between_starts() {
        // k_tilde <= 0 and mu = 0: node-wise gap never grows
        let spec = decay_spec(400);
        let mut other = spec.clone();
        other.x0 = vec![0.4];
        let a = solve_idi(&spec, &SolverConfig::default()).unwrap();
        let b = solve_idi(&other, &SolverConfig::default()).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=400 {
            let gap = linalg::dist(a.state(k), b.state(k));
            assert!(gap <= prev + 1e-12);
            prev = gap;
        }
    }
}

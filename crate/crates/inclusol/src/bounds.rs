//! Gronwall engine and a-priori envelope computation.
//!
//! The exponential factor
//! `e(t2, t1) = exp( int_{t1}^{t2} ( beta(s) + int_0^s gamma(s,tau) dtau ) ds )`
//! is represented through one cumulative exponent table, so the cocycle
//! identity `e(t3,t1) = e(t3,t2) e(t2,t1)` holds to rounding error by
//! construction. All time integrals use composite trapezoid on a refinement
//! of the solver grid (factor 4 by default).

use crate::error::{Error, Result};
use crate::grid::{trapezoid, CumTable, RefinedGrid, TimeGrid, Trajectory};
use crate::linalg;
use crate::problem::{BivariateFn, GrowthEnvelope, ProblemSpec, ScalarFn};

/// Fixed-point tolerance for the coupled `(m, r)` system.
pub const PICARD_TOL: f64 = 1e-10;
/// Iteration cap for the coupled `(m, r)` system.
pub const PICARD_MAX_ITER: usize = 200;
/// Margin factor applied to the tube budget when splitting the horizon.
pub const SPLIT_MARGIN: f64 = 0.9;

/// Exponential factor backed by a cumulative exponent table.
#[derive(Debug, Clone)]
pub struct ExpFactor {
    exponent: CumTable,
    horizon: f64,
}

impl ExpFactor {
    /// Builds the exponent table on a refinement of `grid`.
    pub fn build(
        grid: &TimeGrid,
        refine: usize,
        beta: &ScalarFn,
        gamma: &BivariateFn,
    ) -> ExpFactor {
        let refined = RefinedGrid::new(grid, refine);
        let inner = inner_integral_table(&refined, gamma);
        let vals: Vec<f64> = refined
            .ts()
            .iter()
            .zip(&inner)
            .map(|(&s, &ig)| beta.eval(s) + ig)
            .collect();
        ExpFactor {
            exponent: CumTable::from_values(refined.ts().to_vec(), vals),
            horizon: grid.horizon(),
        }
    }

    /// `e(t2, t1)` for `0 <= t1 <= t2 <= T`; equals 1 on the diagonal.
    pub fn eval(&self, t1: f64, t2: f64) -> Result<f64> {
        if t1 > t2 {
            return Err(Error::ReversedInterval { t1, t2 });
        }
        if t1 < 0.0 || t2 > self.horizon * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::TimeOutOfRange {
                t: t2,
                horizon: self.horizon,
            });
        }
        Ok((self.exponent.eval(t2) - self.exponent.eval(t1)).exp())
    }

    fn exponent_at(&self, t: f64) -> f64 {
        self.exponent.eval(t)
    }
}

/// Inner integrals `I(s) = int_0^s gamma(s, tau) dtau` at the refined nodes.
fn inner_integral_table(refined: &RefinedGrid, gamma: &BivariateFn) -> Vec<f64> {
    let ts = refined.ts();
    if gamma.is_zero() {
        return vec![0.0; ts.len()];
    }
    let mut out = Vec::with_capacity(ts.len());
    let mut row: Vec<f64> = Vec::with_capacity(ts.len());
    for (j, &s) in ts.iter().enumerate() {
        row.clear();
        row.extend(ts[..=j].iter().map(|&tau| gamma.eval(s, tau)));
        out.push(trapezoid(&ts[..=j], &row));
    }
    out
}

/// Standalone exponential factor on a fresh uniform quadrature grid of
/// `steps` pieces covering `[0, t2]`.
pub fn exp_factor(
    t1: f64,
    t2: f64,
    beta: &ScalarFn,
    gamma: &BivariateFn,
    steps: usize,
) -> Result<f64> {
    if t1 > t2 {
        return Err(Error::ReversedInterval { t1, t2 });
    }
    if t1 < 0.0 {
        return Err(Error::TimeOutOfRange { t: t1, horizon: t2 });
    }
    if t2 == t1 && t2 == 0.0 {
        return Ok(1.0);
    }
    let grid = TimeGrid::uniform(t2, steps.max(1))?;
    let factor = ExpFactor::build(&grid, 1, beta, gamma);
    factor.eval(t1, t2)
}

/// `t -> u0 e(t,0) + int_0^t alpha(s) e(t,s) ds` evaluated at the grid nodes.
pub fn gronwall_bound(
    u0: f64,
    alpha: &ScalarFn,
    beta: &ScalarFn,
    gamma: &BivariateFn,
    grid: &TimeGrid,
    refine: usize,
) -> Result<Vec<f64>> {
    if u0 < 0.0 {
        return Err(Error::NegativeInitial(u0));
    }
    let factor = ExpFactor::build(grid, refine, beta, gamma);
    let refined = RefinedGrid::new(grid, refine);
    // bound(t) = e^{Phi(t)} ( u0 + int_0^t alpha(s) e^{-Phi(s)} ds )
    let weighted = CumTable::from_values(
        refined.ts().to_vec(),
        refined
            .ts()
            .iter()
            .map(|&s| alpha.eval(s) * (-factor.exponent_at(s)).exp())
            .collect(),
    );
    let mut out = Vec::with_capacity(grid.steps() + 1);
    for k in 0..=grid.steps() {
        let t = grid.node(k);
        let v = factor.exponent_at(t).exp() * (u0 + weighted.eval(t));
        if !v.is_finite() {
            return Err(Error::NonFinite("gronwall bound".into()));
        }
        out.push(v);
    }
    Ok(out)
}

/// State envelope `r` of the inclusion: Gronwall bound with
/// `alpha(s) = d(s) + int_0^s sigma(s,tau) dtau`, `beta = c`, `gamma = sigma`.
pub fn state_envelope(spec: &ProblemSpec) -> Result<Vec<f64>> {
    state_envelope_for(
        &spec.envelope,
        linalg::norm(&spec.x0),
        &spec.grid,
        spec.quad_refine,
    )
}

/// Same envelope computed from raw growth data and an initial norm.
pub fn state_envelope_for(
    envelope: &GrowthEnvelope,
    x0_norm: f64,
    grid: &TimeGrid,
    refine: usize,
) -> Result<Vec<f64>> {
    let refined = RefinedGrid::new(grid, refine);
    let inner = inner_integral_table(&refined, &envelope.kernel_growth);
    let offset = envelope.offset.clone();
    let inner_table = ScalarFn::from_table(refined.ts().to_vec(), inner);
    let alpha = ScalarFn::new(move |t| offset.eval(t) + inner_table.eval(t));
    gronwall_bound(
        x0_norm,
        &alpha,
        &envelope.linear_gain,
        &envelope.kernel_growth,
        grid,
        refine,
    )
}

/// Velocity envelope
/// `psi(t) = c(t) r(t) + d(t) + int_0^t sigma(t,s) ds + int_0^t sigma(t,s) r(s) ds`
/// with `r` interpolated piecewise-linearly between its nodes.
pub fn velocity_envelope(spec: &ProblemSpec, r: &[f64]) -> Result<Vec<f64>> {
    velocity_envelope_for(&spec.envelope, &spec.grid, spec.quad_refine, r, None)
}

/// Same computation from raw growth data; `m` adds the sweeping drive term.
pub fn velocity_envelope_for(
    envelope: &GrowthEnvelope,
    grid: &TimeGrid,
    refine: usize,
    r: &[f64],
    m: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if r.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "{} envelope values against {} nodes",
            r.len(),
            grid.steps() + 1
        )));
    }
    let sigma = &envelope.kernel_growth;
    let refined = RefinedGrid::new(grid, refine);
    let r_interp = ScalarFn::from_table(grid.nodes().to_vec(), r.to_vec());
    let mut out = Vec::with_capacity(grid.steps() + 1);
    for k in 0..=grid.steps() {
        let t = grid.node(k);
        let mut v = envelope.linear_gain.eval(t) * r[k] + envelope.offset.eval(t);
        if let Some(m) = m {
            v += m[k];
        }
        if !sigma.is_zero() {
            let j = refined.base_index(k);
            let ts = &refined.ts()[..=j];
            let plain: Vec<f64> = ts.iter().map(|&s| sigma.eval(t, s)).collect();
            let weighted: Vec<f64> = ts
                .iter()
                .zip(&plain)
                .map(|(&s, &sv)| sv * r_interp.eval(s))
                .collect();
            v += trapezoid(ts, &plain) + trapezoid(ts, &weighted);
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("velocity envelope".into()));
        }
        out.push(v);
    }
    Ok(out)
}

/// Tabulated envelopes on the grid plus the exponential factor they were
/// built with.
#[derive(Debug, Clone)]
pub struct BoundTable {
    pub grid: TimeGrid,
    pub r: Vec<f64>,
    pub psi: Vec<f64>,
    pub m: Option<Vec<f64>>,
    pub factor: ExpFactor,
}

impl BoundTable {
    /// Envelope table for the unconstrained inclusion.
    pub fn for_inclusion(spec: &ProblemSpec) -> Result<BoundTable> {
        let r = state_envelope(spec)?;
        let psi = velocity_envelope(spec, &r)?;
        let factor = ExpFactor::build(
            &spec.grid,
            spec.quad_refine,
            &spec.envelope.linear_gain,
            &spec.envelope.kernel_growth,
        );
        Ok(BoundTable {
            grid: spec.grid.clone(),
            r,
            psi,
            m: None,
            factor,
        })
    }
}

/// Output of the coupled `(m, r)` fixed point.
#[derive(Debug, Clone)]
pub struct SweepingEnvelopes {
    pub table: BoundTable,
    /// Successive-iterate sup-distances, one entry per Picard sweep.
    pub residuals: Vec<f64>,
}

/// Solves the coupled system
/// `m = ( |zeta'| + (1+L)(c r + d + S1 + S2[r]) ) / (alpha^2 - L)` and
/// `r(t) = ||x0|| e(t,0) + int_0^t (d + m + S_inner) e(t,s) ds`
/// by Picard iteration starting from `m = 0`, reporting the residual decay.
pub fn sweeping_envelopes(spec: &ProblemSpec) -> Result<SweepingEnvelopes> {
    let ms = spec
        .moving_set
        .as_ref()
        .ok_or_else(|| Error::Unsupported("sweeping envelopes need a moving set".into()))?;
    let l = ms.state_lipschitz();
    let alpha = spec.alpha_far.alpha;
    let gap = alpha * alpha - l;
    if gap <= 0.0 {
        return Err(Error::AlphaFarViolated {
            alpha,
            lipschitz: l,
        });
    }

    let grid = &spec.grid;
    let refine = spec.quad_refine;
    let refined = RefinedGrid::new(grid, refine);
    let ts = refined.ts().to_vec();
    let n = ts.len();
    let sigma = &spec.envelope.kernel_growth;

    let factor = ExpFactor::build(grid, refine, &spec.envelope.linear_gain, sigma);
    let exp_phi: Vec<f64> = ts.iter().map(|&t| factor.exponent_at(t).exp()).collect();
    let exp_neg: Vec<f64> = ts.iter().map(|&t| (-factor.exponent_at(t)).exp()).collect();
    let inner_sigma = inner_integral_table(&refined, sigma);
    let gain: Vec<f64> = ts
        .iter()
        .map(|&t| spec.envelope.linear_gain.eval(t))
        .collect();
    let off: Vec<f64> = ts.iter().map(|&t| spec.envelope.offset.eval(t)).collect();
    let rate = ms.time_variation_rate(refined.ts()[1] - refined.ts()[0]);
    let drive: Vec<f64> = ts.iter().map(|&t| rate.eval(t).abs()).collect();

    // int_0^t sigma(t, s) ds per refined node; fixed across sweeps
    let s1: Vec<f64> = if sigma.is_zero() {
        vec![0.0; n]
    } else {
        (0..n)
            .map(|j| {
                let seg = &ts[..=j];
                let vals: Vec<f64> = seg.iter().map(|&s| sigma.eval(ts[j], s)).collect();
                trapezoid(seg, &vals)
            })
            .collect()
    };

    let r_from_m = |m: &[f64]| -> Vec<f64> {
        let integrand: Vec<f64> = (0..n)
            .map(|j| (off[j] + m[j] + inner_sigma[j]) * exp_neg[j])
            .collect();
        let cum = CumTable::from_values(ts.clone(), integrand);
        let u0 = linalg::norm(&spec.x0);
        (0..n)
            .map(|j| exp_phi[j] * (u0 + cum.value_at_index(j)))
            .collect()
    };
    let m_from_r = |r: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let mut load = gain[j] * r[j] + off[j] + s1[j];
                if !sigma.is_zero() {
                    let seg = &ts[..=j];
                    let vals: Vec<f64> = seg
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| sigma.eval(ts[j], s) * r[i])
                        .collect();
                    load += trapezoid(seg, &vals);
                }
                drive[j] / gap + (1.0 + l) / gap * load
            })
            .collect()
    };

    let mut m = vec![0.0; n];
    let mut r = r_from_m(&m);
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..PICARD_MAX_ITER {
        let m_new = m_from_r(&r);
        let r_new = r_from_m(&m_new);
        let res = sup_diff(&m, &m_new) + sup_diff(&r, &r_new);
        if !res.is_finite() {
            return Err(Error::NonFinite("Picard iteration".into()));
        }
        residuals.push(res);
        m = m_new;
        r = r_new;
        if res < PICARD_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PicardDiverged {
            residual: *residuals.last().unwrap(),
            iterations: residuals.len(),
        });
    }

    let base = |v: &[f64]| -> Vec<f64> {
        (0..=grid.steps())
            .map(|k| v[refined.base_index(k)])
            .collect()
    };
    let r_nodes = base(&r);
    let m_nodes = base(&m);
    let psi = velocity_envelope_for(&spec.envelope, grid, refine, &r_nodes, Some(&m_nodes))?;
    Ok(SweepingEnvelopes {
        table: BoundTable {
            grid: grid.clone(),
            r: r_nodes,
            psi,
            m: Some(m_nodes),
            factor,
        },
        residuals,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Maximal consecutive subintervals of `[0, T]` on which
/// `int ( |zeta'| + (1+L) psi )` stays below the tube budget, with safety
/// margin [`SPLIT_MARGIN`]. Split points are grid nodes.
pub fn horizon_split(spec: &ProblemSpec, psi: &[f64]) -> Result<Vec<(f64, f64)>> {
    let ms = spec
        .moving_set
        .as_ref()
        .ok_or_else(|| Error::Unsupported("horizon split needs a moving set".into()))?;
    let rho = spec.alpha_far.tube;
    if !(rho > 0.0) {
        return Err(Error::NegativeRadius(rho));
    }
    let l = ms.state_lipschitz();
    if l >= 1.0 {
        return Err(Error::Validation {
            line: 0,
            msg: "L must lie in [0,1)".into(),
        });
    }
    let grid = &spec.grid;
    if psi.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch(
            "psi table does not match the grid".into(),
        ));
    }
    if rho.is_infinite() {
        return Ok(vec![(0.0, grid.horizon())]);
    }
    let budget = SPLIT_MARGIN * rho;
    let rate = ms.time_variation_rate(grid.mean_step() / spec.quad_refine as f64);
    let integrand: Vec<f64> = (0..=grid.steps())
        .map(|k| rate.eval(grid.node(k)).abs() + (1.0 + l) * psi[k])
        .collect();
    let mut pieces = Vec::new();
    let mut start = 0usize;
    let mut acc = 0.0;
    for k in 0..grid.steps() {
        let step = 0.5 * grid.step(k) * (integrand[k] + integrand[k + 1]);
        if step > budget {
            return Err(Error::RhoTooSmallForGrid {
                step_integral: step,
                budget,
            });
        }
        if acc + step > budget * (1.0 + 1e-12) {
            pieces.push((grid.node(start), grid.node(k)));
            start = k;
            acc = 0.0;
        }
        acc += step;
    }
    pieces.push((grid.node(start), grid.horizon()));
    Ok(pieces)
}

/// Per-node envelope compliance of a trajectory.
#[derive(Debug, Clone)]
pub struct ComplianceReport {
    pub state_ok: Vec<bool>,
    pub velocity_ok: Vec<bool>,
    /// Smallest `r(t_k) - ||x_k||` over the nodes (tolerance not included).
    pub worst_state_margin: f64,
    /// Smallest `psi(t_k) - ||v_k||` over the steps.
    pub worst_velocity_margin: f64,
    pub compliant: bool,
}

/// Checks `||x_k|| <= r(t_k) + tol` and `||v_k|| <= psi(t_k) + tol` node by
/// node; both trajectory and table must live on the same grid.
pub fn check_bounds(traj: &Trajectory, table: &BoundTable, tol: f64) -> Result<ComplianceReport> {
    if traj.grid() != &table.grid {
        return Err(Error::GridMismatch(
            "trajectory and bound table grids differ".into(),
        ));
    }
    let mut state_ok = Vec::with_capacity(traj.states().len());
    let mut velocity_ok = Vec::with_capacity(traj.velocities().len());
    let mut worst_state = f64::INFINITY;
    let mut worst_vel = f64::INFINITY;
    for (k, x) in traj.states().iter().enumerate() {
        let margin = table.r[k] - linalg::norm(x);
        worst_state = worst_state.min(margin);
        state_ok.push(margin >= -tol);
    }
    for (k, v) in traj.velocities().iter().enumerate() {
        let margin = table.psi[k] - linalg::norm(v);
        worst_vel = worst_vel.min(margin);
        velocity_ok.push(margin >= -tol);
    }
    let compliant = state_ok.iter().all(|&b| b) && velocity_ok.iter().all(|&b| b);
    Ok(ComplianceReport {
        state_ok,
        velocity_ok,
        worst_state_margin: worst_state,
        worst_velocity_margin: worst_vel,
        compliant,
    })
}

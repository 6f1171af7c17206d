//! Problem model: scalar/bivariate function handles, growth envelopes,
//! set-valued velocity maps, history kernels, and the assembled
//! [`ProblemSpec`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{RefinedGrid, TimeGrid};
use crate::linalg;
use crate::sets::{MovingSet, SetGeometry};

/// Scalar function of time, `t -> f(t)`. Carries a zero flag so integrals of
/// identically-zero coefficients can short-circuit.
#[derive(Clone)]
pub struct ScalarFn {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    zero: bool,
}

impl ScalarFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
        ScalarFn {
            f: Arc::new(f),
            zero: false,
        }
    }

    pub fn constant(v: f64) -> ScalarFn {
        ScalarFn {
            f: Arc::new(move |_| v),
            zero: v == 0.0,
        }
    }

    pub fn zero() -> ScalarFn {
        ScalarFn::constant(0.0)
    }

    /// Piecewise-linear tabulation.
    pub fn from_table(ts: Vec<f64>, vals: Vec<f64>) -> ScalarFn {
        assert_eq!(ts.len(), vals.len());
        assert!(ts.len() >= 2);
        ScalarFn::new(move |t| {
            if t <= ts[0] {
                return vals[0];
            }
            if t >= ts[ts.len() - 1] {
                return vals[vals.len() - 1];
            }
            let j = ts.partition_point(|&x| x <= t) - 1;
            let theta = (t - ts[j]) / (ts[j + 1] - ts[j]);
            vals[j] + theta * (vals[j + 1] - vals[j])
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

impl std::fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ScalarFn(zero={})", self.zero)
    }
}

/// Scalar function on the triangle `{(t, s) : s <= t}`.
#[derive(Clone)]
pub struct BivariateFn {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    zero: bool,
}

impl BivariateFn {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> BivariateFn {
        BivariateFn {
            f: Arc::new(f),
            zero: false,
        }
    }

    pub fn constant(v: f64) -> BivariateFn {
        BivariateFn {
            f: Arc::new(move |_, _| v),
            zero: v == 0.0,
        }
    }

    pub fn zero() -> BivariateFn {
        BivariateFn::constant(0.0)
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        (self.f)(t, s)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

impl std::fmt::Debug for BivariateFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BivariateFn(zero={})", self.zero)
    }
}

/// Radius-indexed family of integrable functions, `(r, t) -> mu_r(t)`;
/// nondecreasing in `r` pointwise.
#[derive(Clone)]
pub struct RadiusFn {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    zero: bool,
}

impl RadiusFn {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> RadiusFn {
        RadiusFn {
            f: Arc::new(f),
            zero: false,
        }
    }

    pub fn constant(v: f64) -> RadiusFn {
        RadiusFn {
            f: Arc::new(move |_, _| v),
            zero: v == 0.0,
        }
    }

    pub fn zero() -> RadiusFn {
        RadiusFn::constant(0.0)
    }

    pub fn eval(&self, radius: f64, t: f64) -> f64 {
        (self.f)(radius, t)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

impl std::fmt::Debug for RadiusFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RadiusFn(zero={})", self.zero)
    }
}

/// Growth and regularity data for one problem instance.
///
/// * `linear_gain`, `offset`: the least-norm growth bound
///   `d(0, F(t,x)) <= linear_gain(t) ||x|| + offset(t)`;
/// * `kernel_growth`: `||g(t,s,x)|| <= kernel_growth(t,s) (1 + ||x||)`;
/// * `kernel_lipschitz`: `(r, t) -> mu_r(t)`, the kernel's Lipschitz
///   modulus in the state on balls of radius `r`;
/// * `compactness_rate`: the noncompactness transfer modulus of `F`;
/// * `one_sided_rate`: the one-sided Lipschitz (monotonicity) rate of `F`,
///   allowed to be negative.
#[derive(Debug, Clone)]
pub struct GrowthEnvelope {
    pub linear_gain: ScalarFn,
    pub offset: ScalarFn,
    pub kernel_growth: BivariateFn,
    pub kernel_lipschitz: RadiusFn,
    pub compactness_rate: ScalarFn,
    pub one_sided_rate: ScalarFn,
}

impl GrowthEnvelope {
    pub fn zero() -> GrowthEnvelope {
        GrowthEnvelope {
            linear_gain: ScalarFn::zero(),
            offset: ScalarFn::zero(),
            kernel_growth: BivariateFn::zero(),
            kernel_lipschitz: RadiusFn::zero(),
            compactness_rate: ScalarFn::zero(),
            one_sided_rate: ScalarFn::zero(),
        }
    }

    /// Nonnegativity of the data that must be nonnegative, checked on a
    /// sampled refinement of the grid (closures cannot be checked globally).
    pub fn validate_sampled(&self, grid: &TimeGrid, refine: usize) -> Result<()> {
        let ref_grid = RefinedGrid::new(grid, refine);
        for &t in ref_grid.ts() {
            if self.linear_gain.eval(t) < 0.0 {
                return Err(Error::Validation {
                    line: 0,
                    msg: format!("c({t}) < 0"),
                });
            }
            if self.offset.eval(t) < 0.0 {
                return Err(Error::Validation {
                    line: 0,
                    msg: format!("d({t}) < 0"),
                });
            }
            if self.compactness_rate.eval(t) < 0.0 {
                return Err(Error::Validation {
                    line: 0,
                    msg: format!("k({t}) < 0"),
                });
            }
            for &s in ref_grid.ts().iter().filter(|&&s| s <= t) {
                if self.kernel_growth.eval(t, s) < 0.0 {
                    return Err(Error::Validation {
                        line: 0,
                        msg: format!("sigma({t},{s}) < 0"),
                    });
                }
            }
            let radii = [0.5, 1.0, 2.0, 4.0];
            for r in radii {
                if self.kernel_lipschitz.eval(r, t) < 0.0 {
                    return Err(Error::Validation {
                        line: 0,
                        msg: format!("mu_{r}({t}) < 0"),
                    });
                }
            }
            for w in radii.windows(2) {
                if self.kernel_lipschitz.eval(w[0], t) > self.kernel_lipschitz.eval(w[1], t) + 1e-12
                {
                    return Err(Error::Validation {
                        line: 0,
                        msg: format!("mu_r({t}) decreases between radii {} and {}", w[0], w[1]),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Vector field writing its value into `out`; used for singleton maps and
/// affine centers.
pub type VecField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Set-valued velocity map `F(t, x)` in one of the supported closed convex
/// representations.
#[derive(Clone)]
pub enum VelocityMap {
    /// `F(t,x) = { field(t,x) }`.
    Singleton(VecField),
    /// `F(t,x) = field(t,x) + S` for a convex set `S`.
    OffsetSet { center: VecField, set: SetGeometry },
    /// Constant box of admissible velocities.
    VelocityBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl VelocityMap {
    pub fn zero(dim: usize) -> VelocityMap {
        VelocityMap::Singleton(Arc::new(move |_, _, out| {
            for o in out.iter_mut().take(dim) {
                *o = 0.0;
            }
        }))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            VelocityMap::Singleton(_) => Ok(()),
            VelocityMap::OffsetSet { set, .. } => {
                if !set.is_convex() {
                    return Err(Error::Unsupported("offset set must be convex".into()));
                }
                set.validate(dim)
            }
            VelocityMap::VelocityBox { lo, hi } => {
                if lo.len() != dim || hi.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: lo.len(),
                    });
                }
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::Unsupported("velocity box with lo > hi".into()));
                }
                Ok(())
            }
        }
    }
}

impl std::fmt::Debug for VelocityMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VelocityMap::Singleton(_) => write!(f, "VelocityMap::Singleton"),
            VelocityMap::OffsetSet { set, .. } => write!(f, "VelocityMap::OffsetSet({set:?})"),
            VelocityMap::VelocityBox { lo, hi } => {
                write!(f, "VelocityMap::VelocityBox({lo:?}, {hi:?})")
            }
        }
    }
}

/// History kernel `(t, s, x, out)`; the controlled variant also receives the
/// control value `u(s)`.
pub type KernelField = Arc<dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ControlledKernelField = Arc<dyn Fn(f64, f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Kernel {
    Zero,
    Plain(KernelField),
    Controlled(ControlledKernelField),
}

impl Kernel {
    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Zero => write!(f, "Kernel::Zero"),
            Kernel::Plain(_) => write!(f, "Kernel::Plain"),
            Kernel::Controlled(_) => write!(f, "Kernel::Controlled"),
        }
    }
}

/// Piecewise-constant control on a grid: `values[k]` applies on
/// `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
}

impl ControlGrid {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<ControlGrid> {
        if values.len() != grid.steps() {
            return Err(Error::GridMismatch(format!(
                "{} control values against {} steps",
                values.len(),
                grid.steps()
            )));
        }
        Ok(ControlGrid { grid, values })
    }

    pub fn constant(grid: TimeGrid, u: Vec<f64>) -> ControlGrid {
        let n = grid.steps();
        ControlGrid {
            grid,
            values: vec![u; n],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.values
    }

    pub fn control_dim(&self) -> usize {
        self.values[0].len()
    }

    /// Left-constant lookup: the value on the segment containing `s`,
    /// clamped to the horizon.
    pub fn value_at(&self, s: f64) -> &[f64] {
        let clamped = s.clamp(0.0, self.grid.horizon());
        let k = self.grid.segment_of(clamped).unwrap_or(0);
        &self.values[k]
    }
}

/// Far-parameter data `(alpha, rho)`; `rho` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFar {
    pub alpha: f64,
    pub tube: f64,
}

impl Default for AlphaFar {
    fn default() -> Self {
        AlphaFar {
            alpha: 1.0,
            tube: f64::INFINITY,
        }
    }
}

/// The data of one inclusion instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub velocity_map: VelocityMap,
    pub kernel: Kernel,
    pub moving_set: Option<MovingSet>,
    pub envelope: GrowthEnvelope,
    pub alpha_far: AlphaFar,
    /// Trapezoid refinement factor for envelope integrals.
    pub quad_refine: usize,
}

impl ProblemSpec {
    pub fn new(
        grid: TimeGrid,
        x0: Vec<f64>,
        velocity_map: VelocityMap,
        kernel: Kernel,
    ) -> ProblemSpec {
        ProblemSpec {
            grid,
            x0,
            velocity_map,
            kernel,
            moving_set: None,
            envelope: GrowthEnvelope::zero(),
            alpha_far: AlphaFar::default(),
            quad_refine: 4,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Eager validation of the assembled instance.
    pub fn validate(&self) -> Result<()> {
        if !linalg::all_finite(&self.x0) {
            return Err(Error::NonFinite("initial state".into()));
        }
        self.velocity_map.validate(self.dim())?;
        if let Some(ms) = &self.moving_set {
            let d0 = ms.at(0.0, &self.x0).distance(&self.x0);
            if d0 > 1e-9 {
                return Err(Error::Validation {
                    line: 0,
                    msg: format!("initial state infeasible: d(x0, C(0, x0)) = {d0:e}"),
                });
            }
            if !(self.alpha_far.alpha > 0.0 && self.alpha_far.alpha <= 1.0) {
                return Err(Error::Validation {
                    line: 0,
                    msg: "alpha0 must lie in (0, 1]".into(),
                });
            }
            let l = ms.state_lipschitz();
            if self.alpha_far.alpha * self.alpha_far.alpha <= l {
                return Err(Error::AlphaFarViolated {
                    alpha: self.alpha_far.alpha,
                    lipschitz: l,
                });
            }
        }
        self.envelope
            .validate_sampled(&self.grid, self.quad_refine)?;
        Ok(())
    }

    /// Same instance on a uniform grid with `n` steps.
    pub fn with_steps(&self, n: usize) -> Result<ProblemSpec> {
        let mut spec = self.clone();
        spec.grid = TimeGrid::uniform(self.grid.horizon(), n)?;
        Ok(spec)
    }
}

/// History integral `int_0^{t_k} g(t_k, s, x(s)) ds` by composite trapezoid
/// over the trajectory's stored nodes; zero at `k = 0`. When the kernel is
/// controlled, `control` supplies `u(s)`.
pub fn history_integral(
    traj_states: &[Vec<f64>],
    grid: &TimeGrid,
    kernel: &Kernel,
    k: usize,
    control: Option<&ControlGrid>,
) -> Result<Vec<f64>> {
    let dim = traj_states[0].len();
    let mut out = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    history_integral_into(traj_states, grid, kernel, k, control, &mut out, &mut buf)?;
    Ok(out)
}

/// Allocation-free form of [`history_integral`]; `out` receives the result
/// and `buf` is scratch space of the same dimension.
pub fn history_integral_into(
    traj_states: &[Vec<f64>],
    grid: &TimeGrid,
    kernel: &Kernel,
    k: usize,
    control: Option<&ControlGrid>,
    out: &mut [f64],
    buf: &mut [f64],
) -> Result<()> {
    out.fill(0.0);
    if k == 0 || kernel.is_zero() {
        return Ok(());
    }
    if k >= traj_states.len() || k > grid.steps() {
        return Err(Error::GridMismatch(format!("history node {k} beyond grid")));
    }
    let t_k = grid.node(k);
    for i in 0..=k {
        // trapezoid weights over the node range [t_0, t_k]
        let w = if i == 0 {
            0.5 * grid.step(0)
        } else if i == k {
            0.5 * grid.step(k - 1)
        } else {
            0.5 * (grid.step(i - 1) + grid.step(i))
        };
        let s = grid.node(i);
        match kernel {
            Kernel::Zero => unreachable!(),
            Kernel::Plain(g) => g(t_k, s, &traj_states[i], buf),
            Kernel::Controlled(g) => {
                let u = control.ok_or_else(|| {
                    Error::Unsupported("controlled kernel evaluated without a control".into())
                })?;
                let ui = if i < u.values().len() {
                    &u.values()[i]
                } else {
                    &u.values()[u.values().len() - 1]
                };
                g(t_k, s, &traj_states[i], ui, buf)
            }
        }
        linalg::add_scaled(out, w, buf);
    }
    if !linalg::all_finite(out) {
        return Err(Error::NonFinite("history integral".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn constant_traj(grid: &TimeGrid, x: f64) -> Vec<Vec<f64>> {
        (0..=grid.steps()).map(|_| vec![x]).collect()
    }

    #[test]
    fn history_zero_kernel() {
        let g = make_grid(1.0, 4).unwrap();
        let states = constant_traj(&g, 2.0);
        let h = history_integral(&states, &g, &Kernel::Zero, 4, None).unwrap();
        assert_eq!(h, vec![0.0]);
    }

    #[test]
    fn history_constant_kernel_exact() {
        // g == 1: the trapezoid rule reproduces t_k exactly
        let g = make_grid(1.0, 4).unwrap();
        let states = constant_traj(&g, 0.0);
        let kernel = Kernel::Plain(Arc::new(|_, _, _x, out: &mut [f64]| out[0] = 1.0));
        let h = history_integral(&states, &g, &kernel, 3, None).unwrap();
        assert!((h[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn history_linear_kernel_exact() {
        // g(t,s,x) = s: integral to 1 is 1/2, trapezoid exact on linear data
        let g = make_grid(1.0, 4).unwrap();
        let states = constant_traj(&g, 0.0);
        let kernel = Kernel::Plain(Arc::new(|_, s, _x, out: &mut [f64]| out[0] = s));
        let h = history_integral(&states, &g, &kernel, 4, None).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn history_zero_at_first_node() {
        let g = make_grid(1.0, 4).unwrap();
        let states = constant_traj(&g, 5.0);
        let kernel = Kernel::Plain(Arc::new(|_, _, _x, out: &mut [f64]| out[0] = 7.0));
        let h = history_integral(&states, &g, &kernel, 0, None).unwrap();
        assert_eq!(h, vec![0.0]);
    }

    #[test]
    fn history_additive_over_kernel_sum() {
        let g = make_grid(2.0, 8).unwrap();
        let states: Vec<Vec<f64>> = (0..=8).map(|k| vec![(k as f64 * 0.3).sin()]).collect();
        let k1 = Kernel::Plain(Arc::new(|t, s, x: &[f64], out: &mut [f64]| {
            out[0] = t * x[0] + s
        }));
        let k2 = Kernel::Plain(Arc::new(|_, s, x: &[f64], out: &mut [f64]| {
            out[0] = s * s - x[0]
        }));
        let ksum = Kernel::Plain(Arc::new(|t, s, x: &[f64], out: &mut [f64]| {
            out[0] = (t * x[0] + s) + (s * s - x[0]);
        }));
        for k in 0..=8 {
            let a = history_integral(&states, &g, &k1, k, None).unwrap()[0];
            let b = history_integral(&states, &g, &k2, k, None).unwrap()[0];
            let c = history_integral(&states, &g, &ksum, k, None).unwrap()[0];
            assert!((a + b - c).abs() < 1e-13);
        }
    }

    #[test]
    fn history_nonfinite_propagates() {
        let g = make_grid(1.0, 2).unwrap();
        let states = constant_traj(&g, 0.0);
        let kernel = Kernel::Plain(Arc::new(|_, _, _x, out: &mut [f64]| out[0] = f64::NAN));
        assert!(matches!(
            history_integral(&states, &g, &kernel, 2, None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn spec_validates_feasible_start() {
        use crate::sets::VariationKind;
        let g = make_grid(1.0, 4).unwrap();
        let mut spec = ProblemSpec::new(g, vec![0.5], VelocityMap::zero(1), Kernel::Zero);
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
        // x0 = 0.5 >= 0 is feasible at t = 0
        spec.validate().unwrap();
        spec.x0 = vec![-0.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_rejects_alpha_below_lipschitz() {
        use crate::sets::VariationKind;
        let g = make_grid(1.0, 4).unwrap();
        let mut spec = ProblemSpec::new(g, vec![1.0], VelocityMap::zero(1), Kernel::Zero);
        spec.moving_set = Some(
            MovingSet::new(
                Arc::new(|_, _: &[f64]| SetGeometry::Halfspace {
                    normal: vec![-1.0],
                    offset: 0.0,
                }),
                ScalarFn::zero(),
                None,
                0.5,
                VariationKind::StateDependent,
            )
            .unwrap(),
        );
        spec.alpha_far = AlphaFar {
            alpha: 0.6,
            tube: 1.0,
        };
        assert!(matches!(
            spec.validate(),
            Err(Error::AlphaFarViolated { .. })
        ));
    }

    #[test]
    fn control_grid_lookup_is_left_constant() {
        let g = make_grid(1.0, 4).unwrap();
        let u = ControlGrid::new(g, vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(u.value_at(0.0), &[1.0]);
        assert_eq!(u.value_at(0.25), &[2.0]);
        assert_eq!(u.value_at(0.3), &[2.0]);
        assert_eq!(u.value_at(1.0), &[4.0]);
    }
}

//! Constraint-set geometry: distances, nearest-point projections, distance
//! subgradients, far-parameter estimation, and moving-set families.
//!
//! Every bundled variant is proximally reachable: projections exist and are
//! computed either in closed form or, for halfspace intersections, by
//! Dykstra's alternating scheme. Nonconvex tie-breaks pick the
//! lexicographically largest candidate so runs are reproducible.
//!
//! Subsmoothness of the bundled variants is by construction: halfspaces,
//! boxes, balls and polyhedra are convex; the complement of an open ball of
//! radius `R` is prox-regular with constant `R`; finite unions are handled
//! member-wise. Compactness-style hypotheses are automatic in finite
//! dimension and are not probed numerically.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::ScalarFn;

/// Points closer to the boundary than this are treated as boundary points
/// when selecting subgradients.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Relative tolerance deciding when two near-nearest candidates count as a
/// tie in [`alpha_far_estimate`].
pub const NEAR_TIE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum SetGeometry {
    /// `{ x : <normal, x> <= offset }`
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// Axis-aligned box `[lo, hi]`.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Finite intersection of halfspaces.
    Polyhedron {
        faces: Vec<(Vec<f64>, f64)>,
    },
    /// `{ x : ||x - center|| >= radius }`; prox-regular with constant `radius`.
    BallComplement {
        center: Vec<f64>,
        radius: f64,
    },
    /// Finite union of convex members.
    Union(Vec<SetGeometry>),
}

impl SetGeometry {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SetGeometry::Halfspace { normal, .. } => {
                expect_dim(normal, dim)?;
                if linalg::norm(normal) == 0.0 {
                    return Err(Error::Unsupported("halfspace with zero normal".into()));
                }
            }
            SetGeometry::Box { lo, hi } => {
                expect_dim(lo, dim)?;
                expect_dim(hi, dim)?;
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::Unsupported("box with lo > hi".into()));
                }
            }
            SetGeometry::Ball { center, radius }
            | SetGeometry::BallComplement { center, radius } => {
                expect_dim(center, dim)?;
                if !(*radius > 0.0) {
                    return Err(Error::NegativeRadius(*radius));
                }
            }
            SetGeometry::Polyhedron { faces } => {
                if faces.is_empty() {
                    return Err(Error::Unsupported("polyhedron with no faces".into()));
                }
                for (a, _) in faces {
                    expect_dim(a, dim)?;
                    if linalg::norm(a) == 0.0 {
                        return Err(Error::Unsupported(
                            "polyhedron face with zero normal".into(),
                        ));
                    }
                }
            }
            SetGeometry::Union(members) => {
                if members.is_empty() {
                    return Err(Error::Unsupported("union with no members".into()));
                }
                for m in members {
                    m.validate(dim)?;
                    if matches!(
                        m,
                        SetGeometry::Union(_) | SetGeometry::BallComplement { .. }
                    ) {
                        return Err(Error::Unsupported("union members must be convex".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_convex(&self) -> bool {
        !matches!(
            self,
            SetGeometry::BallComplement { .. } | SetGeometry::Union(_)
        )
    }

    /// Ambient dimension read off the stored data.
    pub fn dim_hint(&self) -> usize {
        match self {
            SetGeometry::Halfspace { normal, .. } => normal.len(),
            SetGeometry::Box { lo, .. } => lo.len(),
            SetGeometry::Ball { center, .. } | SetGeometry::BallComplement { center, .. } => {
                center.len()
            }
            SetGeometry::Polyhedron { faces } => faces.first().map_or(0, |(a, _)| a.len()),
            SetGeometry::Union(members) => members.first().map_or(0, |m| m.dim_hint()),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            SetGeometry::Halfspace { normal, offset } => {
                linalg::dot(normal, x) <= offset + tol * linalg::norm(normal)
            }
            SetGeometry::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol),
            SetGeometry::Ball { center, radius } => linalg::dist(x, center) <= radius + tol,
            SetGeometry::Polyhedron { faces } => faces
                .iter()
                .all(|(a, b)| linalg::dot(a, x) <= b + tol * linalg::norm(a)),
            SetGeometry::BallComplement { center, radius } => {
                linalg::dist(x, center) >= radius - tol
            }
            SetGeometry::Union(members) => members.iter().any(|m| m.contains(x, tol)),
        }
    }

    /// `d(x, S) = inf { ||x - y|| : y in S }`.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            SetGeometry::Halfspace { normal, offset } => {
                let excess = linalg::dot(normal, x) - offset;
                (excess / linalg::norm(normal)).max(0.0)
            }
            SetGeometry::Box { lo, hi } => {
                let sq: f64 = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(v, (a, b))| {
                        let c = v.clamp(*a, *b);
                        (v - c) * (v - c)
                    })
                    .sum();
                sq.sqrt()
            }
            SetGeometry::Ball { center, radius } => (linalg::dist(x, center) - radius).max(0.0),
            SetGeometry::BallComplement { center, radius } => {
                (radius - linalg::dist(x, center)).max(0.0)
            }
            SetGeometry::Polyhedron { .. } => linalg::dist(x, &self.project(x)),
            SetGeometry::Union(members) => members
                .iter()
                .map(|m| m.distance(x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// One nearest point of `S`. Ties in nonconvex variants resolve to the
    /// lexicographically largest candidate.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SetGeometry::Halfspace { normal, offset } => {
                let excess = linalg::dot(normal, x) - offset;
                if excess <= 0.0 {
                    x.to_vec()
                } else {
                    let nn = linalg::norm_sq(normal);
                    x.iter()
                        .zip(normal)
                        .map(|(v, a)| v - excess / nn * a)
                        .collect()
                }
            }
            SetGeometry::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| v.clamp(*a, *b))
                .collect(),
            SetGeometry::Ball { center, radius } => {
                let d = linalg::dist(x, center);
                if d <= *radius {
                    x.to_vec()
                } else {
                    center
                        .iter()
                        .zip(x)
                        .map(|(c, v)| c + (v - c) * radius / d)
                        .collect()
                }
            }
            SetGeometry::BallComplement { center, radius } => {
                let d = linalg::dist(x, center);
                if d >= *radius {
                    x.to_vec()
                } else if d > 0.0 {
                    center
                        .iter()
                        .zip(x)
                        .map(|(c, v)| c + (v - c) * radius / d)
                        .collect()
                } else {
                    // x is the center: every sphere point is nearest; the
                    // lexicographically largest is center + radius * e1.
                    let mut p = center.clone();
                    p[0] += radius;
                    p
                }
            }
            SetGeometry::Polyhedron { faces } => {
                if self.contains(x, 0.0) {
                    return x.to_vec();
                }
                dykstra_halfspaces(x, faces)
            }
            SetGeometry::Union(members) => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for m in members {
                    let p = m.project(x);
                    let d = linalg::dist(x, &p);
                    best = match best {
                        None => Some((d, p)),
                        Some((bd, bp)) => {
                            let tie = (d - bd).abs() <= 1e-12 * (1.0 + bd);
                            if (tie && linalg::lex_greater(&p, &bp)) || (!tie && d < bd) {
                                Some((d, p))
                            } else {
                                Some((bd, bp))
                            }
                        }
                    };
                }
                best.unwrap().1
            }
        }
    }

    /// Unit element of the Clarke subdifferential of the distance function.
    ///
    /// Outside the set this is `(x - proj) / d`; on the boundary it is the
    /// analytic outward unit normal of the active variant. Interior points
    /// are rejected.
    pub fn distance_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.distance(x);
        if d > BOUNDARY_TOL {
            let p = self.project(x);
            return Ok(linalg::scale(&linalg::sub(x, &p), 1.0 / d));
        }
        self.boundary_normal(x)
    }

    /// Analytic outward unit normal for a boundary point.
    fn boundary_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let tol = BOUNDARY_TOL;
        match self {
            SetGeometry::Halfspace { normal, offset } => {
                let slack = offset - linalg::dot(normal, x);
                if slack.abs() <= tol * (1.0 + linalg::norm(normal)) {
                    Ok(linalg::scale(normal, 1.0 / linalg::norm(normal)))
                } else {
                    Err(Error::NoSubgradient)
                }
            }
            SetGeometry::Box { lo, hi } => {
                let mut n = vec![0.0; x.len()];
                let mut active = false;
                for i in 0..x.len() {
                    if (x[i] - hi[i]).abs() <= tol {
                        n[i] += 1.0;
                        active = true;
                    }
                    if (x[i] - lo[i]).abs() <= tol {
                        n[i] -= 1.0;
                        active = true;
                    }
                }
                let nn = linalg::norm(&n);
                if active && nn > 0.0 {
                    Ok(linalg::scale(&n, 1.0 / nn))
                } else {
                    Err(Error::NoSubgradient)
                }
            }
            SetGeometry::Ball { center, radius } => {
                let d = linalg::dist(x, center);
                if (d - radius).abs() <= tol {
                    Ok(linalg::scale(&linalg::sub(x, center), 1.0 / d))
                } else {
                    Err(Error::NoSubgradient)
                }
            }
            SetGeometry::BallComplement { center, radius } => {
                let d = linalg::dist(x, center);
                if (d - radius).abs() <= tol {
                    // outward for the complement points toward the ball center
                    Ok(linalg::scale(&linalg::sub(center, x), 1.0 / d))
                } else {
                    Err(Error::NoSubgradient)
                }
            }
            SetGeometry::Polyhedron { faces } => {
                let mut n = vec![0.0; x.len()];
                let mut active = false;
                for (a, b) in faces {
                    let na = linalg::norm(a);
                    if (linalg::dot(a, x) - b).abs() <= tol * (1.0 + na) {
                        linalg::add_scaled(&mut n, 1.0 / na, a);
                        active = true;
                    }
                }
                let nn = linalg::norm(&n);
                if active && nn > 0.0 {
                    Ok(linalg::scale(&n, 1.0 / nn))
                } else {
                    Err(Error::NoSubgradient)
                }
            }
            SetGeometry::Union(members) => {
                // delegate to the first member carrying x on its boundary;
                // x interior to any member means no nonzero subgradient.
                for m in members {
                    if m.contains(x, BOUNDARY_TOL) {
                        if let Ok(n) = m.boundary_normal(x) {
                            return Ok(n);
                        }
                        return Err(Error::NoSubgradient);
                    }
                }
                Err(Error::NoSubgradient)
            }
        }
    }

    /// Nearest-point candidates within relative tolerance `rel` of the
    /// minimal distance. Convex variants always return a single candidate;
    /// unions return one candidate per near-optimal member.
    pub fn candidate_projections(&self, x: &[f64], rel: f64) -> Vec<Vec<f64>> {
        match self {
            SetGeometry::Union(members) => {
                let pairs: Vec<(f64, Vec<f64>)> = members
                    .iter()
                    .map(|m| {
                        let p = m.project(x);
                        (linalg::dist(x, &p), p)
                    })
                    .collect();
                let dmin = pairs.iter().map(|(d, _)| *d).fold(f64::INFINITY, f64::min);
                pairs
                    .into_iter()
                    .filter(|(d, _)| *d <= dmin * (1.0 + rel))
                    .map(|(_, p)| p)
                    .collect()
            }
            _ => vec![self.project(x)],
        }
    }
}

fn expect_dim(v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    Ok(())
}

/// Dykstra's alternating projections for an intersection of halfspaces.
fn dykstra_halfspaces(x: &[f64], faces: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut z = x.to_vec();
    let mut corrections = vec![vec![0.0; x.len()]; faces.len()];
    for _ in 0..20_000 {
        let mut moved: f64 = 0.0;
        for (slot, (a, b)) in faces.iter().enumerate() {
            let y: Vec<f64> = z
                .iter()
                .zip(&corrections[slot])
                .map(|(u, c)| u + c)
                .collect();
            let excess = linalg::dot(a, &y) - b;
            let z_new: Vec<f64> = if excess <= 0.0 {
                y.clone()
            } else {
                let nn = linalg::norm_sq(a);
                y.iter()
                    .zip(a)
                    .map(|(u, ai)| u - excess / nn * ai)
                    .collect()
            };
            for i in 0..z.len() {
                corrections[slot][i] = y[i] - z_new[i];
                moved = moved.max((z_new[i] - z[i]).abs());
            }
            z = z_new;
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Minimum-norm point of the convex hull of finitely many points
/// (Frank-Wolfe with exact line search).
pub fn min_norm_in_hull(points: &[Vec<f64>]) -> Vec<f64> {
    assert!(!points.is_empty());
    let mut p = points[0].clone();
    for _ in 0..512 {
        let mut best = 0;
        let mut best_ip = f64::INFINITY;
        for (i, v) in points.iter().enumerate() {
            let ip = linalg::dot(&p, v);
            if ip < best_ip {
                best_ip = ip;
                best = i;
            }
        }
        let v = &points[best];
        let gap = linalg::norm_sq(&p) - best_ip;
        if gap <= 1e-16 {
            break;
        }
        let diff = linalg::sub(v, &p);
        let denom = linalg::norm_sq(&diff);
        if denom == 0.0 {
            break;
        }
        let step = (-linalg::dot(&p, &diff) / denom).clamp(0.0, 1.0);
        linalg::add_scaled(&mut p, step, &diff);
    }
    p
}

/// Sampled estimate of the far parameter: the infimum over tube samples of
/// `d(0, subdifferential of the distance function)`.
#[derive(Debug, Clone)]
pub struct AlphaFarReport {
    pub estimate: f64,
    /// Samples that actually fell in the tube `0 < d < rho`.
    pub used: usize,
    pub skipped: usize,
}

/// Estimates the far parameter of `set` on the open tube of width `rho` from
/// a sampled point cloud. Samples outside the tube are skipped. Points with
/// several near-nearest candidates contribute the norm of the minimum-norm
/// point of the hull of their unit directions.
///
/// The estimate is over sampled points only; it never certifies the tube
/// infimum.
pub fn alpha_far_estimate(
    set: &SetGeometry,
    rho: f64,
    samples: &[Vec<f64>],
) -> Result<AlphaFarReport> {
    if !(rho > 0.0) {
        return Err(Error::NegativeRadius(rho));
    }
    let mut best = f64::INFINITY;
    let mut used = 0;
    let mut skipped = 0;
    for x in samples {
        let d = set.distance(x);
        if d <= BOUNDARY_TOL || d >= rho {
            skipped += 1;
            continue;
        }
        used += 1;
        let cands = set.candidate_projections(x, NEAR_TIE_REL_TOL);
        let value = if cands.len() == 1 {
            1.0
        } else {
            let dirs: Vec<Vec<f64>> = cands
                .iter()
                .map(|p| {
                    let dp = linalg::dist(x, p);
                    linalg::scale(&linalg::sub(x, p), 1.0 / dp)
                })
                .collect();
            linalg::norm(&min_norm_in_hull(&dirs))
        };
        best = best.min(value);
    }
    if used == 0 {
        return Err(Error::EmptyTubeSample);
    }
    Ok(AlphaFarReport {
        estimate: best.clamp(0.0, 1.0),
        used,
        skipped,
    })
}

/// Deterministic tie candidates for union variants: for every pair of
/// members, bisects the distance difference along the segment joining their
/// nearest points to the origin, landing on a point equidistant to both.
/// Random tube sampling alone almost surely misses these measure-zero sets.
pub fn union_tie_seeds(set: &SetGeometry) -> Vec<Vec<f64>> {
    let SetGeometry::Union(members) = set else {
        return Vec::new();
    };
    let origin = vec![0.0; set.dim_hint()];
    let mut seeds = Vec::new();
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let a = members[i].project(&origin);
            let b = members[j].project(&origin);
            let gap = |lam: f64| -> (Vec<f64>, f64) {
                let x: Vec<f64> = a
                    .iter()
                    .zip(&b)
                    .map(|(ai, bi)| ai + lam * (bi - ai))
                    .collect();
                let g = members[i].distance(&x) - members[j].distance(&x);
                (x, g)
            };
            let (_, g0) = gap(0.0);
            let (_, g1) = gap(1.0);
            if g0 * g1 > 0.0 {
                continue;
            }
            let (mut lo, mut hi) = if g0 <= 0.0 { (0.0, 1.0) } else { (1.0, 0.0) };
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let (_, g) = gap(mid);
                if g <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (x, _) = gap(0.5 * (lo + hi));
            seeds.push(x);
        }
    }
    seeds
}

// ---------------------------------------------------------------------------
// Moving sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationKind {
    /// `C(t, x)` with Lipschitz state dependence of modulus `L`.
    StateDependent,
    /// `C(t)`; the state argument is ignored.
    TimeOnly,
}

pub type SetFamily = Arc<dyn Fn(f64, &[f64]) -> SetGeometry + Send + Sync>;

/// A moving constraint family `(t, x) -> C(t, x)` together with its declared
/// time-variation function and state Lipschitz modulus.
#[derive(Clone)]
pub struct MovingSet {
    family: SetFamily,
    time_variation: ScalarFn,
    time_variation_rate: Option<ScalarFn>,
    state_lipschitz: f64,
    kind: VariationKind,
}

impl std::fmt::Debug for MovingSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MovingSet")
            .field("state_lipschitz", &self.state_lipschitz)
            .field("kind", &self.kind)
            .finish()
    }
}

impl MovingSet {
    pub fn new(
        family: SetFamily,
        time_variation: ScalarFn,
        time_variation_rate: Option<ScalarFn>,
        state_lipschitz: f64,
        kind: VariationKind,
    ) -> Result<MovingSet> {
        if kind == VariationKind::StateDependent && !(0.0..1.0).contains(&state_lipschitz) {
            return Err(Error::Validation {
                line: 0,
                msg: "L must lie in [0,1)".into(),
            });
        }
        if state_lipschitz < 0.0 {
            return Err(Error::Validation {
                line: 0,
                msg: "L must lie in [0,1)".into(),
            });
        }
        Ok(MovingSet {
            family,
            time_variation,
            time_variation_rate,
            state_lipschitz,
            kind,
        })
    }

    pub fn at(&self, t: f64, x: &[f64]) -> SetGeometry {
        (self.family)(t, x)
    }

    pub fn state_lipschitz(&self) -> f64 {
        self.state_lipschitz
    }

    pub fn kind(&self) -> VariationKind {
        self.kind
    }

    pub fn time_variation(&self) -> &ScalarFn {
        &self.time_variation
    }

    /// Derivative of the time-variation function. Falls back to a forward
    /// difference with step `fd_step` when no derivative was supplied.
    pub fn time_variation_rate(&self, fd_step: f64) -> ScalarFn {
        match &self.time_variation_rate {
            Some(r) => r.clone(),
            None => {
                let zeta = self.time_variation.clone();
                ScalarFn::new(move |t| (zeta.eval(t + fd_step) - zeta.eval(t)) / fd_step)
            }
        }
    }
}

/// Result of probing declared `(zeta, L)` data against sampled distance
/// variations.
#[derive(Debug, Clone)]
pub struct LipschitzReport {
    /// Worst observed `|d variation| / declared bound`.
    pub worst_ratio: f64,
    /// True when some sampled variation exceeded the declared bound.
    pub flagged: bool,
    pub pairs_checked: usize,
}

/// Checks `|d(z, C(t,x)) - d(z, C(s,y))| <= |zeta(t)-zeta(s)| + L ||x-y||`
/// on all probe pairs, evaluating each pair at both probes' test points.
pub fn lipschitz_probe(ms: &MovingSet, probes: &[(f64, Vec<f64>, Vec<f64>)]) -> LipschitzReport {
    let mut worst: f64 = 0.0;
    let mut flagged = false;
    let mut pairs = 0;
    for i in 0..probes.len() {
        for j in (i + 1)..probes.len() {
            let (ti, xi, zi) = &probes[i];
            let (tj, xj, zj) = &probes[j];
            let ci = ms.at(*ti, xi);
            let cj = ms.at(*tj, xj);
            let declared = (ms.time_variation.eval(*ti) - ms.time_variation.eval(*tj)).abs()
                + ms.state_lipschitz * linalg::dist(xi, xj);
            for z in [zi, zj] {
                let variation = (ci.distance(z) - cj.distance(z)).abs();
                pairs += 1;
                if declared > 0.0 {
                    worst = worst.max(variation / declared);
                    if variation > declared * (1.0 + 1e-9) {
                        flagged = true;
                    }
                } else if variation > 1e-12 {
                    worst = f64::INFINITY;
                    flagged = true;
                }
            }
        }
    }
    LipschitzReport {
        worst_ratio: worst,
        flagged,
        pairs_checked: pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn two_interval_union() -> SetGeometry {
        SetGeometry::Union(vec![
            SetGeometry::Box {
                lo: vec![-2.0],
                hi: vec![-1.0],
            },
            SetGeometry::Box {
                lo: vec![1.0],
                hi: vec![2.0],
            },
        ])
    }

    #[test]
    fn distance_examples() {
        let ball = SetGeometry::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(ball.distance(&[0.0, 0.0]), 0.0);

        let hs = SetGeometry::Halfspace {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        };
        assert_eq!(hs.distance(&[2.0, 0.0]), 2.0);

        // complement of the unit ball: nearest sphere point from the center
        let comp = SetGeometry::BallComplement {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(comp.distance(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn projection_examples() {
        let ball = SetGeometry::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(ball.project(&[0.5, 0.0]), vec![0.5, 0.0]);

        let hs = SetGeometry::Halfspace {
            normal: vec![2.0, 0.0],
            offset: 2.0,
        };
        // closed form: x - (<a,x> - b)/||a||^2 a
        assert_eq!(hs.project(&[3.0, 1.0]), vec![1.0, 1.0]);

        // equidistant candidates resolve to the lexicographically largest
        let u = two_interval_union();
        assert_eq!(u.project(&[0.0]), vec![1.0]);
    }

    #[test]
    fn subgradient_examples() {
        let ball = SetGeometry::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(
            ball.distance_subgradient(&[2.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );

        let comp = SetGeometry::BallComplement {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let g = comp.distance_subgradient(&[0.5, 0.0]).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);

        let hs = SetGeometry::Halfspace {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        };
        assert_eq!(
            hs.distance_subgradient(&[3.0, 4.0]).unwrap(),
            vec![1.0, 0.0]
        );

        // interior points are rejected
        assert!(matches!(
            ball.distance_subgradient(&[0.1, 0.0]),
            Err(Error::NoSubgradient)
        ));
    }

    #[test]
    fn subgradient_consistency_step_back() {
        // stepping back along the subgradient lands on the set
        let mut rng = SplitMix64::new(11);
        let variants: Vec<SetGeometry> = vec![
            SetGeometry::Ball {
                center: vec![0.5, -0.25, 0.0],
                radius: 0.8,
            },
            SetGeometry::Box {
                lo: vec![-1.0, -1.0, -1.0],
                hi: vec![1.0, 0.5, 2.0],
            },
            SetGeometry::Halfspace {
                normal: vec![1.0, 2.0, -1.0],
                offset: 0.5,
            },
            SetGeometry::BallComplement {
                center: vec![0.0, 0.0, 0.0],
                radius: 1.0,
            },
            SetGeometry::Polyhedron {
                faces: vec![
                    (vec![1.0, 0.0, 0.0], 0.5),
                    (vec![0.0, 1.0, 0.0], 0.5),
                    (vec![-1.0, -1.0, 0.0], 0.5),
                ],
            },
            two_interval_union_3d(),
        ];
        for set in &variants {
            for _ in 0..200 {
                let x = rng.vector(3, -3.0, 3.0);
                let d = set.distance(&x);
                if d <= BOUNDARY_TOL {
                    continue;
                }
                let g = set.distance_subgradient(&x).unwrap();
                assert!((linalg::norm(&g) - 1.0).abs() < 1e-12);
                let back: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - d * gi).collect();
                assert!(set.distance(&back) <= 1e-9, "variant {set:?} x {x:?}");
            }
        }
    }

    fn two_interval_union_3d() -> SetGeometry {
        SetGeometry::Union(vec![
            SetGeometry::Box {
                lo: vec![-2.0, -2.0, -2.0],
                hi: vec![-1.0, 2.0, 2.0],
            },
            SetGeometry::Box {
                lo: vec![1.0, -2.0, -2.0],
                hi: vec![2.0, 2.0, 2.0],
            },
        ])
    }

    #[test]
    fn polyhedron_projection_matches_closed_forms() {
        // orthogonal faces reduce to clamping
        let quadrant = SetGeometry::Polyhedron {
            faces: vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], 1.0)],
        };
        let p = quadrant.project(&[2.0, 3.0]);
        assert!(linalg::dist(&p, &[1.0, 1.0]) <= 1e-12);
        let p = quadrant.project(&[2.0, 0.0]);
        assert!(linalg::dist(&p, &[1.0, 0.0]) <= 1e-12);

        // cone x <= -|y|: the nearest point to (1, 0) is the vertex
        let cone = SetGeometry::Polyhedron {
            faces: vec![(vec![1.0, 1.0], 0.0), (vec![1.0, -1.0], 0.0)],
        };
        let p = cone.project(&[1.0, 0.0]);
        assert!(linalg::norm(&p) <= 1e-12);
        assert!((cone.distance(&[1.0, 0.0]) - 1.0).abs() <= 1e-12);

        // skewed active pair: vertex of x + 2y = 1 and 3x - y = 1/2
        let skew = SetGeometry::Polyhedron {
            faces: vec![(vec![1.0, 2.0], 1.0), (vec![3.0, -1.0], 0.5)],
        };
        let p = skew.project(&[2.0, 2.0]);
        assert!(linalg::dist(&p, &[2.0 / 7.0, 5.0 / 14.0]) <= 1e-12);
    }

    #[test]
    fn firm_nonexpansiveness_convex() {
        let mut rng = SplitMix64::new(23);
        let variants: Vec<SetGeometry> = vec![
            SetGeometry::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            SetGeometry::Box {
                lo: vec![-1.0, 0.0],
                hi: vec![1.0, 1.0],
            },
            SetGeometry::Halfspace {
                normal: vec![1.0, 1.0],
                offset: 1.0,
            },
            SetGeometry::Polyhedron {
                faces: vec![
                    (vec![1.0, 0.0], 1.0),
                    (vec![0.0, 1.0], 1.0),
                    (vec![-1.0, 0.0], 1.0),
                ],
            },
        ];
        for set in &variants {
            for _ in 0..300 {
                let x = rng.vector(2, -4.0, 4.0);
                let y = rng.vector(2, -4.0, 4.0);
                let px = set.project(&x);
                let py = set.project(&y);
                assert!(linalg::dist(&px, &py) <= linalg::dist(&x, &y) + 1e-12);
            }
        }
    }

    #[test]
    fn convex_normal_monotonicity() {
        // boundary normals of convex variants satisfy the subsmooth
        // inequality with zero modulus
        let ball = SetGeometry::Ball {
            center: vec![0.0, 0.0],
            radius: 2.0,
        };
        let mut rng = SplitMix64::new(5);
        for _ in 0..300 {
            let a = rng.uniform(0.0, std::f64::consts::TAU);
            let b = rng.uniform(0.0, std::f64::consts::TAU);
            let x1 = vec![2.0 * a.cos(), 2.0 * a.sin()];
            let x2 = vec![2.0 * b.cos(), 2.0 * b.sin()];
            let n1 = ball.distance_subgradient(&x1).unwrap();
            let n2 = ball.distance_subgradient(&x2).unwrap();
            let ip = linalg::dot(&linalg::sub(&n1, &n2), &linalg::sub(&x1, &x2));
            assert!(ip >= -1e-12);
        }
    }

    #[test]
    fn prox_regular_inequality_ball_complement() {
        let r = 1.5;
        let comp = SetGeometry::BallComplement {
            center: vec![0.0, 0.0],
            radius: r,
        };
        let mut rng = SplitMix64::new(9);
        for _ in 0..300 {
            let a = rng.uniform(0.0, std::f64::consts::TAU);
            let b = rng.uniform(0.0, std::f64::consts::TAU);
            let x1 = vec![r * a.cos(), r * a.sin()];
            let x2 = vec![r * b.cos(), r * b.sin()];
            let n1 = comp.distance_subgradient(&x1).unwrap();
            let n2 = comp.distance_subgradient(&x2).unwrap();
            let diff = linalg::sub(&x1, &x2);
            let ip = linalg::dot(&linalg::sub(&n1, &n2), &diff);
            assert!(ip >= -(2.0 / r) * linalg::norm_sq(&diff) - 1e-9);
        }
    }

    #[test]
    fn alpha_far_convex_is_one() {
        let ball = SetGeometry::Ball {
            center: vec![0.0],
            radius: 1.0,
        };
        let samples: Vec<Vec<f64>> = (1..50).map(|i| vec![1.0 + 0.01 * i as f64]).collect();
        let rep = alpha_far_estimate(&ball, 1.0, &samples).unwrap();
        assert_eq!(rep.estimate, 1.0);
    }

    #[test]
    fn alpha_far_union_narrow_and_wide_tube() {
        let u = two_interval_union();
        // rho = 0.5: the tube excludes the equidistant midpoint
        let samples: Vec<Vec<f64>> = (0..200).map(|i| vec![-3.0 + 0.03 * i as f64]).collect();
        let rep = alpha_far_estimate(&u, 0.5, &samples).unwrap();
        assert_eq!(rep.estimate, 1.0);
        // rho = 1.5 with the midpoint sampled: hull of {-1, +1} contains 0
        let mut wide = samples;
        wide.push(vec![0.0]);
        let rep = alpha_far_estimate(&u, 1.5, &wide).unwrap();
        assert!(rep.estimate < 0.2, "estimate {}", rep.estimate);
    }

    #[test]
    fn alpha_far_empty_tube() {
        let ball = SetGeometry::Ball {
            center: vec![0.0],
            radius: 1.0,
        };
        let inside = vec![vec![0.0], vec![0.5]];
        assert!(matches!(
            alpha_far_estimate(&ball, 0.5, &inside),
            Err(Error::EmptyTubeSample)
        ));
    }

    #[test]
    fn min_norm_hull_pairs() {
        let p = min_norm_in_hull(&[vec![-1.0], vec![1.0]]);
        assert!(linalg::norm(&p) < 1e-8);
        let p = min_norm_in_hull(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((linalg::norm(&p) - (0.5_f64).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn lipschitz_probe_static_and_translating() {
        // static set: all variations zero
        let static_set = MovingSet::new(
            Arc::new(|_, _| SetGeometry::Ball {
                center: vec![0.0],
                radius: 1.0,
            }),
            ScalarFn::zero(),
            Some(ScalarFn::zero()),
            0.0,
            VariationKind::TimeOnly,
        )
        .unwrap();
        let probes = vec![
            (0.0, vec![0.0], vec![2.0]),
            (0.5, vec![0.0], vec![3.0]),
            (1.0, vec![0.0], vec![-2.5]),
        ];
        let rep = lipschitz_probe(&static_set, &probes);
        assert!(!rep.flagged);
        assert_eq!(rep.worst_ratio, 0.0);

        // translating halfline moves distances at unit rate
        let wall = MovingSet::new(
            Arc::new(|t, _: &[f64]| SetGeometry::Halfspace {
                normal: vec![-1.0],
                offset: -t,
            }),
            ScalarFn::new(|t| t),
            Some(ScalarFn::constant(1.0)),
            0.0,
            VariationKind::TimeOnly,
        )
        .unwrap();
        let probes = vec![
            (0.0, vec![0.0], vec![-1.0]),
            (0.5, vec![0.0], vec![-1.0]),
            (1.0, vec![0.0], vec![-2.0]),
        ];
        let rep = lipschitz_probe(&wall, &probes);
        assert!(!rep.flagged);
        assert!((rep.worst_ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_probe_flags_understated_modulus() {
        // true state modulus is 0.5 but only 0.4 is declared
        let ms = MovingSet::new(
            Arc::new(|_, x: &[f64]| SetGeometry::Halfspace {
                normal: vec![-1.0],
                offset: -0.5 * linalg::norm(x),
            }),
            ScalarFn::zero(),
            Some(ScalarFn::zero()),
            0.4,
            VariationKind::StateDependent,
        )
        .unwrap();
        let probes = vec![(0.0, vec![0.0], vec![-5.0]), (0.0, vec![2.0], vec![-5.0])];
        let rep = lipschitz_probe(&ms, &probes);
        assert!(rep.flagged);
        assert!(rep.worst_ratio > 1.0);
    }

    #[test]
    fn moving_set_rejects_bad_lipschitz() {
        let fam: SetFamily = Arc::new(|_, _| SetGeometry::Ball {
            center: vec![0.0],
            radius: 1.0,
        });
        assert!(MovingSet::new(
            fam,
            ScalarFn::zero(),
            None,
            1.2,
            VariationKind::StateDependent
        )
        .is_err());
    }

    #[test]
    fn projection_optimality_against_sampled_set_points() {
        let mut rng = SplitMix64::new(31);
        let variants: Vec<SetGeometry> = vec![
            SetGeometry::Ball {
                center: vec![0.2, -0.3],
                radius: 1.2,
            },
            SetGeometry::Box {
                lo: vec![-1.0, -0.5],
                hi: vec![0.5, 1.5],
            },
            SetGeometry::Halfspace {
                normal: vec![1.0, -2.0],
                offset: 0.25,
            },
            SetGeometry::BallComplement {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            two_interval_union_2d(),
            SetGeometry::Polyhedron {
                faces: vec![
                    (vec![1.0, 1.0], 1.0),
                    (vec![-1.0, 1.0], 1.0),
                    (vec![0.0, -1.0], 0.5),
                ],
            },
        ];
        for set in &variants {
            for _ in 0..50 {
                let x = rng.vector(2, -3.0, 3.0);
                let p = set.project(&x);
                assert!(set.contains(&p, 1e-9));
                let d = linalg::dist(&x, &p);
                for _ in 0..20 {
                    let y = set.project(&rng.vector(2, -3.0, 3.0));
                    assert!(d <= linalg::dist(&x, &y) + 1e-9);
                }
            }
        }
    }

    fn two_interval_union_2d() -> SetGeometry {
        SetGeometry::Union(vec![
            SetGeometry::Box {
                lo: vec![-2.0, -1.0],
                hi: vec![-1.0, 1.0],
            },
            SetGeometry::Box {
                lo: vec![1.0, -1.0],
                hi: vec![2.0, 1.0],
            },
        ])
    }
}

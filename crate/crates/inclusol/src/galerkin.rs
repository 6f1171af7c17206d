//! Orthonormal projectors, radial truncation, and noncompactness profile
//! estimation.
//!
//! In finite ambient dimension every finite cloud is compact, so the
//! estimator's value is its residual-versus-rank profile: the dimension
//! cascade uses the profile as a compactness diagnostic, and the estimate
//! itself is exactly zero at full rank. This is expected behaviour, not a
//! defect of the estimator.

use crate::error::{Error, Result};
use crate::linalg;

/// Rank-`n` orthogonal projector onto the span of the first `n` basis
/// vectors. The default canonical basis projects by coordinate truncation,
/// which is exact in floating point.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: Option<Vec<Vec<f64>>>,
    rank: usize,
    dim: usize,
}

impl Projector {
    pub fn canonical(dim: usize, rank: usize) -> Result<Projector> {
        if rank == 0 || rank > dim {
            return Err(Error::InvalidDims(format!("rank {rank} outside 1..={dim}")));
        }
        Ok(Projector {
            basis: None,
            rank,
            dim,
        })
    }

    /// Projector with an explicit orthonormal basis (rows). The Gram matrix
    /// must equal the identity within `1e-12`.
    pub fn with_basis(basis: Vec<Vec<f64>>, rank: usize) -> Result<Projector> {
        let dim = basis.len();
        if rank == 0 || rank > dim {
            return Err(Error::InvalidDims(format!("rank {rank} outside 1..={dim}")));
        }
        for row in &basis {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let g = linalg::dot(&basis[i], &basis[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                if (g - target).abs() > 1e-12 {
                    return Err(Error::Unsupported(format!(
                        "basis not orthonormal: gram[{i}][{j}] = {g}"
                    )));
                }
            }
        }
        Ok(Projector {
            basis: Some(basis),
            rank,
            dim,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.basis {
            None => {
                out[..self.rank].copy_from_slice(&x[..self.rank]);
                out[self.rank..].fill(0.0);
            }
            Some(basis) => {
                out.fill(0.0);
                for b in basis.iter().take(self.rank) {
                    let coeff = linalg::dot(x, b);
                    linalg::add_scaled(out, coeff, b);
                }
            }
        }
    }

    /// `||x - P x||`.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        match &self.basis {
            None => {
                if x.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: x.len(),
                    });
                }
                Ok(linalg::norm(&x[self.rank..]))
            }
            Some(_) => {
                let p = self.apply(x)?;
                Ok(linalg::dist(x, &p))
            }
        }
    }
}

/// `p_r(x)`: identity inside the ball of radius `r`, radial retraction onto
/// the sphere outside.
pub fn radial_truncate(x: &[f64], r: f64) -> Result<Vec<f64>> {
    if r < 0.0 {
        return Err(Error::NegativeRadius(r));
    }
    let n = linalg::norm(x);
    if n <= r {
        Ok(x.to_vec())
    } else if n == 0.0 {
        Ok(vec![0.0; x.len()])
    } else {
        Ok(linalg::scale(x, r / n))
    }
}

/// Residual profile and the resulting sandwich estimate for a finite cloud.
#[derive(Debug, Clone)]
pub struct NoncompactnessEstimate {
    /// `profile[n-1] = sup over the cloud of ||(I - P_n) x||` for `n = 1..=D`.
    pub profile: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Projector-based estimate of the Hausdorff noncompactness measure:
/// `upper = min over n of sup ||(I - P_n) x||`, `lower = upper / a` with
/// `a = 1` for orthogonal projectors. Finite clouds give `upper = 0` at full
/// rank; the informative output is the profile curve.
pub fn hausdorff_estimate(
    cloud: &[Vec<f64>],
    basis: Option<&[Vec<f64>]>,
) -> Result<NoncompactnessEstimate> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let dim = cloud[0].len();
    for x in cloud {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if !linalg::all_finite(x) {
            return Err(Error::NonFinite("cloud point".into()));
        }
    }
    let mut profile = Vec::with_capacity(dim);
    for n in 1..=dim {
        let proj = match basis {
            None => Projector::canonical(dim, n)?,
            Some(b) => Projector::with_basis(b.to_vec(), n)?,
        };
        let sup = cloud
            .iter()
            .map(|x| proj.residual(x).unwrap())
            .fold(0.0_f64, f64::max);
        profile.push(sup);
    }
    let upper = profile.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NoncompactnessEstimate {
        profile,
        lower: upper,
        upper,
    })
}

/// Exhaustive cover estimate used as a test oracle for the sandwich between
/// diameter covers and ball covers.
///
/// Enumerates all `budget`-subsets of cloud points as ball centers, keeps the
/// cover of minimal radius (`beta`), and reports the maximal diameter of the
/// induced nearest-center clusters (`alpha`). Because every center belongs to
/// its own cluster, `beta <= alpha <= 2 beta` holds by construction.
///
/// Enumeration grows combinatorially with the budget, so the oracle is
/// restricted to ambient dimension <= 3 and at most 64 points.
#[derive(Debug, Clone)]
pub struct CoverEstimate {
    pub alpha: f64,
    pub beta: f64,
    pub centers: Vec<usize>,
}

pub fn kuratowski_cover_estimate(cloud: &[Vec<f64>], budget: usize) -> Result<CoverEstimate> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let dim = cloud[0].len();
    if dim > 3 || cloud.len() > 64 {
        return Err(Error::Unsupported(
            "cover oracle restricted to dimension <= 3 and <= 64 points".into(),
        ));
    }
    let budget = budget.clamp(1, cloud.len());
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut subset: Vec<usize> = (0..budget).collect();
    loop {
        let radius = cover_radius(cloud, &subset);
        if best.as_ref().map_or(true, |(r, _)| radius < *r) {
            best = Some((radius, subset.clone()));
        }
        if !next_subset(&mut subset, cloud.len()) {
            break;
        }
    }
    let (beta, centers) = best.unwrap();

    // nearest-center clusters (ties to the lowest center index)
    let mut assignment = vec![0usize; cloud.len()];
    for (i, x) in cloud.iter().enumerate() {
        let mut best_c = 0;
        let mut best_d = f64::INFINITY;
        for (ci, &c) in centers.iter().enumerate() {
            let d = linalg::dist(x, &cloud[c]);
            if d < best_d {
                best_d = d;
                best_c = ci;
            }
        }
        assignment[i] = best_c;
    }
    let mut alpha = 0.0_f64;
    for ci in 0..centers.len() {
        let members: Vec<usize> = (0..cloud.len()).filter(|&i| assignment[i] == ci).collect();
        for (ai, &a) in members.iter().enumerate() {
            for &b in members.iter().skip(ai + 1) {
                alpha = alpha.max(linalg::dist(&cloud[a], &cloud[b]));
            }
        }
    }
    Ok(CoverEstimate {
        alpha,
        beta,
        centers,
    })
}

fn cover_radius(cloud: &[Vec<f64>], centers: &[usize]) -> f64 {
    cloud
        .iter()
        .map(|x| {
            centers
                .iter()
                .map(|&c| linalg::dist(x, &cloud[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn next_subset(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - (k - i) {
            subset[i] += 1;
            for j in (i + 1)..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn apply_examples() {
        let p = Projector::canonical(3, 3).unwrap();
        assert_eq!(p.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);

        let p = Projector::canonical(3, 2).unwrap();
        assert_eq!(p.apply(&[3.0, 4.0, 5.0]).unwrap(), vec![3.0, 4.0, 0.0]);
    }

    #[test]
    fn apply_nonexpansive_and_idempotent() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..500 {
            let x = rng.vector(6, -5.0, 5.0);
            for n in 1..=6 {
                let p = Projector::canonical(6, n).unwrap();
                let px = p.apply(&x).unwrap();
                assert!(linalg::norm(&px) <= linalg::norm(&x));
                assert_eq!(p.apply(&px).unwrap(), px);
                // orthogonality of the splitting
                let r = linalg::sub(&x, &px);
                assert!(linalg::dot(&px, &r).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn residual_nonincreasing_to_zero() {
        let x = vec![0.3, -1.2, 0.0, 2.5];
        let mut prev = f64::INFINITY;
        for n in 1..=4 {
            let p = Projector::canonical(4, n).unwrap();
            let r = p.residual(&x).unwrap();
            assert!(r <= prev + 1e-15);
            prev = r;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn general_basis_matches_canonical() {
        // a rotated orthonormal basis of R^2
        let c = (0.5_f64).sqrt();
        let basis = vec![vec![c, c], vec![-c, c]];
        let p = Projector::with_basis(basis, 1).unwrap();
        let x = vec![1.0, 0.0];
        let px = p.apply(&x).unwrap();
        assert!((px[0] - 0.5).abs() < 1e-12 && (px[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn with_basis_rejects_skewed_rows() {
        let basis = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        assert!(Projector::with_basis(basis, 1).is_err());
    }

    #[test]
    fn radial_truncate_examples() {
        assert_eq!(radial_truncate(&[0.5, 0.5], 1.0).unwrap(), vec![0.5, 0.5]);
        // 2.5 * x / ||x|| with x = (3, 4)
        let p = radial_truncate(&[3.0, 4.0], 2.5).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-15 && (p[1] - 2.0).abs() < 1e-15);
        assert_eq!(radial_truncate(&[3.0, 4.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(radial_truncate(&[1.0], -1.0).is_err());
    }

    #[test]
    fn estimate_single_point_and_basis_cloud() {
        let e = hausdorff_estimate(&[vec![2.0, -1.0, 0.5]], None).unwrap();
        assert_eq!(e.upper, 0.0);
        assert_eq!(e.lower, 0.0);

        // cloud {e_1, ..., e_D}: residual 1 below full rank, 0 at full rank
        let d = 5;
        let cloud: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                v
            })
            .collect();
        let e = hausdorff_estimate(&cloud, None).unwrap();
        for n in 1..d {
            assert_eq!(e.profile[n - 1], 1.0);
        }
        assert_eq!(e.profile[d - 1], 0.0);
        assert_eq!(e.upper, 0.0);
    }

    #[test]
    fn estimate_scaling_exact_for_power_of_two() {
        let mut rng = SplitMix64::new(17);
        let cloud: Vec<Vec<f64>> = (0..20).map(|_| rng.vector(4, -1.0, 1.0)).collect();
        let scaled: Vec<Vec<f64>> = cloud.iter().map(|x| linalg::scale(x, -4.0)).collect();
        let e = hausdorff_estimate(&cloud, None).unwrap();
        let es = hausdorff_estimate(&scaled, None).unwrap();
        for (a, b) in e.profile.iter().zip(&es.profile) {
            assert_eq!(*b, 4.0 * a);
        }
    }

    #[test]
    fn estimate_rejects_empty_cloud() {
        assert!(matches!(
            hausdorff_estimate(&[], None),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn projected_cloud_profile_dominance() {
        // diagonal cloud {P_k x_k} has a pointwise smaller profile
        let mut rng = SplitMix64::new(29);
        for _ in 0..100 {
            let d = 6;
            let cloud: Vec<Vec<f64>> = (0..d).map(|_| rng.vector(d, -2.0, 2.0)).collect();
            let diag: Vec<Vec<f64>> = cloud
                .iter()
                .enumerate()
                .map(|(k, x)| Projector::canonical(d, k + 1).unwrap().apply(x).unwrap())
                .collect();
            let full = hausdorff_estimate(&cloud, None).unwrap();
            let proj = hausdorff_estimate(&diag, None).unwrap();
            for (a, b) in proj.profile.iter().zip(&full.profile) {
                assert!(*a <= b + 1e-12);
            }
            assert!(proj.upper <= full.upper + 1e-12);
        }
    }

    #[test]
    fn cover_oracle_sandwich() {
        let mut rng = SplitMix64::new(41);
        for _ in 0..20 {
            let cloud: Vec<Vec<f64>> = (0..24).map(|_| rng.vector(2, -1.0, 1.0)).collect();
            for budget in 1..=3 {
                let est = kuratowski_cover_estimate(&cloud, budget).unwrap();
                assert!(
                    est.beta <= est.alpha + 1e-12,
                    "beta {} alpha {}",
                    est.beta,
                    est.alpha
                );
                assert!(est.alpha <= 2.0 * est.beta + 1e-12);
            }
        }
    }

    #[test]
    fn cover_oracle_rejects_large_inputs() {
        let cloud: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64; 4]).collect();
        assert!(kuratowski_cover_estimate(&cloud, 2).is_err());
    }
}

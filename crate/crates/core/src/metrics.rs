//! Absolute translation error after rigid alignment.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::Pose;
use crate::graph::PoseKey;
use crate::trajectory::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("alignment needs at least 3 matched poses, found {0}")]
    TooFewMatches(usize),
    #[error("reference positions are collinear or coincident; rigid alignment is undetermined")]
    Degenerate,
}

/// Rigid transform `g` minimizing `Σ ‖g·src_i − dst_i‖²` (Umeyama/Kabsch, no scale).
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose, MetricsError> {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n < 3 {
        return Err(MetricsError::TooFewMatches(n));
    }
    let mu_s = src.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n as f64;

    let mut ref_cov = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let ds = s - mu_s;
        let dd = d - mu_d;
        ref_cov += dd * dd.transpose();
        cross += dd * ds.transpose();
    }
    let sv = ref_cov.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 1e-18 || sv[1] <= 1e-12 * sv[0] {
        return Err(MetricsError::Degenerate);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = mu_d - rotation * mu_s;
    Ok(Pose::new(rotation, translation))
}

/// RMSE of translation residuals over keys present in both maps, after aligning
/// the estimate onto the reference.
pub fn ate_rmse_map(
    estimate: &BTreeMap<PoseKey, Pose>,
    reference: &BTreeMap<PoseKey, Pose>,
) -> Result<f64, MetricsError> {
    let (src, dst): (Vec<_>, Vec<_>) = estimate
        .iter()
        .filter_map(|(k, e)| reference.get(k).map(|r| (e.translation, r.translation)))
        .unzip();
    let g = align_rigid(&src, &dst)?;
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (g.transform_point(s) - d).norm_squared())
        .sum();
    Ok((sq / src.len() as f64).sqrt())
}

pub fn ate_rmse(estimate: &Trajectory, reference: &Trajectory) -> Result<f64, MetricsError> {
    ate_rmse_map(&estimate.pose_map(), &reference.pose_map())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector6;
    use proptest::prelude::*;

    fn square() -> BTreeMap<PoseKey, Pose> {
        [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(i, (x, y))| (PoseKey::new(0, i as u64), Pose::from_translation(*x, *y, 0.0)))
            .collect()
    }

    fn moved(map: &BTreeMap<PoseKey, Pose>, g: &Pose) -> BTreeMap<PoseKey, Pose> {
        map.iter().map(|(k, p)| (*k, g.compose(p))).collect()
    }

    fn rmse_under(g: &Pose, est: &[Vector3<f64>], refp: &[Vector3<f64>]) -> f64 {
        let s: f64 = est
            .iter()
            .zip(refp)
            .map(|(e, r)| (g.transform_point(e) - r).norm_squared())
            .sum();
        (s / est.len() as f64).sqrt()
    }

    #[test]
    fn identical_is_zero() {
        let sq = square();
        assert!(ate_rmse_map(&sq, &sq).unwrap() < 1e-12);
    }

    #[test]
    fn rigid_motion_is_zero() {
        let sq = square();
        let g = Pose::exp(&Vector6::new(0.3, -1.1, 2.0, 5.0, -3.0, 0.5));
        assert!(ate_rmse_map(&moved(&sq, &g), &sq).unwrap() < 1e-9);
    }

    #[test]
    fn displaced_corner_matches_search_oracle() {
        let refm = square();
        let mut est = refm.clone();
        est.insert(PoseKey::new(0, 2), Pose::from_translation(1.2, 1.0, 0.0));
        let ate = ate_rmse_map(&est, &refm).unwrap();

        let e: Vec<_> = est.values().map(|p| p.translation).collect();
        let r: Vec<_> = refm.values().map(|p| p.translation).collect();
        // coordinate descent over the 6 alignment parameters with shrinking steps
        let mut xi = Vector6::zeros();
        let mut best = rmse_under(&Pose::exp(&xi), &e, &r);
        let mut step = 0.1;
        while step > 1e-9 {
            let mut improved = false;
            for k in 0..6 {
                for sign in [-1.0, 1.0] {
                    let mut c = xi;
                    c[k] += sign * step;
                    let v = rmse_under(&Pose::exp(&c), &e, &r);
                    if v < best {
                        best = v;
                        xi = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        assert!((ate - best).abs() < 1e-7, "closed form {ate} vs search {best}");
        assert!(ate > 0.0 && ate < 0.1);
    }

    #[test]
    fn degenerate_inputs() {
        let sq = square();
        let two: BTreeMap<_, _> = sq.iter().take(2).map(|(k, v)| (*k, *v)).collect();
        assert_eq!(ate_rmse_map(&two, &two), Err(MetricsError::TooFewMatches(2)));
        let line: BTreeMap<_, _> = (0..5)
            .map(|i| (PoseKey::new(0, i), Pose::from_translation(i as f64, 0.0, 0.0)))
            .collect();
        assert_eq!(ate_rmse_map(&line, &line), Err(MetricsError::Degenerate));
    }

    proptest! {
        #[test]
        fn gauge_invariance(
            a in prop::array::uniform6(-2.0f64..2.0),
            pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 4..12),
            noise in prop::collection::vec(prop::array::uniform3(-0.3f64..0.3), 12),
        ) {
            let refm: BTreeMap<_, _> = pts.iter().enumerate()
                .map(|(i, p)| (PoseKey::new(1, i as u64), Pose::from_translation(p[0], p[1], p[2])))
                .collect();
            let est: BTreeMap<_, _> = refm.iter().zip(&noise)
                .map(|((k, p), n)| (*k, p.compose(&Pose::from_translation(n[0], n[1], n[2]))))
                .collect();
            let g = Pose::exp(&Vector6::from_row_slice(&a));
            if let Ok(base) = ate_rmse_map(&est, &refm) {
                let moved_ate = ate_rmse_map(&moved(&est, &g), &refm).unwrap();
                prop_assert!((base - moved_ate).abs() < 1e-9);
            }
        }
    }
}

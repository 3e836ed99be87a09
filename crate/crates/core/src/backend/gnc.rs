//! Graduated non-convexity with a truncated least-squares loss.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::lm::{LmParams, Problem};
use super::{edge_cost, BackendError, OptimizationResult};
use crate::geometry::Pose;
use crate::graph::{MeasurementKind, MultiRobotPoseGraph, PoseKey};

/// Edge-cost cutoff for a `confidence` quantile. Under isotropic noise with
/// `κ = 1/σ_R²` and `τ = 1/σ_t²` the chordal rotation term is about twice a
/// χ²₃ variable, so the cost of an inlier is bounded by `2·χ²₆`.
pub fn tls_threshold(confidence: f64) -> f64 {
    let chi = ChiSquared::new(6.0).expect("6 degrees of freedom");
    2.0 * chi.inverse_cdf(confidence)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GncParams {
    /// Largest edge cost `κ‖·‖²_F + τ‖·‖²` still considered an inlier.
    pub tls_threshold: f64,
    pub mu_update_factor: f64,
    pub max_outer_iterations: usize,
    /// Relative objective tolerance of each inner LM solve.
    pub inner_tolerance: f64,
}

impl Default for GncParams {
    fn default() -> Self {
        Self {
            tls_threshold: tls_threshold(0.997),
            mu_update_factor: 1.4,
            max_outer_iterations: 100,
            inner_tolerance: 1e-9,
        }
    }
}

impl GncParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.tls_threshold) {
            return Err(BackendError::BadParams("tls_threshold must be positive"));
        }
        if !(self.mu_update_factor > 1.0 && self.mu_update_factor.is_finite()) {
            return Err(BackendError::BadParams("mu_update_factor must exceed 1"));
        }
        if self.max_outer_iterations == 0 {
            return Err(BackendError::BadParams("max_outer_iterations must be positive"));
        }
        if !pos(self.inner_tolerance) {
            return Err(BackendError::BadParams("inner_tolerance must be positive"));
        }
        Ok(())
    }
}

const WARM_START_ITERATIONS: usize = 20;

/// TLS weight of an edge with cost `r2` under threshold `c2` and control `mu`.
fn tls_weight(r2: f64, c2: f64, mu: f64) -> f64 {
    if r2 >= (mu + 1.0) / mu * c2 {
        0.0
    } else if r2 <= mu / (mu + 1.0) * c2 {
        1.0
    } else {
        (c2 * mu * (mu + 1.0) / r2).sqrt() - mu
    }
}

/// Robust fit: loop closures are re-weighted by TLS with a gradually
/// tightening surrogate; odometry always keeps weight 1. The returned
/// estimates come from a final solve over odometry and accepted loops.
pub fn gnc_optimize(
    graph: &MultiRobotPoseGraph,
    initial: &BTreeMap<PoseKey, Pose>,
    anchor: PoseKey,
    params: &GncParams,
) -> Result<OptimizationResult, BackendError> {
    params.validate()?;
    let lm = LmParams {
        relative_tolerance: params.inner_tolerance,
        ..LmParams::default()
    };
    let loops: Vec<usize> = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind != MeasurementKind::Odometry)
        .map(|(i, _)| i)
        .collect();
    let c2 = params.tls_threshold;
    let problem = Problem::new(graph, anchor)?;
    let mut weights = vec![1.0; graph.edge_count()];
    // the unweighted start only seeds the residual scale; with gross outliers it
    // can crawl for many iterations without changing which edges look bad
    let seed = LmParams {
        max_iterations: WARM_START_ITERATIONS,
        ..lm
    };
    let mut res = problem.solve(problem.start(initial)?, &weights, &seed)?;
    let mut iterations = res.iterations;

    let costs = |est: &BTreeMap<PoseKey, Pose>| -> Vec<f64> {
        loops
            .iter()
            .map(|&i| {
                let m = &graph.edges()[i];
                edge_cost(&est[&m.from], &est[&m.to], m)
            })
            .collect()
    };
    let r2max = costs(&res.estimates).into_iter().fold(0.0, f64::max);
    if r2max <= c2 {
        let mut out = problem.solve(res.estimates, &weights, &lm)?;
        out.iterations += iterations;
        return Ok(out);
    }

    let mut mu = c2 / (2.0 * r2max - c2);
    let mut settled = false;
    for _ in 0..params.max_outer_iterations {
        let previous: Vec<f64> = loops.iter().map(|&i| weights[i]).collect();
        for (&i, r2) in loops.iter().zip(costs(&res.estimates)) {
            weights[i] = tls_weight(r2, c2, mu);
        }
        let binary = loops.iter().all(|&i| weights[i] == 0.0 || weights[i] == 1.0);
        let unchanged = loops.iter().zip(&previous).all(|(&i, &w)| weights[i] == w);
        if binary && unchanged {
            settled = true;
            break;
        }
        res = problem.solve(res.estimates, &weights, &lm)?;
        iterations += res.iterations;
        mu *= params.mu_update_factor;
    }

    for &i in &loops {
        weights[i] = if weights[i] > 0.5 { 1.0 } else { 0.0 };
    }
    let mut out = problem.solve(res.estimates, &weights, &lm)?;
    out.iterations += iterations;
    out.converged &= settled;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_quantile() {
        // χ²₆ 0.997 quantile is 19.80465...
        assert!((tls_threshold(0.997) - 2.0 * 19.804_652).abs() < 1e-5);
    }

    #[test]
    fn weights_are_clamped_and_monotone() {
        let c2 = 10.0;
        for mu in [0.01, 0.5, 3.0, 100.0] {
            let mut last = 1.0;
            for i in 0..200 {
                let w = tls_weight(i as f64 * 0.2, c2, mu);
                assert!((0.0..=1.0).contains(&w));
                assert!(w <= last + 1e-15);
                last = w;
            }
            // continuous at both band edges
            let lo = mu / (mu + 1.0) * c2;
            let hi = (mu + 1.0) / mu * c2;
            assert!((tls_weight(lo * (1.0 + 1e-12), c2, mu) - 1.0).abs() < 1e-9);
            assert!(tls_weight(hi * (1.0 - 1e-12), c2, mu).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_params() {
        let p = GncParams {
            mu_update_factor: 1.0,
            ..GncParams::default()
        };
        assert!(p.validate().is_err());
        let p = GncParams {
            tls_threshold: -1.0,
            ..GncParams::default()
        };
        assert!(p.validate().is_err());
        assert!(GncParams::default().validate().is_ok());
    }
}

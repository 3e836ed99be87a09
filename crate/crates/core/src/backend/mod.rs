//! Robust pose-graph optimization on SE(3):
//!
//! `min Σ κ‖R_j − R_i R̄_ij‖²_F + τ‖t_j − t_i − R_i t̄_ij‖²`
//!
//! solved by Levenberg–Marquardt with the anchor pose eliminated, wrapped in
//! graduated non-convexity over a truncated least-squares loss.

mod anchor;
mod gnc;
mod io;
mod lm;

pub use anchor::{initialize, select_anchor, AnchorState};
pub use gnc::{gnc_optimize, tls_threshold, GncParams};
pub use io::write_result_csv;
pub use lm::{optimize, optimize_weighted, LmParams};

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SMatrix, SVector};
use thiserror::Error;

use crate::geometry::{skew, Pose};
use crate::graph::{Measurement, MultiRobotPoseGraph, PoseKey, RobotId};

pub type Residual = SVector<f64, 12>;
pub type EdgeJacobian = SMatrix<f64, 12, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no participants to choose an anchor from")]
    NoParticipants,
    #[error("anchor {0} is not a vertex of the graph")]
    UnknownAnchor(PoseKey),
    #[error("no estimate for vertex {0}")]
    MissingEstimate(PoseKey),
    #[error("graph is disconnected from the anchor; unreachable: {}", fmt_keys(.0))]
    Disconnected(Vec<PoseKey>),
    #[error("normal equations are singular at vertex {0}")]
    Singular(PoseKey),
    #[error("invalid GNC parameters: {0}")]
    BadParams(&'static str),
    #[error("edge weight count {got} does not match edge count {expected}")]
    WeightCount { got: usize, expected: usize },
}

fn fmt_keys(keys: &[PoseKey]) -> String {
    const SHOWN: usize = 8;
    let mut s: Vec<String> = keys.iter().take(SHOWN).map(ToString::to_string).collect();
    if keys.len() > SHOWN {
        s.push(format!("... ({} total)", keys.len()));
    }
    s.join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub estimates: BTreeMap<PoseKey, Pose>,
    /// Objective over odometry and accepted loop closures.
    pub objective: f64,
    /// Keyed by edge index in the graph; every non-odometry edge is present.
    pub inlier_flags: BTreeMap<usize, bool>,
    /// Total LM iterations, summed over GNC rounds.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted LM step of the last solve, starting value first.
    pub objective_trace: Vec<f64>,
}

impl OptimizationResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_flags.values().filter(|&&f| f).count()
    }

    /// Per-robot estimates.
    pub fn robot_estimates(&self, robot: RobotId) -> BTreeMap<PoseKey, Pose> {
        self.estimates
            .range(PoseKey::new(robot, 0)..=PoseKey::new(robot, u64::MAX))
            .map(|(k, p)| (*k, *p))
            .collect()
    }
}

/// Whitened residual: `√κ·vec(R_j − R_i R̄)` stacked over `√τ·(t_j − t_i − R_i t̄)`.
pub fn edge_residual(ti: &Pose, tj: &Pose, m: &Measurement) -> Residual {
    let (sk, st) = (m.kappa.sqrt(), m.tau.sqrt());
    let er = tj.rotation - ti.rotation * m.relative_pose.rotation;
    let et = tj.translation - ti.translation - ti.rotation * m.relative_pose.translation;
    let mut r = Residual::zeros();
    for (idx, v) in er.iter().enumerate() {
        r[idx] = sk * v;
    }
    for a in 0..3 {
        r[9 + a] = st * et[a];
    }
    r
}

/// Residual and its Jacobians with respect to right perturbations
/// `T ← T·exp(ξ)`, `ξ = (ω, ρ)`, of the two endpoints.
pub fn edge_linearization(ti: &Pose, tj: &Pose, m: &Measurement) -> (Residual, EdgeJacobian, EdgeJacobian) {
    let (sk, st) = (m.kappa.sqrt(), m.tau.sqrt());
    let rbar = m.relative_pose.rotation;
    let tbar = m.relative_pose.translation;
    let mut ji = EdgeJacobian::zeros();
    let mut jj = EdgeJacobian::zeros();
    for k in 0..3 {
        let mut e = nalgebra::Vector3::zeros();
        e[k] = 1.0;
        let g = skew(&e);
        let dj: Matrix3<f64> = tj.rotation * g;
        let di: Matrix3<f64> = -(ti.rotation * g * rbar);
        for (idx, (a, b)) in dj.iter().zip(di.iter()).enumerate() {
            jj[(idx, k)] = sk * a;
            ji[(idx, k)] = sk * b;
        }
    }
    let dti_domega = ti.rotation * skew(&tbar);
    for a in 0..3 {
        for b in 0..3 {
            ji[(9 + a, b)] = st * dti_domega[(a, b)];
            ji[(9 + a, 3 + b)] = -st * ti.rotation[(a, b)];
            jj[(9 + a, 3 + b)] = st * tj.rotation[(a, b)];
        }
    }
    (edge_residual(ti, tj, m), ji, jj)
}

/// `κ‖R_j − R_i R̄‖²_F + τ‖t_j − t_i − R_i t̄‖²` for one edge.
pub fn edge_cost(ti: &Pose, tj: &Pose, m: &Measurement) -> f64 {
    edge_residual(ti, tj, m).norm_squared()
}

fn endpoint_estimates<'a>(
    estimates: &'a BTreeMap<PoseKey, Pose>,
    m: &Measurement,
) -> Result<(&'a Pose, &'a Pose), BackendError> {
    let ti = estimates.get(&m.from).ok_or(BackendError::MissingEstimate(m.from))?;
    let tj = estimates.get(&m.to).ok_or(BackendError::MissingEstimate(m.to))?;
    Ok((ti, tj))
}

/// Unweighted objective over all edges of the graph.
pub fn objective_value(graph: &MultiRobotPoseGraph, estimates: &BTreeMap<PoseKey, Pose>) -> Result<f64, BackendError> {
    for k in graph.vertices().keys() {
        if !estimates.contains_key(k) {
            return Err(BackendError::MissingEstimate(*k));
        }
    }
    let mut total = 0.0;
    for m in graph.edges() {
        let (ti, tj) = endpoint_estimates(estimates, m)?;
        total += edge_cost(ti, tj, m);
    }
    Ok(total)
}

/// Objective with per-edge weights multiplying `κ` and `τ`.
pub fn weighted_objective(
    graph: &MultiRobotPoseGraph,
    estimates: &BTreeMap<PoseKey, Pose>,
    weights: &[f64],
) -> Result<f64, BackendError> {
    let mut total = 0.0;
    for (m, &w) in graph.edges().iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let (ti, tj) = endpoint_estimates(estimates, m)?;
        total += w * edge_cost(ti, tj, m);
    }
    Ok(total)
}

//! Levenberg–Marquardt on the SE(3) product manifold with the anchor eliminated.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use nalgebra::{DVector, Matrix6, Vector6};

use super::{edge_linearization, weighted_objective, BackendError, OptimizationResult};
use crate::geometry::Pose;
use crate::graph::{MeasurementKind, MultiRobotPoseGraph, PoseKey};
use crate::linalg::{BlockPattern, CholeskyError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmParams {
    pub initial_lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-4,
            max_iterations: 100,
            relative_tolerance: 1e-9,
        }
    }
}

const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;

/// Least-squares fit of all edges with unit weights.
pub fn optimize(
    graph: &MultiRobotPoseGraph,
    initial: &BTreeMap<PoseKey, Pose>,
    anchor: PoseKey,
) -> Result<OptimizationResult, BackendError> {
    let weights = vec![1.0; graph.edge_count()];
    optimize_weighted(graph, initial, anchor, &weights, &LmParams::default())
}

/// Variable layout and block sparsity of one graph, shared by repeated solves.
pub(super) struct Problem<'g> {
    graph: &'g MultiRobotPoseGraph,
    anchor: PoseKey,
    keys: Vec<PoseKey>,
    /// Per edge: variable slots of both endpoints (`None` for the anchor) and
    /// the off-diagonal block it feeds.
    edge_slots: Vec<(Option<usize>, Option<usize>, Option<usize>)>,
    /// Off-diagonal blocks `(row, col)`.
    off_blocks: Vec<(usize, usize)>,
    pattern: BlockPattern,
}

impl<'g> Problem<'g> {
    pub(super) fn new(graph: &'g MultiRobotPoseGraph, anchor: PoseKey) -> Result<Self, BackendError> {
        if !graph.contains(anchor) {
            return Err(BackendError::UnknownAnchor(anchor));
        }
        let mut keys = Vec::new();
        let mut slot = BTreeMap::new();
        for k in graph.vertices().keys() {
            if *k == anchor {
                slot.insert(*k, None);
            } else {
                slot.insert(*k, Some(keys.len()));
                keys.push(*k);
            }
        }
        let mut adj = vec![Vec::new(); keys.len()];
        let mut block_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut off_blocks = Vec::new();
        let mut edge_slots = Vec::with_capacity(graph.edge_count());
        for e in graph.edges() {
            let (si, sj) = (slot[&e.from], slot[&e.to]);
            let mut ob = None;
            if let (Some(i), Some(j)) = (si, sj) {
                if i != j {
                    let pair = (i.max(j), i.min(j));
                    let next = off_blocks.len();
                    let id = *block_of.entry(pair).or_insert(next);
                    if id == next {
                        off_blocks.push(pair);
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                    ob = Some(id);
                }
            }
            edge_slots.push((si, sj, ob));
        }
        Ok(Self {
            graph,
            anchor,
            keys,
            edge_slots,
            off_blocks,
            pattern: BlockPattern::new(&adj),
        })
    }

    fn linearize(&self, est: &BTreeMap<PoseKey, Pose>, weights: &[f64]) -> NormalEquations {
        let n = self.keys.len();
        let mut ne = NormalEquations {
            diag: vec![Matrix6::zeros(); n],
            off: vec![Matrix6::zeros(); self.off_blocks.len()],
            gradient: DVector::zeros(6 * n),
        };
        for ((m, &w), &(si, sj, ob)) in self.graph.edges().iter().zip(weights).zip(&self.edge_slots) {
            if w == 0.0 {
                continue;
            }
            let (r, ji, jj) = edge_linearization(&est[&m.from], &est[&m.to], m);
            let wji = w * ji.transpose();
            let wjj = w * jj.transpose();
            if let Some(i) = si {
                ne.diag[i] += wji * ji;
                ne.gradient.fixed_rows_mut::<6>(6 * i).add_assign(&(wji * r));
            }
            if let Some(j) = sj {
                ne.diag[j] += wjj * jj;
                ne.gradient.fixed_rows_mut::<6>(6 * j).add_assign(&(wjj * r));
            }
            if let (Some(i), Some(_), Some(b)) = (si, sj, ob) {
                if self.off_blocks[b].0 == i {
                    ne.off[b] += wji * jj;
                } else {
                    ne.off[b] += wjj * ji;
                }
            } else if let (Some(i), Some(j)) = (si, sj) {
                // self-loop edge: both Jacobians act on one variable
                debug_assert_eq!(i, j);
                ne.diag[i] += wji * jj + wjj * ji;
            }
        }
        ne
    }

    /// `(H + λ·diag(H)) δ = −g`. Unconstrained variables (zero diagonal, hence
    /// zero gradient) get a unit diagonal and stay where they are.
    fn damped_step(&self, ne: &NormalEquations, lambda: f64) -> Result<DVector<f64>, CholeskyError> {
        let diag: Vec<Matrix6<f64>> = ne
            .diag
            .iter()
            .map(|d| {
                let mut a = *d;
                for c in 0..6 {
                    let v = a[(c, c)];
                    a[(c, c)] = if v > 0.0 { v * (1.0 + lambda) } else { 1.0 };
                }
                a
            })
            .collect();
        let off: Vec<(usize, usize, Matrix6<f64>)> = self
            .off_blocks
            .iter()
            .zip(&ne.off)
            .map(|(&(r, c), b)| (r, c, *b))
            .collect();
        let chol = self.pattern.factor(&diag, &off)?;
        Ok(-chol.solve(&ne.gradient))
    }

    fn retract(&self, est: &BTreeMap<PoseKey, Pose>, delta: &DVector<f64>) -> BTreeMap<PoseKey, Pose> {
        let mut out = est.clone();
        for (i, k) in self.keys.iter().enumerate() {
            let xi: Vector6<f64> = delta.fixed_rows::<6>(6 * i).into_owned();
            let p = out.get_mut(k).expect("every key has an estimate");
            *p = p.compose(&Pose::exp(&xi)).renormalized();
        }
        out
    }

    /// Initial estimates for every vertex, with the anchor moved to its prior.
    pub(super) fn start(&self, initial: &BTreeMap<PoseKey, Pose>) -> Result<BTreeMap<PoseKey, Pose>, BackendError> {
        let mut est = BTreeMap::new();
        for k in self.graph.vertices().keys() {
            let p = initial.get(k).ok_or(BackendError::MissingEstimate(*k))?;
            est.insert(*k, *p);
        }
        if let Some(prior) = self.graph.anchor_prior(self.anchor) {
            est.insert(self.anchor, prior);
        }
        Ok(est)
    }

    pub(super) fn solve(
        &self,
        mut est: BTreeMap<PoseKey, Pose>,
        weights: &[f64],
        params: &LmParams,
    ) -> Result<OptimizationResult, BackendError> {
        if weights.len() != self.graph.edge_count() {
            return Err(BackendError::WeightCount {
                got: weights.len(),
                expected: self.graph.edge_count(),
            });
        }
        let mut cost = weighted_objective(self.graph, &est, weights)?;
        let mut trace = vec![cost];
        let mut lambda = params.initial_lambda;
        let mut iterations = 0;
        let mut converged = cost == 0.0 || self.keys.is_empty();
        let mut ne = self.linearize(&est, weights);

        while !converged && iterations < params.max_iterations {
            iterations += 1;
            let delta = match self.damped_step(&ne, lambda) {
                Ok(d) => d,
                Err(CholeskyError::NotPositiveDefinite { pivot, .. }) => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        return Err(BackendError::Singular(self.keys[pivot / 6]));
                    }
                    continue;
                }
                Err(CholeskyError::BadOrdering(_)) => unreachable!("block pattern ordering is a permutation"),
            };
            let candidate = self.retract(&est, &delta);
            let new_cost = weighted_objective(self.graph, &candidate, weights)?;
            if new_cost < cost {
                let rel = (cost - new_cost) / cost;
                est = candidate;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda / 10.0).max(LAMBDA_MIN);
                if rel < params.relative_tolerance || cost == 0.0 {
                    converged = true;
                } else {
                    ne = self.linearize(&est, weights);
                }
            } else {
                lambda *= 10.0;
                // no decrease even for tiny steps: stationary to machine precision
                if lambda > LAMBDA_MAX {
                    converged = true;
                }
            }
        }

        let inlier_flags = self
            .graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind != MeasurementKind::Odometry)
            .map(|(i, _)| (i, weights[i] > 0.5))
            .collect();
        Ok(OptimizationResult {
            estimates: est,
            objective: cost,
            inlier_flags,
            iterations,
            converged,
            objective_trace: trace,
        })
    }
}

struct NormalEquations {
    diag: Vec<Matrix6<f64>>,
    off: Vec<Matrix6<f64>>,
    gradient: DVector<f64>,
}

/// LM on the weighted objective. `weights[e]` scales `κ` and `τ` of edge `e`.
/// The anchor is held at its prior in the graph, or at its initial estimate.
pub fn optimize_weighted(
    graph: &MultiRobotPoseGraph,
    initial: &BTreeMap<PoseKey, Pose>,
    anchor: PoseKey,
    weights: &[f64],
    params: &LmParams,
) -> Result<OptimizationResult, BackendError> {
    let problem = Problem::new(graph, anchor)?;
    let est = problem.start(initial)?;
    problem.solve(est, weights, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::objective_value;
    use crate::graph::Measurement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k(f: u64) -> PoseKey {
        PoseKey::new(0, f)
    }

    #[test]
    fn single_edge_closed_form() {
        let mut g = MultiRobotPoseGraph::new();
        g.add_vertex(k(0), None);
        g.add_vertex(k(1), None);
        let z = Pose::exp(&Vector6::new(0.3, 0.2, -0.1, 1.0, 2.0, 3.0));
        g.add_edge(Measurement::new(k(0), k(1), z, 2.0, 5.0, MeasurementKind::Odometry).unwrap())
            .unwrap();
        let anchor = Pose::from_translation(1.0, 1.0, 1.0);
        g.add_anchor(k(0), anchor).unwrap();
        let init = BTreeMap::from([(k(0), Pose::identity()), (k(1), Pose::identity())]);
        let res = optimize(&g, &init, k(0)).unwrap();
        assert!(res.converged);
        assert_eq!(res.estimates[&k(0)], anchor);
        assert!(res.estimates[&k(1)].max_abs_diff(&anchor.compose(&z)) < 1e-9);
        assert!(res.objective < 1e-16);
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn noisy_ring_is_monotone_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 8u64;
        let mut g = MultiRobotPoseGraph::new();
        for f in 0..n {
            g.add_vertex(k(f), None);
        }
        let step = Pose::rot_z(
            2.0 * std::f64::consts::PI / n as f64,
            nalgebra::Vector3::new(1.0, 0.0, 0.0),
        );
        let noisy =
            |rng: &mut ChaCha8Rng| step.compose(&Pose::exp(&Vector6::from_fn(|_, _| rng.random_range(-0.05..0.05))));
        for f in 0..n - 1 {
            let z = noisy(&mut rng);
            g.add_edge(Measurement::new(k(f), k(f + 1), z, 50.0, 20.0, MeasurementKind::Odometry).unwrap())
                .unwrap();
        }
        let z = noisy(&mut rng);
        g.add_edge(Measurement::new(k(n - 1), k(0), z, 50.0, 20.0, MeasurementKind::IntraLoop).unwrap())
            .unwrap();
        let init = super::super::initialize(&g, k(0)).unwrap();
        let res = optimize(&g, &init, k(0)).unwrap();
        assert!(res.converged);
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.objective < objective_value(&g, &init).unwrap());
        assert_eq!(res.inlier_flags, BTreeMap::from([(n as usize - 1, true)]));
        // perturbing any free pose cannot lower the objective
        for f in 1..n {
            for c in 0..6 {
                for s in [-1e-4, 1e-4] {
                    let mut e = res.estimates.clone();
                    let mut d = Vector6::zeros();
                    d[c] = s;
                    e.insert(k(f), e[&k(f)].compose(&Pose::exp(&d)));
                    assert!(objective_value(&g, &e).unwrap() >= res.objective - 1e-12);
                }
            }
        }
    }

    #[test]
    fn errors() {
        let mut g = MultiRobotPoseGraph::new();
        g.add_vertex(k(0), None);
        g.add_vertex(k(1), None);
        let init = BTreeMap::from([(k(0), Pose::identity())]);
        assert_eq!(optimize(&g, &init, k(0)), Err(BackendError::MissingEstimate(k(1))));
        assert_eq!(optimize(&g, &init, k(7)), Err(BackendError::UnknownAnchor(k(7))));
    }
}

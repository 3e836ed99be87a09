//! Metric curves against the percentage of candidates computed.

use std::collections::{BTreeMap, BTreeSet};

use cslam_core::backend::{gnc_optimize, initialize, objective_value, GncParams, OptimizationResult};
use cslam_core::exchange::{account_bytes, monolog_plan, vertex_cover_plan};
use cslam_core::graph::{CandidateMatch, Measurement, MeasurementKind, MultiRobotPoseGraph, PoseKey, RobotId};
use cslam_core::metrics::ate_rmse_map;
use cslam_core::prioritization::{build_reduced_graph, exhaustive_select, greedy_select, spectral_select};
use cslam_core::sim::{
    graph_lambda2, simulate_geometric_verification, simulate_odometry, simulate_place_recognition, ExchangeMode,
    PrioritizationMode, Scenario, Verification,
};
use cslam_core::Pose;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{BenchError, ExperimentConfig};

/// One point of a curve. Schema:
/// `mode,seed,round,computed,candidates,percent_computed,lambda2,objective,ate,cumulative_bytes,converged`
/// with ATE in meters and bytes in octets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub mode: PrioritizationMode,
    pub seed: u64,
    pub round: usize,
    pub computed: usize,
    pub candidates: usize,
    pub percent_computed: f64,
    pub lambda2: f64,
    pub objective: f64,
    /// Against the estimate that uses every candidate.
    pub ate: f64,
    pub cumulative_bytes: u64,
    pub converged: bool,
}

/// Everything about a worst-case rendezvous that does not depend on the
/// selection order: every candidate, the outcome of registering it and the
/// reference estimate built from all of them.
#[derive(Debug, Clone)]
pub struct CurveInstance {
    pub seed: u64,
    /// Odometry chains with dead-reckoned estimates and the anchor prior.
    pub graph: MultiRobotPoseGraph,
    pub anchor: PoseKey,
    pub candidates: Vec<CandidateMatch>,
    pub outcomes: BTreeMap<(PoseKey, PoseKey), Option<Measurement>>,
    pub reference: OptimizationResult,
    /// Descriptor traffic to the broker, paid before the first round.
    pub base_bytes: u64,
    pub payload_bytes: u64,
    pub overhead_bytes: u64,
    pub exchange: ExchangeMode,
    pub gnc: GncParams,
}

/// Builds the instance for a scenario whose robots meet once, after their
/// last keyframe. Robot 0 is the broker and anchor.
pub fn prepare_curve(scenario: &Scenario) -> Result<CurveInstance, BenchError> {
    let cfg = &scenario.config;
    let mut graph = MultiRobotPoseGraph::new();
    for traj in &scenario.trajectories {
        let odo = simulate_odometry(traj, &cfg.odometry, cfg.seed)?;
        let mut pose = Pose::identity();
        for (f, p) in traj.points().iter().enumerate() {
            if f > 0 {
                pose = pose.compose(&odo[f - 1].relative_pose);
            }
            graph.add_vertex(p.key, Some(pose));
        }
        for m in odo {
            graph.add_edge(m)?;
        }
    }
    let anchor = PoseKey::new(0, 0);
    graph.add_anchor(anchor, Pose::identity())?;

    let mut candidates = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, a) in scenario.trajectories.iter().enumerate() {
        for b in &scenario.trajectories[i + 1..] {
            for c in simulate_place_recognition(a.points(), b.points(), &cfg.place_recognition, cfg.seed) {
                if seen.insert(c.pair()) {
                    candidates.push(c);
                }
            }
        }
    }

    let truth = |k: PoseKey| scenario.trajectories[k.robot_id as usize].points()[k.frame_id as usize].pose;
    let mut outcomes = BTreeMap::new();
    let mut full = graph.clone();
    for c in &candidates {
        let plan = monolog_plan(std::slice::from_ref(c));
        let v = simulate_geometric_verification(
            c,
            &plan,
            &truth(c.vertex_a),
            &truth(c.vertex_b),
            &cfg.place_recognition,
            &cfg.loop_noise,
            cfg.seed,
        )?;
        let m = match v {
            Verification::Accepted(m) => Some(m),
            Verification::Rejected => None,
        };
        if let Some(m) = &m {
            full.add_edge(m.clone())?;
        }
        outcomes.insert(c.pair(), m);
    }
    let init = initialize(&full, anchor).map_err(|e| {
        BenchError::Data(format!(
            "seed {}: all candidates together leave robots apart: {e}",
            cfg.seed
        ))
    })?;
    let gnc = GncParams {
        max_outer_iterations: cfg.gnc_iterations,
        ..GncParams::default()
    };
    let reference = gnc_optimize(&full, &init, anchor, &gnc)?;

    let sizes = cfg.messages;
    let base_bytes = scenario.trajectories[1..]
        .iter()
        .map(|t| t.len() as u64 * sizes.descriptor + sizes.overhead)
        .sum();
    Ok(CurveInstance {
        seed: cfg.seed,
        graph,
        anchor,
        candidates,
        outcomes,
        reference,
        base_bytes,
        payload_bytes: sizes.payload,
        overhead_bytes: sizes.overhead,
        exchange: cfg.exchange,
        gnc,
    })
}

fn rejected_pairs(graph: &MultiRobotPoseGraph, res: &OptimizationResult) -> BTreeSet<(PoseKey, PoseKey)> {
    res.inlier_flags
        .iter()
        .filter(|(_, &ok)| !ok)
        .map(|(&i, _)| graph.edges()[i].pair())
        .collect()
}

fn all_linked(graph: &MultiRobotPoseGraph, rejected: &BTreeSet<(PoseKey, PoseKey)>) -> bool {
    let robots = graph.robots();
    let mut reached = BTreeSet::from([*robots.first().expect("graph has robots")]);
    loop {
        let before = reached.len();
        for e in graph.edges() {
            if e.kind == MeasurementKind::InterLoop && !rejected.contains(&e.pair()) {
                let (a, b): (RobotId, RobotId) = (e.from.robot_id, e.to.robot_id);
                if reached.contains(&a) || reached.contains(&b) {
                    reached.insert(a);
                    reached.insert(b);
                }
            }
        }
        if reached.len() == before {
            return reached.len() == robots.len();
        }
    }
}

/// Selects `budget` candidates per round until none is left, recomputing
/// λ₂, the objective and the ATE after each round. The last round reuses the
/// reference solve, so every mode ends on the same numbers.
pub fn curve_for(inst: &CurveInstance, mode: PrioritizationMode, budget: usize) -> Result<Vec<CurveRow>, BenchError> {
    if budget == 0 {
        return Err(BenchError::Usage("curve budget must be positive".into()));
    }
    let total = inst.candidates.len();
    let percent = |k: usize| {
        if total == 0 {
            100.0
        } else {
            100.0 * k as f64 / total as f64
        }
    };
    let mut graph = inst.graph.clone();
    let mut bytes = inst.base_bytes;
    let start = graph.estimates();
    let mut rows = vec![CurveRow {
        mode,
        seed: inst.seed,
        round: 0,
        computed: 0,
        candidates: total,
        percent_computed: percent(0),
        lambda2: graph_lambda2(&graph)?,
        objective: objective_value(&graph, &start)?,
        ate: ate_rmse_map(&start, &inst.reference.estimates).unwrap_or(f64::NAN),
        cumulative_bytes: bytes,
        converged: true,
    }];

    let mut remaining = inst.candidates.clone();
    let mut rejected = BTreeSet::new();
    let mut warm: Option<BTreeMap<PoseKey, Pose>> = None;
    let mut computed = 0;
    let mut round = 0;
    while !remaining.is_empty() {
        round += 1;
        let kept = graph.filter_edges(|_, e| !rejected.contains(&e.pair()));
        let rg = build_reduced_graph(&kept, &remaining)?;
        let sel = match mode {
            PrioritizationMode::Greedy => greedy_select(&rg, budget),
            PrioritizationMode::Spectral => spectral_select(&rg, budget),
            PrioritizationMode::Exhaustive => exhaustive_select(&rg, budget)?,
        };
        let picked: Vec<CandidateMatch> = sel.selected().into_iter().map(|i| remaining[i]).collect();
        let plan = match inst.exchange {
            ExchangeMode::Monolog => monolog_plan(&picked),
            ExchangeMode::VertexCover => vertex_cover_plan(&picked),
        };
        bytes += account_bytes(&plan, inst.payload_bytes, inst.overhead_bytes);
        let picked_pairs: BTreeSet<_> = picked.iter().map(CandidateMatch::pair).collect();
        for p in &picked_pairs {
            if let Some(m) = &inst.outcomes[p] {
                graph.add_edge(m.clone())?;
            }
        }
        remaining.retain(|c| !picked_pairs.contains(&c.pair()));
        computed += picked.len();

        let res = if remaining.is_empty() {
            inst.reference.clone()
        } else {
            let init = match warm.take() {
                Some(w) => w,
                None => match initialize(&graph, inst.anchor) {
                    Ok(i) => i,
                    Err(_) => start.clone(),
                },
            };
            gnc_optimize(&graph, &init, inst.anchor, &inst.gnc)?
        };
        rejected = rejected_pairs(&graph, &res);
        if all_linked(&graph, &rejected) {
            warm = Some(res.estimates.clone());
        }
        let kept = graph.filter_edges(|_, e| !rejected.contains(&e.pair()));
        rows.push(CurveRow {
            mode,
            seed: inst.seed,
            round,
            computed,
            candidates: total,
            percent_computed: percent(computed),
            lambda2: graph_lambda2(&kept)?,
            objective: res.objective,
            ate: ate_rmse_map(&res.estimates, &inst.reference.estimates).unwrap_or(f64::NAN),
            cumulative_bytes: bytes,
            converged: res.converged,
        });
    }
    Ok(rows)
}

/// Candidates computed before the ATE enters, and stays within, `fraction` of
/// its range above the terminal value. The range is measured from the worst
/// ATE once at least one candidate is computed, since before that the robots
/// share no frame at all.
pub fn candidates_to_converge(rows: &[CurveRow], fraction: f64) -> usize {
    let Some(last) = rows.last() else {
        return 0;
    };
    let peak = rows
        .iter()
        .filter(|r| r.computed > 0)
        .map(|r| r.ate)
        .fold(last.ate, f64::max);
    let threshold = last.ate + fraction * (peak - last.ate);
    let mut need = last.computed;
    for r in rows.iter().rev() {
        if r.ate <= threshold {
            need = r.computed;
        } else {
            break;
        }
    }
    need
}

/// Curves for every seed and mode of `cfg`; budget defaults to 1.
pub fn run_curve_experiment(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, BenchError> {
    cfg.validate()?;
    let budget = cfg.budget.unwrap_or(1);
    let per_seed: Vec<Result<Vec<CurveRow>, BenchError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let inst = prepare_curve(&cfg.scenario(seed, None)?)?;
            let mut rows = Vec::new();
            for &mode in &cfg.modes {
                rows.extend(curve_for(&inst, mode, budget)?);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

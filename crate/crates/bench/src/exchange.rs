//! Bytes of the monolog and vertex-cover exchange policies against the budget.

use std::collections::BTreeSet;

use cslam_core::exchange::{account_bytes, monolog_plan, vertex_cover_plan};
use cslam_core::graph::{CandidateMatch, MultiRobotPoseGraph};
use cslam_core::prioritization::{build_reduced_graph, exhaustive_select, greedy_select, spectral_select};
use cslam_core::sim::{simulate_odometry, simulate_place_recognition, PrioritizationMode, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{BenchError, ExperimentConfig};

pub const DEFAULT_BUDGETS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Schema `mode,seed,budget,selected,monolog_bytes,cover_bytes`, bytes in octets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRow {
    pub mode: PrioritizationMode,
    pub seed: u64,
    pub budget: usize,
    pub selected: usize,
    pub monolog_bytes: u64,
    pub cover_bytes: u64,
}

impl ExchangeRow {
    /// `1 − cover/monolog`, zero when nothing is sent.
    pub fn savings(&self) -> f64 {
        if self.monolog_bytes == 0 {
            0.0
        } else {
            1.0 - self.cover_bytes as f64 / self.monolog_bytes as f64
        }
    }
}

/// For each budget, selects that many candidates among all of a scenario's
/// candidates and prices both exchange plans for them.
pub fn exchange_sweep(
    scenario: &Scenario,
    mode: PrioritizationMode,
    budgets: &[usize],
) -> Result<Vec<ExchangeRow>, BenchError> {
    let cfg = &scenario.config;
    let mut graph = MultiRobotPoseGraph::new();
    for traj in &scenario.trajectories {
        for p in traj.points() {
            graph.add_vertex(p.key, None);
        }
        for m in simulate_odometry(traj, &cfg.odometry, cfg.seed)? {
            graph.add_edge(m)?;
        }
    }
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
    let rg = build_reduced_graph(&graph, &candidates)?;
    let sizes = cfg.messages;
    budgets
        .iter()
        .map(|&budget| {
            let sel = match mode {
                PrioritizationMode::Greedy => greedy_select(&rg, budget),
                PrioritizationMode::Spectral => spectral_select(&rg, budget),
                PrioritizationMode::Exhaustive => exhaustive_select(&rg, budget)?,
            };
            let picked: Vec<CandidateMatch> = sel.selected().into_iter().map(|i| candidates[i]).collect();
            Ok(ExchangeRow {
                mode,
                seed: cfg.seed,
                budget,
                selected: picked.len(),
                monolog_bytes: account_bytes(&monolog_plan(&picked), sizes.payload, sizes.overhead),
                cover_bytes: account_bytes(&vertex_cover_plan(&picked), sizes.payload, sizes.overhead),
            })
        })
        .collect()
}

pub fn run_exchange_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExchangeRow>, BenchError> {
    cfg.validate()?;
    if cfg.budgets.is_empty() {
        return Err(BenchError::Usage("at least one budget is required".into()));
    }
    let per_seed: Vec<Result<Vec<ExchangeRow>, BenchError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let sc = cfg.scenario(seed, None)?;
            let mut rows = Vec::new();
            for &mode in &cfg.modes {
                rows.extend(exchange_sweep(&sc, mode, &cfg.budgets)?);
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

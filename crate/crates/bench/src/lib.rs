//! Experiment drivers behind the `cslam-bench` command line: scenario
//! resolution, greedy-vs-spectral metric curves, exchange-policy sweeps and
//! CSV output.

mod curve;
mod exchange;
mod output;

pub use curve::{candidates_to_converge, curve_for, prepare_curve, run_curve_experiment, CurveInstance, CurveRow};
pub use exchange::{exchange_sweep, run_exchange_experiment, ExchangeRow, DEFAULT_BUDGETS};
pub use output::{write_csv_atomic, write_run_outputs, write_scenario_files};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cslam_core::sim::{
    clustered_scenario, disjoint_scenario, load_trajectory, staged_scenario, worst_case_scenario, ExchangeMode,
    PrioritizationMode, Scenario, ScenarioConfig, SimError, TrajectoryFormat,
};
use cslam_core::trajectory::Trajectory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Data(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// 1 usage, 2 data, 3 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 1,
            BenchError::NonConvergence(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<cslam_core::backend::BackendError> for BenchError {
    fn from(e: cslam_core::backend::BackendError) -> Self {
        BenchError::Sim(e.into())
    }
}

impl From<cslam_core::prioritization::PrioritizationError> for BenchError {
    fn from(e: cslam_core::prioritization::PrioritizationError) -> Self {
        BenchError::Sim(e.into())
    }
}

impl From<cslam_core::graph::GraphError> for BenchError {
    fn from(e: cslam_core::graph::GraphError) -> Self {
        BenchError::Sim(e.into())
    }
}

/// Built-in scenarios, or a TOML file.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioRef {
    /// Six robots meeting as `{0,4,5}`, `{2,3,4}`, `{1,2}`.
    Staged,
    /// One Manhattan walk split in two, meeting only at the end.
    WorstCase,
    /// Two crossing loops with clustered candidates.
    Clustered,
    /// Parallel corridors whose candidates share no keyframe.
    Disjoint,
    File(PathBuf),
}

impl FromStr for ScenarioRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "staged" => ScenarioRef::Staged,
            "worst_case" => ScenarioRef::WorstCase,
            "clustered" => ScenarioRef::Clustered,
            "disjoint" => ScenarioRef::Disjoint,
            _ if s.is_empty() => return Err("empty scenario".into()),
            _ => ScenarioRef::File(PathBuf::from(s)),
        })
    }
}

impl ScenarioRef {
    /// The configuration with `seed` replacing the stored one.
    pub fn config(&self, seed: u64) -> Result<(ScenarioConfig, PathBuf), BenchError> {
        let here = PathBuf::from(".");
        Ok(match self {
            ScenarioRef::Staged => (staged_scenario(seed), here),
            ScenarioRef::WorstCase => (worst_case_scenario(seed, PrioritizationMode::Spectral), here),
            ScenarioRef::Clustered => (clustered_scenario(seed), here),
            ScenarioRef::Disjoint => (disjoint_scenario(seed), here),
            ScenarioRef::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
                let mut cfg = ScenarioConfig::from_toml(&text)?;
                cfg.seed = seed;
                (cfg, path.parent().unwrap_or(Path::new(".")).to_path_buf())
            }
        })
    }
}

/// Choices shared by every experiment. `None` leaves the scenario's own value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioRef,
    pub modes: Vec<PrioritizationMode>,
    pub exchange: Option<ExchangeMode>,
    pub budget: Option<usize>,
    /// Budgets of an exchange sweep.
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub worst_case: bool,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioRef, seeds: Vec<u64>, out_dir: PathBuf) -> Self {
        Self {
            scenario,
            modes: vec![PrioritizationMode::Greedy, PrioritizationMode::Spectral],
            exchange: None,
            budget: None,
            budgets: DEFAULT_BUDGETS.to_vec(),
            seeds,
            worst_case: false,
            out_dir,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.seeds.is_empty() {
            return Err(BenchError::Usage("at least one seed is required".into()));
        }
        if self.modes.is_empty() {
            return Err(BenchError::Usage("at least one prioritization mode is required".into()));
        }
        Ok(())
    }

    /// The scenario for one seed with this configuration's overrides applied.
    pub fn scenario(&self, seed: u64, mode: Option<PrioritizationMode>) -> Result<Scenario, BenchError> {
        let (mut cfg, base) = self.scenario.config(seed)?;
        if let Some(m) = mode {
            cfg.prioritization = m;
        }
        if let Some(e) = self.exchange {
            cfg.exchange = e;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        cfg.worst_case |= self.worst_case;
        Ok(Scenario::from_config(cfg, &base)?)
    }
}

/// Parses `3`, `1,4,9` or `0..20` (end exclusive).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("invalid seed list `{s}` (use 3, 1,4,9 or 0..20)");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

/// Reads a single-robot trajectory from a TUM or g2o file.
pub fn import_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory, BenchError> {
    Ok(load_trajectory(path, format, 0)?)
}

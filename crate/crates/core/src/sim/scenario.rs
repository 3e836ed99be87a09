//! Scenario configuration, TOML loading and validation.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::generators::{generate, GeneratorKind};
use super::SimError;
use crate::g2o::parse_g2o;
use crate::geometry::Pose;
use crate::graph::RobotId;
use crate::trajectory::{parse_tum, split_trajectory, Trajectory, TrajectoryError};

/// Smallest σ used when converting noise into information weights.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrioritizationMode {
    Greedy,
    #[default]
    Spectral,
    Exhaustive,
}

impl FromStr for PrioritizationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "spectral" => Ok(Self::Spectral),
            "exhaustive" => Ok(Self::Exhaustive),
            _ => Err(format!(
                "unknown prioritization mode `{s}` (greedy, spectral, exhaustive)"
            )),
        }
    }
}

impl PrioritizationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Spectral => "spectral",
            Self::Exhaustive => "exhaustive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeMode {
    Monolog,
    #[default]
    VertexCover,
}

impl FromStr for ExchangeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "monolog" => Ok(Self::Monolog),
            "vertex_cover" => Ok(Self::VertexCover),
            _ => Err(format!("unknown exchange mode `{s}` (monolog, vertex_cover)")),
        }
    }
}

impl ExchangeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Monolog => "monolog",
            Self::VertexCover => "vertex_cover",
        }
    }
}

/// Isotropic per-measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Radians.
    pub rotation_sigma: f64,
    /// Meters.
    pub translation_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rotation_sigma: 0.01,
            translation_sigma: 0.05,
        }
    }
}

impl NoiseModel {
    pub const ZERO: NoiseModel = NoiseModel {
        rotation_sigma: 0.0,
        translation_sigma: 0.0,
    };

    /// `(κ, τ) = (1/σ_R², 1/σ_t²)` with σ floored at [`SIGMA_FLOOR`].
    pub fn information(&self) -> (f64, f64) {
        let w = |s: f64| 1.0 / s.max(SIGMA_FLOOR).powi(2);
        (w(self.rotation_sigma), w(self.translation_sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceRecognitionParams {
    /// Ground-truth distance below which two keyframes match (meters).
    pub match_radius: f64,
    /// Standard deviation of the additive score noise.
    pub score_sigma: f64,
    /// Chance that a true candidate is accompanied by a spurious one.
    pub outlier_probability: f64,
    /// Chance that registration of a true candidate fails.
    pub registration_failure: f64,
    /// Range of the translation error of spurious measurements (meters).
    pub gross_translation: [f64; 2],
}

impl Default for PlaceRecognitionParams {
    fn default() -> Self {
        Self {
            match_radius: 3.0,
            score_sigma: 0.05,
            outlier_probability: 0.0,
            registration_failure: 0.0,
            gross_translation: [2.0, 10.0],
        }
    }
}

/// Message sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessageSizes {
    pub descriptor: u64,
    pub payload: u64,
    /// One pose, relative-pose measurement or registration result.
    pub pose: u64,
    pub heartbeat: u64,
    pub overhead: u64,
}

impl Default for MessageSizes {
    fn default() -> Self {
        Self {
            descriptor: 4096,
            payload: 200_000,
            pose: 64,
            heartbeat: 8,
            overhead: 24,
        }
    }
}

/// Robots listed in a window are mutually in range for steps `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: u64,
    pub end: u64,
    pub robots: Vec<RobotId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Communication {
    /// Ground-truth distance at most `radius` meters.
    Range {
        radius: f64,
    },
    Schedule {
        windows: Vec<Window>,
    },
}

impl Default for Communication {
    fn default() -> Self {
        Communication::Range { radius: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    #[default]
    Tum,
    G2o,
}

impl FromStr for TrajectoryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tum" => Ok(Self::Tum),
            "g2o" => Ok(Self::G2o),
            _ => Err(format!("unknown trajectory format `{s}` (tum, g2o)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySource {
    Generator {
        generator: GeneratorKind,
        robots: usize,
        /// Keyframes per robot, one meter apart.
        length: usize,
        /// Corridor spacing, loop radius or block size, depending on the generator.
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
    /// One file per robot, robot ids in list order. Relative paths resolve
    /// against the scenario file's directory.
    Files {
        paths: Vec<PathBuf>,
        #[serde(default)]
        format: TrajectoryFormat,
    },
}

fn default_spacing() -> f64 {
    2.0
}

impl Default for TrajectorySource {
    fn default() -> Self {
        TrajectorySource::Generator {
            generator: GeneratorKind::ParallelCorridors,
            robots: 2,
            length: 50,
            spacing: default_spacing(),
        }
    }
}

/// Everything a run depends on. Loaded from TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Candidates selected per prioritization round.
    pub budget: usize,
    /// Prioritization rounds per rendezvous.
    pub rounds: usize,
    pub prioritization: PrioritizationMode,
    pub exchange: ExchangeMode,
    /// Suppress all contact until the final step, then put every robot in range.
    pub worst_case: bool,
    /// Steps a robot waits after a rendezvous before joining another.
    pub cooldown: u64,
    /// A neighbor stays live for this many steps after its last heartbeat.
    pub heartbeat_timeout: u64,
    /// Outer iterations allowed to the robust solver before it gives up.
    pub gnc_iterations: usize,
    pub odometry: NoiseModel,
    pub loop_noise: NoiseModel,
    pub place_recognition: PlaceRecognitionParams,
    pub messages: MessageSizes,
    pub communication: Communication,
    pub trajectories: TrajectorySource,
    /// Cut a single trajectory into this many robots.
    pub split: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: 5,
            rounds: 1,
            prioritization: PrioritizationMode::default(),
            exchange: ExchangeMode::default(),
            worst_case: false,
            cooldown: 10,
            heartbeat_timeout: 2,
            gnc_iterations: 100,
            odometry: NoiseModel::default(),
            loop_noise: NoiseModel::default(),
            place_recognition: PlaceRecognitionParams::default(),
            messages: MessageSizes::default(),
            communication: Communication::default(),
            trajectories: TrajectorySource::default(),
            split: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Checks the parameters that do not depend on the trajectories.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        for (name, n) in [("odometry", &self.odometry), ("loop_noise", &self.loop_noise)] {
            for s in [n.rotation_sigma, n.translation_sigma] {
                if !(s >= 0.0 && s.is_finite()) {
                    return bad(format!("{name}: sigma must be finite and non-negative, got {s}"));
                }
            }
        }
        let pr = &self.place_recognition;
        for (name, p) in [
            ("outlier_probability", pr.outlier_probability),
            ("registration_failure", pr.registration_failure),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(pr.match_radius >= 0.0 && pr.match_radius.is_finite()) {
            return bad(format!(
                "match_radius must be finite and non-negative, got {}",
                pr.match_radius
            ));
        }
        if !(pr.score_sigma >= 0.0 && pr.score_sigma.is_finite()) {
            return bad(format!(
                "score_sigma must be finite and non-negative, got {}",
                pr.score_sigma
            ));
        }
        let [lo, hi] = pr.gross_translation;
        let floor = 5.0 * self.loop_noise.translation_sigma;
        if !(lo > floor && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "gross_translation [{lo}, {hi}] must be ordered with a lower end above 5 x loop translation sigma ({floor})"
            ));
        }
        if self.heartbeat_timeout == 0 {
            return bad("heartbeat_timeout must be at least 1".into());
        }
        if self.gnc_iterations == 0 {
            return bad("gnc_iterations must be at least 1".into());
        }
        if let Communication::Range { radius } = self.communication {
            if !(radius >= 0.0 && radius.is_finite()) {
                return bad(format!(
                    "communication radius must be finite and non-negative, got {radius}"
                ));
            }
        }
        if self.split == Some(0) {
            return bad("split must be at least 1".into());
        }
        Ok(())
    }
}

/// A validated configuration with its trajectories resolved. Robot `i` owns
/// `trajectories[i]`, with frames numbered from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub trajectories: Vec<Trajectory>,
}

impl Scenario {
    /// Resolves trajectories, reading files relative to `base_dir`.
    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self, SimError> {
        config.validate()?;
        let mut trajectories = match &config.trajectories {
            TrajectorySource::Generator {
                generator,
                robots,
                length,
                spacing,
            } => generate(*generator, *robots, *length, *spacing, config.seed)?,
            TrajectorySource::Files { paths, format } => paths
                .iter()
                .enumerate()
                .map(|(i, p)| load_trajectory(&base_dir.join(p), *format, i as RobotId))
                .collect::<Result<_, _>>()?,
        };
        if let Some(parts) = config.split {
            if trajectories.len() != 1 {
                return Err(SimError::Config(format!(
                    "split needs exactly one trajectory, found {}",
                    trajectories.len()
                )));
            }
            trajectories = split_trajectory(&trajectories[0], parts)?;
        }
        Self::new(config, trajectories)
    }

    pub fn new(config: ScenarioConfig, trajectories: Vec<Trajectory>) -> Result<Self, SimError> {
        config.validate()?;
        if trajectories.is_empty() {
            return Err(SimError::Config("scenario has no robots".into()));
        }
        for (i, t) in trajectories.iter().enumerate() {
            if t.is_empty() {
                return Err(SimError::Config(format!("robot {i} has an empty trajectory")));
            }
            for (f, p) in t.points().iter().enumerate() {
                if p.key.robot_id != i as RobotId || p.key.frame_id != f as u64 {
                    return Err(SimError::Config(format!(
                        "trajectory {i} must hold keys {i}/0.. in order, found {}",
                        p.key
                    )));
                }
            }
        }
        if let Communication::Schedule { windows } = &config.communication {
            check_schedule(windows, trajectories.len())?;
        }
        Ok(Self { config, trajectories })
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, SimError> {
        Self::from_config(ScenarioConfig::from_toml(text)?, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn robot_count(&self) -> usize {
        self.trajectories.len()
    }

    /// Number of simulated steps: the longest trajectory.
    pub fn horizon(&self) -> u64 {
        self.trajectories.iter().map(|t| t.len() as u64).max().unwrap_or(0)
    }

    pub fn truth(&self, robot: RobotId) -> Vec<Pose> {
        self.trajectories[robot as usize].poses().copied().collect()
    }
}

/// Windows must be well formed, and a robot cannot be in two windows that
/// overlap in time, since that leaves its group ambiguous.
pub fn check_schedule(windows: &[Window], robots: usize) -> Result<(), SimError> {
    for (i, w) in windows.iter().enumerate() {
        let set: BTreeSet<RobotId> = w.robots.iter().copied().collect();
        if w.start > w.end {
            return Err(SimError::Schedule(format!(
                "window {i} ends ({}) before it starts ({})",
                w.end, w.start
            )));
        }
        if set.len() != w.robots.len() || set.len() < 2 {
            return Err(SimError::Schedule(format!(
                "window {i} needs at least two distinct robots"
            )));
        }
        if let Some(r) = set.iter().find(|&&r| r as usize >= robots) {
            return Err(SimError::Schedule(format!("window {i} names unknown robot {r}")));
        }
    }
    for (i, a) in windows.iter().enumerate() {
        for (j, b) in windows.iter().enumerate().skip(i + 1) {
            let overlap = a.start <= b.end && b.start <= a.end;
            if let Some(r) = a.robots.iter().find(|r| b.robots.contains(r)).filter(|_| overlap) {
                return Err(SimError::Schedule(format!(
                    "windows {i} and {j} overlap in time and both contain robot {r}"
                )));
            }
        }
    }
    Ok(())
}

/// Reads one robot's trajectory from a TUM or g2o file. g2o vertices are taken
/// in id order and must carry an estimate.
pub fn load_trajectory(path: &Path, format: TrajectoryFormat, robot: RobotId) -> Result<Trajectory, SimError> {
    let reader = BufReader::new(File::open(path).map_err(|e| SimError::File {
        path: path.to_path_buf(),
        source: e,
    })?);
    let traj = match format {
        TrajectoryFormat::Tum => parse_tum(reader, robot)?,
        TrajectoryFormat::G2o => {
            let graph = parse_g2o(reader)?;
            let poses: Vec<Pose> = graph
                .vertices()
                .iter()
                .map(|(k, p)| p.ok_or(SimError::Config(format!("g2o vertex {k} has no estimate"))))
                .collect::<Result<_, _>>()?;
            if poses.is_empty() {
                return Err(TrajectoryError::Empty.into());
            }
            let stamps: Vec<f64> = (0..poses.len()).map(|i| i as f64).collect();
            Trajectory::from_poses(robot, &stamps, &poses)?
        }
    };
    if traj.is_empty() {
        return Err(TrajectoryError::Empty.into());
    }
    Ok(traj.relabeled(robot))
}

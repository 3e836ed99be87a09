//! Deterministic multi-robot rendezvous simulation.
//!
//! Time advances one keyframe per step. Robots in range exchange heartbeats;
//! groups of mutually reachable robots then run a rendezvous: broker
//! election, descriptor bookkeeping, candidate generation, prioritization,
//! payload exchange, registration, anchoring, robust pose-graph optimization
//! and estimate broadcast. Every message goes to a [`MessageLedger`].

mod generators;
mod ledger;
mod run;
mod scenario;
mod sensors;

pub use generators::{
    clustered_scenario, crossing_loops, disjoint_scenario, generate, manhattan_grid, parallel_corridors, patrol_loops,
    shared_ring, staged_scenario, star_rendezvous, worst_case_scenario, GeneratorKind,
};
pub use ledger::{
    descriptor_bookkeeping, DescriptorBook, MessageKind, MessageLedger, MessageRecord, RendezvousRecord,
    RendezvousTrace,
};
pub use run::{graph_lambda2, in_range, run, RobotOutput, SimOutput};
pub use scenario::{
    check_schedule, load_trajectory, Communication, ExchangeMode, MessageSizes, NoiseModel, PlaceRecognitionParams,
    PrioritizationMode, Scenario, ScenarioConfig, TrajectoryFormat, TrajectorySource, Window, SIGMA_FLOOR,
};
pub use sensors::{
    sample_noise, simulate_geometric_verification, simulate_odometry, simulate_place_recognition, stream, Verification,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::exchange::ExchangeError;
use crate::g2o::G2oError;
use crate::graph::{GraphError, PoseKey};
use crate::prioritization::PrioritizationError;
use crate::trajectory::TrajectoryError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("invalid communication schedule: {0}")]
    Schedule(String),
    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trajectory: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("g2o: {0}")]
    G2o(#[from] G2oError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prioritization(#[from] PrioritizationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("payload for candidate {a} <-> {b} was not delivered")]
    PayloadMissing { a: PoseKey, b: PoseKey },
}

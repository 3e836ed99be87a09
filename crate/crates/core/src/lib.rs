//! Collaborative SLAM back-end building blocks: SE(3) pose graphs, budgeted
//! loop-closure prioritization by algebraic connectivity, exchange planning,
//! robust pose-graph optimization and a deterministic rendezvous simulator.

pub mod backend;
pub mod exchange;
pub mod g2o;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod prioritization;
pub mod sim;
pub mod trajectory;

pub use geometry::Pose;
pub use graph::{CandidateMatch, Measurement, MeasurementKind, MultiRobotPoseGraph, PoseKey, RobotId};

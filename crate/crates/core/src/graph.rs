//! Multi-robot pose graph data model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::geometry::Pose;

pub type RobotId = u32;

/// Keyframe identifier: robot plus per-robot keyframe index. Ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoseKey {
    pub robot_id: RobotId,
    pub frame_id: u64,
}

impl PoseKey {
    pub const fn new(robot_id: RobotId, frame_id: u64) -> Self {
        Self { robot_id, frame_id }
    }
}

impl fmt::Display for PoseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}:{}", self.robot_id, self.frame_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MeasurementKind {
    Odometry,
    IntraLoop,
    InterLoop,
}

impl MeasurementKind {
    pub fn is_loop(self) -> bool {
        !matches!(self, MeasurementKind::Odometry)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge endpoint {0} is not a vertex of the graph")]
    UnknownVertex(PoseKey),
    #[error("odometry edge {from} -> {to} must join consecutive frames of one robot")]
    BadOdometry { from: PoseKey, to: PoseKey },
    #[error("inter-robot loop closure {from} -> {to} joins frames of the same robot")]
    BadInterLoop { from: PoseKey, to: PoseKey },
    #[error("intra-robot loop closure {from} -> {to} joins frames of different robots")]
    BadIntraLoop { from: PoseKey, to: PoseKey },
    #[error("information weights must be positive and finite (kappa={kappa}, tau={tau})")]
    BadInformation { kappa: f64, tau: f64 },
    #[error("duplicate odometry edge {from} -> {to}")]
    DuplicateOdometry { from: PoseKey, to: PoseKey },
    #[error("robot {robot} odometry does not form a single chain: {reason}")]
    BrokenChain { robot: RobotId, reason: String },
    #[error("candidate {a} <-> {b} must join two different robots")]
    SameRobotCandidate { a: PoseKey, b: PoseKey },
    #[error("similarity score {0} is outside [0, 1]")]
    BadScore(f64),
}

/// A relative pose measurement `relative_pose ≈ T_from⁻¹ ∘ T_to` with scalar
/// rotation (`kappa`) and translation (`tau`) information weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub from: PoseKey,
    pub to: PoseKey,
    pub relative_pose: Pose,
    pub kappa: f64,
    pub tau: f64,
    pub kind: MeasurementKind,
}

impl Measurement {
    pub fn new(
        from: PoseKey,
        to: PoseKey,
        relative_pose: Pose,
        kappa: f64,
        tau: f64,
        kind: MeasurementKind,
    ) -> Result<Self, GraphError> {
        let m = Self {
            from,
            to,
            relative_pose,
            kappa,
            tau,
            kind,
        };
        m.validate()?;
        Ok(m)
    }

    /// Classification used when the kind is not stored explicitly (e.g. g2o input).
    pub fn infer_kind(from: PoseKey, to: PoseKey) -> MeasurementKind {
        if from.robot_id != to.robot_id {
            MeasurementKind::InterLoop
        } else if to.frame_id == from.frame_id + 1 {
            MeasurementKind::Odometry
        } else {
            MeasurementKind::IntraLoop
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let (from, to) = (self.from, self.to);
        match self.kind {
            MeasurementKind::Odometry => {
                if from.robot_id != to.robot_id || to.frame_id != from.frame_id + 1 {
                    return Err(GraphError::BadOdometry { from, to });
                }
            }
            MeasurementKind::InterLoop => {
                if from.robot_id == to.robot_id {
                    return Err(GraphError::BadInterLoop { from, to });
                }
            }
            MeasurementKind::IntraLoop => {
                if from.robot_id != to.robot_id {
                    return Err(GraphError::BadIntraLoop { from, to });
                }
            }
        }
        let ok = |w: f64| w > 0.0 && w.is_finite();
        if !ok(self.kappa) || !ok(self.tau) {
            return Err(GraphError::BadInformation {
                kappa: self.kappa,
                tau: self.tau,
            });
        }
        Ok(())
    }

    /// Unordered endpoint pair, smaller key first.
    pub fn pair(&self) -> (PoseKey, PoseKey) {
        ordered_pair(self.from, self.to)
    }
}

pub fn ordered_pair(a: PoseKey, b: PoseKey) -> (PoseKey, PoseKey) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A similarity-scored putative inter-robot loop closure awaiting geometric verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    pub vertex_a: PoseKey,
    pub vertex_b: PoseKey,
    pub score: f64,
}

impl CandidateMatch {
    pub fn new(vertex_a: PoseKey, vertex_b: PoseKey, score: f64) -> Result<Self, GraphError> {
        if vertex_a.robot_id == vertex_b.robot_id {
            return Err(GraphError::SameRobotCandidate {
                a: vertex_a,
                b: vertex_b,
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GraphError::BadScore(score));
        }
        Ok(Self {
            vertex_a,
            vertex_b,
            score,
        })
    }

    pub fn pair(&self) -> (PoseKey, PoseKey) {
        ordered_pair(self.vertex_a, self.vertex_b)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiRobotPoseGraph {
    vertices: BTreeMap<PoseKey, Option<Pose>>,
    edges: Vec<Measurement>,
    anchors: Vec<(PoseKey, Pose)>,
    odometry_pairs: BTreeSet<PoseKey>,
}

impl MultiRobotPoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, key: PoseKey, estimate: Option<Pose>) {
        let slot = self.vertices.entry(key).or_insert(None);
        if estimate.is_some() {
            *slot = estimate;
        }
    }

    pub fn set_estimate(&mut self, key: PoseKey, estimate: Pose) -> Result<(), GraphError> {
        match self.vertices.get_mut(&key) {
            Some(slot) => {
                *slot = Some(estimate);
                Ok(())
            }
            None => Err(GraphError::UnknownVertex(key)),
        }
    }

    pub fn add_edge(&mut self, edge: Measurement) -> Result<(), GraphError> {
        edge.validate()?;
        for k in [edge.from, edge.to] {
            if !self.vertices.contains_key(&k) {
                return Err(GraphError::UnknownVertex(k));
            }
        }
        if edge.kind == MeasurementKind::Odometry && !self.odometry_pairs.insert(edge.from) {
            return Err(GraphError::DuplicateOdometry {
                from: edge.from,
                to: edge.to,
            });
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn add_anchor(&mut self, key: PoseKey, prior: Pose) -> Result<(), GraphError> {
        if !self.vertices.contains_key(&key) {
            return Err(GraphError::UnknownVertex(key));
        }
        self.anchors.retain(|(k, _)| *k != key);
        self.anchors.push((key, prior));
        Ok(())
    }

    pub fn vertices(&self) -> &BTreeMap<PoseKey, Option<Pose>> {
        &self.vertices
    }

    pub fn edges(&self) -> &[Measurement] {
        &self.edges
    }

    pub fn anchors(&self) -> &[(PoseKey, Pose)] {
        &self.anchors
    }

    pub fn anchor_prior(&self, key: PoseKey) -> Option<Pose> {
        self.anchors.iter().find(|(k, _)| *k == key).map(|(_, p)| *p)
    }

    pub fn contains(&self, key: PoseKey) -> bool {
        self.vertices.contains_key(&key)
    }

    pub fn estimate(&self, key: PoseKey) -> Option<Pose> {
        self.vertices.get(&key).copied().flatten()
    }

    /// All vertex estimates that are present.
    pub fn estimates(&self) -> BTreeMap<PoseKey, Pose> {
        self.vertices.iter().filter_map(|(k, p)| p.map(|p| (*k, p))).collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn robots(&self) -> BTreeSet<RobotId> {
        self.vertices.keys().map(|k| k.robot_id).collect()
    }

    pub fn has_odometry_from(&self, key: PoseKey) -> bool {
        self.odometry_pairs.contains(&key)
    }

    pub fn keys_of(&self, robot: RobotId) -> impl Iterator<Item = PoseKey> + '_ {
        self.vertices
            .range(PoseKey::new(robot, 0)..=PoseKey::new(robot, u64::MAX))
            .map(|(k, _)| *k)
    }

    /// Checks that every robot's frames are consecutive and joined by exactly one odometry path.
    pub fn check_odometry_chains(&self) -> Result<(), GraphError> {
        for robot in self.robots() {
            let frames: Vec<u64> = self.keys_of(robot).map(|k| k.frame_id).collect();
            for w in frames.windows(2) {
                if w[1] != w[0] + 1 {
                    return Err(GraphError::BrokenChain {
                        robot,
                        reason: format!("frame gap between {} and {}", w[0], w[1]),
                    });
                }
                if !self.odometry_pairs.contains(&PoseKey::new(robot, w[0])) {
                    return Err(GraphError::BrokenChain {
                        robot,
                        reason: format!("missing odometry {} -> {}", w[0], w[1]),
                    });
                }
            }
        }
        Ok(())
    }

    /// The subgraph induced by `robots`: their vertices, edges with both
    /// endpoints inside, and anchors inside.
    pub fn restricted_to(&self, robots: &BTreeSet<RobotId>) -> MultiRobotPoseGraph {
        let mut g = MultiRobotPoseGraph::new();
        for (k, p) in &self.vertices {
            if robots.contains(&k.robot_id) {
                g.add_vertex(*k, *p);
            }
        }
        for e in &self.edges {
            if robots.contains(&e.from.robot_id) && robots.contains(&e.to.robot_id) {
                g.add_edge(e.clone()).expect("subgraph of a valid graph");
            }
        }
        for (k, p) in &self.anchors {
            if robots.contains(&k.robot_id) {
                g.add_anchor(*k, *p).expect("anchor vertex kept");
            }
        }
        g
    }

    /// Same graph with only the edges accepted by `keep`.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize, &Measurement) -> bool) -> Self {
        let mut g = MultiRobotPoseGraph::new();
        g.vertices = self.vertices.clone();
        g.anchors = self.anchors.clone();
        for (i, e) in self.edges.iter().enumerate() {
            if keep(i, e) {
                g.add_edge(e.clone()).expect("edge of a valid graph");
            }
        }
        g
    }
}

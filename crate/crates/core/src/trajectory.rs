//! Timestamped keyframe trajectories, TUM text I/O and trajectory splitting.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::Pose;
use crate::graph::{PoseKey, RobotId};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("timestamps of robot {robot} are not strictly increasing at {key}")]
    NonMonotonic { robot: RobotId, key: PoseKey },
    #[error("duplicate key {0}")]
    DuplicateKey(PoseKey),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trajectory is empty")]
    Empty,
    #[error("cannot split {len} poses into {parts} parts")]
    BadSplit { len: usize, parts: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub timestamp: f64,
    pub key: PoseKey,
    pub pose: Pose,
}

/// Ordered keyframe poses; timestamps strictly increase per robot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self, TrajectoryError> {
        let mut t = Trajectory::default();
        for p in points {
            t.push(p)?;
        }
        Ok(t)
    }

    /// A single-robot trajectory with frames numbered from zero.
    pub fn from_poses(robot: RobotId, timestamps: &[f64], poses: &[Pose]) -> Result<Self, TrajectoryError> {
        assert_eq!(timestamps.len(), poses.len());
        Self::new(
            timestamps
                .iter()
                .zip(poses)
                .enumerate()
                .map(|(i, (t, p))| TrajectoryPoint {
                    timestamp: *t,
                    key: PoseKey::new(robot, i as u64),
                    pose: *p,
                })
                .collect(),
        )
    }

    pub fn push(&mut self, point: TrajectoryPoint) -> Result<(), TrajectoryError> {
        let robot = point.key.robot_id;
        if let Some(prev) = self.points.iter().rev().find(|p| p.key.robot_id == robot) {
            if point.timestamp.partial_cmp(&prev.timestamp) != Some(std::cmp::Ordering::Greater) {
                return Err(TrajectoryError::NonMonotonic { robot, key: point.key });
            }
        }
        if self.points.iter().any(|p| p.key == point.key) {
            return Err(TrajectoryError::DuplicateKey(point.key));
        }
        self.points.push(point);
        Ok(())
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> + '_ {
        self.points.iter().map(|p| &p.pose)
    }

    pub fn pose_map(&self) -> BTreeMap<PoseKey, Pose> {
        self.points.iter().map(|p| (p.key, p.pose)).collect()
    }

    pub fn get(&self, key: PoseKey) -> Option<&TrajectoryPoint> {
        self.points.iter().find(|p| p.key == key)
    }

    /// Keeps the pose sequence but relabels every key to `robot` with frames from zero.
    pub fn relabeled(&self, robot: RobotId) -> Trajectory {
        Trajectory {
            points: self
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| TrajectoryPoint {
                    key: PoseKey::new(robot, i as u64),
                    ..*p
                })
                .collect(),
        }
    }
}

/// Splits into `parts` contiguous segments, relabeled to robots `0..parts`
/// with frames restarting at zero. Earlier segments take the remainder.
pub fn split_trajectory(traj: &Trajectory, parts: usize) -> Result<Vec<Trajectory>, TrajectoryError> {
    let len = traj.len();
    if parts == 0 || parts > len {
        return Err(TrajectoryError::BadSplit { len, parts });
    }
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for r in 0..parts {
        let n = base + usize::from(r < extra);
        let seg = Trajectory {
            points: traj.points[start..start + n].to_vec(),
        };
        out.push(seg.relabeled(r as RobotId));
        start += n;
    }
    Ok(out)
}

/// Reads `timestamp tx ty tz qx qy qz qw` lines; keys are `(robot, 0..)`.
pub fn parse_tum<R: BufRead>(reader: R, robot: RobotId) -> Result<Trajectory, TrajectoryError> {
    let mut traj = Trajectory::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| TrajectoryError::Parse {
                line: line_no,
                message: "invalid number".into(),
            })?;
        if fields.len() != 8 {
            return Err(TrajectoryError::Parse {
                line: line_no,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let pose = Pose::from_quaternion(
            Vector3::new(fields[1], fields[2], fields[3]),
            fields[4],
            fields[5],
            fields[6],
            fields[7],
        )
        .map_err(|e| TrajectoryError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let key = PoseKey::new(robot, traj.len() as u64);
        traj.push(TrajectoryPoint {
            timestamp: fields[0],
            key,
            pose,
        })
        .map_err(|e| TrajectoryError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
    }
    if traj.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    Ok(traj)
}

pub fn write_tum<W: Write>(traj: &Trajectory, mut out: W) -> io::Result<()> {
    for p in traj.points() {
        let t = p.pose.translation;
        let [qx, qy, qz, qw] = p.pose.quaternion();
        writeln!(out, "{} {} {} {} {qx} {qy} {qz} {qw}", p.timestamp, t[0], t[1], t[2])?;
    }
    Ok(())
}

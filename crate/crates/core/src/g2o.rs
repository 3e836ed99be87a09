//! g2o text interchange (`VERTEX_SE3:QUAT`, `EDGE_SE3:QUAT`, `FIX`).
//!
//! Vertex ids encode keys as `robot_id * 10^8 + frame_id`. The 6×6 edge
//! information block (translation first, then rotation, as g2o stores it) is
//! reduced to scalar weights: `tau` is the mean of the translational diagonal
//! and `kappa` the mean of the rotational diagonal. Writing emits the
//! corresponding isotropic block.

use std::io::{self, BufRead, Write};

use nalgebra::{Matrix6, Vector3};
use thiserror::Error;

use crate::geometry::Pose;
use crate::graph::{GraphError, Measurement, MultiRobotPoseGraph, PoseKey};

pub const FRAMES_PER_ROBOT: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum G2oError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: information block is not positive definite")]
    NotPositiveDefinite { line: usize },
    #[error("line {line}: {source}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn key_to_id(key: PoseKey) -> u64 {
    debug_assert!(key.frame_id < FRAMES_PER_ROBOT);
    u64::from(key.robot_id) * FRAMES_PER_ROBOT + key.frame_id
}

pub fn id_to_key(id: u64) -> PoseKey {
    PoseKey::new((id / FRAMES_PER_ROBOT) as u32, id % FRAMES_PER_ROBOT)
}

pub fn parse_g2o<R: BufRead>(reader: R) -> Result<MultiRobotPoseGraph, G2oError> {
    let mut graph = MultiRobotPoseGraph::new();
    let mut fixed = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let tag = tokens.next().unwrap_or_default();
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "VERTEX_SE3:QUAT" => {
                expect_len(&rest, 8, line_no)?;
                let id = parse_id(rest[0], line_no)?;
                let v = parse_floats(&rest[1..], line_no)?;
                let pose = pose_from_record(&v, line_no)?;
                graph.add_vertex(id_to_key(id), Some(pose));
            }
            "EDGE_SE3:QUAT" => {
                expect_len(&rest, 30, line_no)?;
                let from = id_to_key(parse_id(rest[0], line_no)?);
                let to = id_to_key(parse_id(rest[1], line_no)?);
                let v = parse_floats(&rest[2..], line_no)?;
                let relative_pose = pose_from_record(&v[..7], line_no)?;
                let info = information_from_upper(&v[7..]);
                if info.cholesky().is_none() {
                    return Err(G2oError::NotPositiveDefinite { line: line_no });
                }
                let tau = (info[(0, 0)] + info[(1, 1)] + info[(2, 2)]) / 3.0;
                let kappa = (info[(3, 3)] + info[(4, 4)] + info[(5, 5)]) / 3.0;
                let mut kind = Measurement::infer_kind(from, to);
                if kind == crate::graph::MeasurementKind::Odometry && graph.has_odometry_from(from) {
                    kind = crate::graph::MeasurementKind::IntraLoop;
                }
                let m = Measurement::new(from, to, relative_pose, kappa, tau, kind)
                    .map_err(|source| G2oError::Graph { line: line_no, source })?;
                graph
                    .add_edge(m)
                    .map_err(|source| G2oError::Graph { line: line_no, source })?;
            }
            "FIX" => {
                if rest.is_empty() {
                    return Err(parse_err(line_no, "FIX without vertex id"));
                }
                for tok in rest {
                    fixed.push((parse_id(tok, line_no)?, line_no));
                }
            }
            other => return Err(parse_err(line_no, &format!("unsupported record `{other}`"))),
        }
    }
    for (id, line) in fixed {
        let key = id_to_key(id);
        let prior = graph.estimate(key).ok_or(G2oError::Graph {
            line,
            source: GraphError::UnknownVertex(key),
        })?;
        graph
            .add_anchor(key, prior)
            .map_err(|source| G2oError::Graph { line, source })?;
    }
    Ok(graph)
}

pub fn parse_g2o_str(text: &str) -> Result<MultiRobotPoseGraph, G2oError> {
    parse_g2o(text.as_bytes())
}

/// Writes vertices in key order, then edges in insertion order, then `FIX`
/// lines for anchors. Vertices without an estimate are written at identity.
pub fn write_g2o<W: Write>(graph: &MultiRobotPoseGraph, mut out: W) -> io::Result<()> {
    for (key, pose) in graph.vertices() {
        let pose = pose.unwrap_or_default();
        writeln!(out, "VERTEX_SE3:QUAT {} {}", key_to_id(*key), pose_record(&pose))?;
    }
    for e in graph.edges() {
        let (t, k) = (e.tau, e.kappa);
        let z = 0.0;
        writeln!(
            out,
            "EDGE_SE3:QUAT {} {} {} {t} {z} {z} {z} {z} {z} {t} {z} {z} {z} {z} {t} {z} {z} {z} {k} {z} {z} {k} {z} {k}",
            key_to_id(e.from),
            key_to_id(e.to),
            pose_record(&e.relative_pose),
        )?;
    }
    for (key, _) in graph.anchors() {
        writeln!(out, "FIX {}", key_to_id(*key))?;
    }
    Ok(())
}

pub fn to_g2o_string(graph: &MultiRobotPoseGraph) -> String {
    let mut buf = Vec::new();
    write_g2o(graph, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

fn pose_record(p: &Pose) -> String {
    let [qx, qy, qz, qw] = p.quaternion();
    let t = p.translation;
    format!("{} {} {} {qx} {qy} {qz} {qw}", t[0], t[1], t[2])
}

fn pose_from_record(v: &[f64], line: usize) -> Result<Pose, G2oError> {
    Pose::from_quaternion(Vector3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6])
        .map_err(|e| parse_err(line, &e.to_string()))
}

fn information_from_upper(v: &[f64]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let mut idx = 0;
    for i in 0..6 {
        for j in i..6 {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    m
}

fn parse_err(line: usize, message: &str) -> G2oError {
    G2oError::Parse {
        line,
        message: message.to_string(),
    }
}

fn expect_len(tokens: &[&str], n: usize, line: usize) -> Result<(), G2oError> {
    if tokens.len() != n {
        return Err(parse_err(line, &format!("expected {n} fields, found {}", tokens.len())));
    }
    Ok(())
}

fn parse_id(tok: &str, line: usize) -> Result<u64, G2oError> {
    let id: u64 = tok
        .parse()
        .map_err(|_| parse_err(line, &format!("invalid vertex id `{tok}`")))?;
    if id / FRAMES_PER_ROBOT > u64::from(u32::MAX) {
        return Err(parse_err(line, &format!("vertex id `{tok}` out of range")));
    }
    Ok(id)
}

fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>, G2oError> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, &format!("invalid number `{t}`")))
        })
        .collect()
}

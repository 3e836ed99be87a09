use std::io::Write;

use serde::Serialize;

use super::{edge_cost, OptimizationResult};
use crate::graph::{MeasurementKind, MultiRobotPoseGraph, RobotId};

#[derive(Serialize)]
struct EdgeRow {
    edge: usize,
    from_robot: RobotId,
    from_frame: u64,
    to_robot: RobotId,
    to_frame: u64,
    kind: &'static str,
    inlier: bool,
    residual: f64,
}

fn kind_name(kind: MeasurementKind) -> &'static str {
    match kind {
        MeasurementKind::Odometry => "odometry",
        MeasurementKind::IntraLoop => "intra_loop",
        MeasurementKind::InterLoop => "inter_loop",
    }
}

/// One row per edge: endpoints, kind, inlier flag (odometry is always an
/// inlier) and the final edge cost.
pub fn write_result_csv<W: Write>(
    graph: &MultiRobotPoseGraph,
    result: &OptimizationResult,
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (i, m) in graph.edges().iter().enumerate() {
        let residual = match (result.estimates.get(&m.from), result.estimates.get(&m.to)) {
            (Some(a), Some(b)) => edge_cost(a, b, m),
            _ => f64::NAN,
        };
        wtr.serialize(EdgeRow {
            edge: i,
            from_robot: m.from.robot_id,
            from_frame: m.from.frame_id,
            to_robot: m.to.robot_id,
            to_frame: m.to.frame_id,
            kind: kind_name(m.kind),
            inlier: result.inlier_flags.get(&i).copied().unwrap_or(true),
            residual,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PrioritizationError;
use crate::graph::{CandidateMatch, PoseKey, RobotId};

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRow {
    robot_a: RobotId,
    frame_a: u64,
    robot_b: RobotId,
    frame_b: u64,
    score: f64,
}

/// Reads `robot_a,frame_a,robot_b,frame_b,score` rows.
pub fn read_candidates_csv<R: Read>(reader: R) -> Result<Vec<CandidateMatch>, PrioritizationError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CandidateRow>().enumerate() {
        let row = row.map_err(|e| PrioritizationError::Csv(e.to_string()))?;
        let c = CandidateMatch::new(
            PoseKey::new(row.robot_a, row.frame_a),
            PoseKey::new(row.robot_b, row.frame_b),
            row.score,
        )
        .map_err(|e| PrioritizationError::Csv(format!("row {}: {e}", i + 1)))?;
        out.push(c);
    }
    Ok(out)
}

pub fn write_candidates_csv<W: Write>(candidates: &[CandidateMatch], writer: W) -> Result<(), PrioritizationError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for c in candidates {
        wtr.serialize(CandidateRow {
            robot_a: c.vertex_a.robot_id,
            frame_a: c.vertex_a.frame_id,
            robot_b: c.vertex_b.robot_id,
            frame_b: c.vertex_b.frame_id,
            score: c.score,
        })
        .map_err(|e| PrioritizationError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| PrioritizationError::Csv(e.to_string()))
}

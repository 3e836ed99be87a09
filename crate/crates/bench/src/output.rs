//! Files written by the command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cslam_core::g2o::write_g2o;
use cslam_core::sim::{Scenario, SimOutput, TrajectoryFormat, TrajectorySource};
use cslam_core::trajectory::write_tum;
use serde::Serialize;

use crate::BenchError;

fn create_dir(dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never see a half-written file.
fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<File>) -> Result<(), BenchError>,
) -> Result<(), BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| BenchError::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    fill(&mut w)?;
    w.flush().map_err(|e| BenchError::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))
}

/// One CSV row per element, header from the field names.
pub fn write_csv_atomic<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush().map_err(|e| BenchError::io(path, e))
    })
}

/// `ledger.csv`, `trace.csv` and one `robot_<id>.g2o` per robot.
pub fn write_run_outputs(dir: &Path, out: &SimOutput) -> Result<Vec<PathBuf>, BenchError> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let ledger = dir.join("ledger.csv");
    write_atomic(&ledger, |w| Ok(out.ledger.write_csv(w)?))?;
    written.push(ledger);
    let trace = dir.join("trace.csv");
    write_atomic(&trace, |w| Ok(out.trace.write_csv(w)?))?;
    written.push(trace);
    for (id, r) in out.robots.iter().enumerate() {
        let path = dir.join(format!("robot_{id}.g2o"));
        write_atomic(&path, |w| write_g2o(&r.graph, w).map_err(|e| BenchError::io(&path, e)))?;
        written.push(path);
    }
    Ok(written)
}

/// Ground-truth trajectories as `robot_<id>.tum` plus a `scenario.toml` that
/// loads them, so the run can be repeated from the files alone.
pub fn write_scenario_files(dir: &Path, scenario: &Scenario) -> Result<Vec<PathBuf>, BenchError> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    for (id, traj) in scenario.trajectories.iter().enumerate() {
        let name = PathBuf::from(format!("robot_{id}.tum"));
        let path = dir.join(&name);
        write_atomic(&path, |w| write_tum(traj, w).map_err(|e| BenchError::io(&path, e)))?;
        written.push(path);
        names.push(name);
    }
    let mut cfg = scenario.config.clone();
    cfg.trajectories = TrajectorySource::Files {
        paths: names,
        format: TrajectoryFormat::Tum,
    };
    cfg.split = None;
    let path = dir.join("scenario.toml");
    let text = cfg.to_toml();
    write_atomic(&path, |w| {
        w.write_all(text.as_bytes()).map_err(|e| BenchError::io(&path, e))
    })?;
    written.push(path);
    Ok(written)
}

//! Synthetic ground-truth trajectories and preset scenarios.
//!
//! Keyframes are one meter apart and every pose faces along its direction of
//! travel. Candidate topology of each generator, for a match radius `r`:
//!
//! - parallel corridors: straight lines `spacing` apart. Neighboring corridors
//!   match in a band `|i − j| < √(r² − spacing²)`; with `r² ≤ spacing² + 1`
//!   the candidates form a perfect matching and no keyframe is shared.
//! - crossing loops: circles of radius `spacing` whose centers sit `spacing`
//!   apart, so neighbors cross twice per lap. Candidates come in dense
//!   bipartite clusters around the crossings, where a few keyframes cover
//!   many candidates.
//! - star rendezvous: out-and-back runs along evenly spaced spokes; every
//!   robot matches every other near the hub, one dense cluster.
//! - Manhattan grid: seeded walks on a street grid with blocks `spacing`
//!   apart; candidates follow shared street segments, so they form long
//!   bands with occasional clusters at intersections.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{
    Communication, PlaceRecognitionParams, PrioritizationMode, ScenarioConfig, TrajectorySource, Window,
};
use super::SimError;
use crate::geometry::Pose;
use crate::graph::RobotId;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    ParallelCorridors,
    CrossingLoops,
    StarRendezvous,
    ManhattanGrid,
    /// Every robot drives the same ring, starting a few meters behind the previous one.
    SharedRing,
    /// Robot 0 patrols a loop of radius `spacing / 2` twice for each lap the
    /// others drive on loops of radius `spacing` through it, so every
    /// crossing pairs about twice as many robot-0 keyframes as the other side.
    PatrolLoops,
}

pub fn generate(
    kind: GeneratorKind,
    robots: usize,
    length: usize,
    spacing: f64,
    seed: u64,
) -> Result<Vec<Trajectory>, SimError> {
    if robots == 0 || length == 0 {
        return Err(SimError::Config(
            "generators need at least one robot and one keyframe".into(),
        ));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(SimError::Config(format!(
            "generator spacing must be positive, got {spacing}"
        )));
    }
    let poses = match kind {
        GeneratorKind::ParallelCorridors => parallel_corridors(robots, length, spacing),
        GeneratorKind::CrossingLoops => crossing_loops(robots, length, spacing),
        GeneratorKind::StarRendezvous => star_rendezvous(robots, length),
        GeneratorKind::ManhattanGrid => manhattan_grid(robots, length, spacing, seed),
        GeneratorKind::SharedRing => shared_ring(robots, length, spacing),
        GeneratorKind::PatrolLoops => patrol_loops(robots, length, spacing),
    };
    poses
        .into_iter()
        .enumerate()
        .map(|(r, p)| {
            let stamps: Vec<f64> = (0..p.len()).map(|i| i as f64).collect();
            Ok(Trajectory::from_poses(r as RobotId, &stamps, &p)?)
        })
        .collect()
}

fn planar(x: f64, y: f64, yaw: f64) -> Pose {
    Pose::rot_z(yaw, Vector3::new(x, y, 0.0))
}

pub fn parallel_corridors(robots: usize, length: usize, spacing: f64) -> Vec<Vec<Pose>> {
    (0..robots)
        .map(|r| (0..length).map(|i| planar(i as f64, r as f64 * spacing, 0.0)).collect())
        .collect()
}

pub fn crossing_loops(robots: usize, length: usize, radius: f64) -> Vec<Vec<Pose>> {
    (0..robots)
        .map(|r| {
            let cx = r as f64 * radius;
            // start on the far side from the previous circle so robots do not begin at a crossing
            let phase = if r % 2 == 0 { 0.0 } else { PI };
            (0..length)
                .map(|i| {
                    let a = phase + i as f64 / radius;
                    planar(cx + radius * a.cos(), radius * a.sin(), a + PI / 2.0)
                })
                .collect()
        })
        .collect()
}

pub fn star_rendezvous(robots: usize, length: usize) -> Vec<Vec<Pose>> {
    let half = length.div_ceil(2);
    (0..robots)
        .map(|r| {
            let theta = TAU * r as f64 / robots as f64;
            let (s, c) = theta.sin_cos();
            (0..length)
                .map(|i| {
                    let (d, yaw) = if i < half {
                        (i as f64, theta)
                    } else {
                        ((2 * half - 1 - i) as f64, theta + PI)
                    };
                    // a small lateral offset per leg keeps the way out and back apart
                    let lateral = if i < half { 0.25 } else { -0.25 };
                    planar(d * c - lateral * s, d * s + lateral * c, yaw)
                })
                .collect()
        })
        .collect()
}

/// Seeded walks on a `4 × 4`-block street grid. At every intersection a robot
/// turns left, right or goes straight with equal probability, never leaving
/// the grid and never reversing.
pub fn manhattan_grid(robots: usize, length: usize, block: f64, seed: u64) -> Vec<Vec<Pose>> {
    const BLOCKS: i64 = 4;
    let cells = block.round().max(1.0) as i64;
    let extent = BLOCKS * cells;
    let dirs: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    (0..robots)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x6d61_6e68 + r as u64));
            let mut pos = ((r as i64 % (BLOCKS + 1)) * cells, 0i64);
            let mut dir = 1usize;
            let mut out = Vec::with_capacity(length);
            for _ in 0..length {
                out.push(planar(pos.0 as f64, pos.1 as f64, dir as f64 * PI / 2.0));
                if pos.0 % cells == 0 && pos.1 % cells == 0 {
                    let options: Vec<usize> = [dir, (dir + 1) % 4, (dir + 3) % 4]
                        .into_iter()
                        .filter(|&d| {
                            let n = (pos.0 + dirs[d].0 * cells, pos.1 + dirs[d].1 * cells);
                            (0..=extent).contains(&n.0) && (0..=extent).contains(&n.1)
                        })
                        .collect();
                    dir = if options.is_empty() {
                        (dir + 2) % 4
                    } else {
                        options[rng.random_range(0..options.len())]
                    };
                }
                pos = (pos.0 + dirs[dir].0, pos.1 + dirs[dir].1);
            }
            out
        })
        .collect()
}

/// Counter-clockwise laps of a circle of radius `radius`; robot `r` starts
/// `4r` meters behind robot 0.
pub fn shared_ring(robots: usize, length: usize, radius: f64) -> Vec<Vec<Pose>> {
    (0..robots)
        .map(|r| {
            (0..length)
                .map(|i| {
                    let a = (i as f64 - 4.0 * r as f64) / radius;
                    planar(radius * a.cos(), radius * a.sin(), a + PI / 2.0)
                })
                .collect()
        })
        .collect()
}

/// Circle of `radius` around `center`, starting at angle `phase`, with
/// 1 m chords between keyframes.
fn circle(center: (f64, f64), radius: f64, phase: f64, length: usize) -> Vec<Pose> {
    let step = 2.0 * (0.5 / radius).min(1.0).asin();
    (0..length)
        .map(|i| {
            let a = phase + i as f64 * step;
            planar(
                center.0 + radius * a.cos(),
                center.1 + radius * a.sin(),
                a + step / 2.0 + PI / 2.0,
            )
        })
        .collect()
}

pub fn patrol_loops(robots: usize, length: usize, radius: f64) -> Vec<Vec<Pose>> {
    let others = robots.saturating_sub(1).max(1) as f64;
    (0..robots)
        .map(|r| {
            if r == 0 {
                return circle((0.0, 0.0), radius / 2.0, PI, length);
            }
            let dir = TAU * (r - 1) as f64 / others;
            let center = (radius * dir.cos(), radius * dir.sin());
            // start on the far side of the big loop, away from the patrol
            circle(center, radius, dir, length)
        })
        .collect()
}

/// Six robots on a shared ring meeting in three scheduled groups:
/// `{0, 4, 5}` at step 30, `{2, 3, 4}` at step 60 and `{1, 2}` at step 90.
pub fn staged_scenario(seed: u64) -> ScenarioConfig {
    let window = |t: u64, robots: &[RobotId]| Window {
        start: t,
        end: t,
        robots: robots.to_vec(),
    };
    ScenarioConfig {
        seed,
        budget: 10,
        rounds: 2,
        communication: Communication::Schedule {
            windows: vec![window(30, &[0, 4, 5]), window(60, &[2, 3, 4]), window(90, &[1, 2])],
        },
        trajectories: TrajectorySource::Generator {
            generator: GeneratorKind::SharedRing,
            robots: 6,
            length: 100,
            spacing: 16.0,
        },
        ..ScenarioConfig::default()
    }
}

/// One Manhattan walk cut into two robots that only meet after their last keyframe.
pub fn worst_case_scenario(seed: u64, mode: PrioritizationMode) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        budget: 1,
        rounds: 1_000_000,
        prioritization: mode,
        worst_case: true,
        place_recognition: PlaceRecognitionParams {
            match_radius: 1.5,
            ..PlaceRecognitionParams::default()
        },
        trajectories: TrajectorySource::Generator {
            generator: GeneratorKind::ManhattanGrid,
            robots: 1,
            length: 160,
            spacing: 8.0,
        },
        split: Some(2),
        ..ScenarioConfig::default()
    }
}

/// A patrol loop crossed by one larger loop: candidates cluster around the
/// two crossings, with robot 0 seen twice as often there as robot 1.
pub fn clustered_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        worst_case: true,
        trajectories: TrajectorySource::Generator {
            generator: GeneratorKind::PatrolLoops,
            robots: 2,
            length: 63,
            spacing: 10.0,
        },
        ..ScenarioConfig::default()
    }
}

/// Parallel corridors whose candidates form a perfect matching.
pub fn disjoint_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        worst_case: true,
        place_recognition: PlaceRecognitionParams {
            match_radius: 2.2,
            ..PlaceRecognitionParams::default()
        },
        trajectories: TrajectorySource::Generator {
            generator: GeneratorKind::ParallelCorridors,
            robots: 2,
            length: 40,
            spacing: 2.0,
        },
        ..ScenarioConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_are_one_meter() {
        for kind in [
            GeneratorKind::ParallelCorridors,
            GeneratorKind::CrossingLoops,
            GeneratorKind::ManhattanGrid,
            GeneratorKind::SharedRing,
            GeneratorKind::PatrolLoops,
        ] {
            for t in generate(kind, 3, 40, 8.0, 5).unwrap() {
                let p: Vec<&Pose> = t.poses().collect();
                for w in p.windows(2) {
                    let d = (w[1].translation - w[0].translation).norm();
                    assert!((d - 1.0).abs() < 1e-3, "{kind:?}: step {d}");
                }
            }
        }
    }

    #[test]
    fn star_meets_at_hub() {
        let t = generate(GeneratorKind::StarRendezvous, 4, 20, 1.0, 0).unwrap();
        for a in &t {
            assert!(a.points()[0].pose.translation.norm() < 0.3);
            assert!(a.points()[19].pose.translation.norm() < 0.3);
        }
    }

    #[test]
    fn manhattan_stays_on_grid() {
        for t in generate(GeneratorKind::ManhattanGrid, 2, 300, 8.0, 11).unwrap() {
            for p in t.poses() {
                let (x, y) = (p.translation.x, p.translation.y);
                assert!((0.0..=32.0).contains(&x) && (0.0..=32.0).contains(&y));
                assert!(x.rem_euclid(8.0) == 0.0 || y.rem_euclid(8.0) == 0.0);
            }
        }
    }

    #[test]
    fn loops_cross() {
        let t = crossing_loops(2, 63, 10.0);
        let min = t[0]
            .iter()
            .flat_map(|a| t[1].iter().map(move |b| (a.translation - b.translation).norm()))
            .fold(f64::INFINITY, f64::min);
        assert!(min < 1.0);
    }

    #[test]
    fn patrol_laps_twice_per_big_lap() {
        let t = patrol_loops(2, 63, 10.0);
        let near = |r: usize, other: usize| {
            t[r].iter()
                .filter(|a| t[other].iter().any(|b| (a.translation - b.translation).norm() < 3.0))
                .count()
        };
        let (a, b) = (near(0, 1), near(1, 0));
        assert!(b > 0 && a as f64 > 1.6 * b as f64, "{a} vs {b}");
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(generate(GeneratorKind::SharedRing, 0, 10, 1.0, 0).is_err());
        assert!(generate(GeneratorKind::SharedRing, 1, 10, 0.0, 0).is_err());
    }
}

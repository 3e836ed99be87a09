//! Simulated odometry, place recognition and geometric verification.
//!
//! Random draws come from ChaCha streams keyed by the scenario seed and the
//! keys involved, so a pair's score and verification outcome do not depend on
//! when, or how often, the pair is evaluated.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scenario::{NoiseModel, PlaceRecognitionParams};
use super::SimError;
use crate::exchange::TransmissionPlan;
use crate::geometry::Pose;
use crate::graph::{ordered_pair, CandidateMatch, Measurement, MeasurementKind, PoseKey};
use crate::trajectory::{Trajectory, TrajectoryPoint};

const ODOMETRY: u64 = 1;
const SCORE: u64 = 2;
const SPURIOUS: u64 = 3;
const VERIFY: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, parts…)`.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &p in parts {
        h = splitmix(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn key_bits(k: PoseKey) -> u64 {
    (u64::from(k.robot_id) << 40) ^ k.frame_id
}

fn pair_stream(seed: u64, salt: u64, a: PoseKey, b: PoseKey) -> ChaCha8Rng {
    let (a, b) = ordered_pair(a, b);
    stream(seed, &[salt, key_bits(a), key_bits(b)])
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `exp(ε)` with `ε ~ N(0, diag(σ_R²·I, σ_t²·I))`.
pub fn sample_noise(rng: &mut ChaCha8Rng, noise: &NoiseModel) -> Pose {
    let mut xi = Vector6::zeros();
    for i in 0..6 {
        let s = if i < 3 {
            noise.rotation_sigma
        } else {
            noise.translation_sigma
        };
        xi[i] = s * normal(rng);
    }
    Pose::exp(&xi)
}

/// Consecutive relative poses perturbed on the right by noise, with
/// `κ = 1/σ_R²` and `τ = 1/σ_t²`.
pub fn simulate_odometry(traj: &Trajectory, noise: &NoiseModel, seed: u64) -> Result<Vec<Measurement>, SimError> {
    let (kappa, tau) = noise.information();
    let pts = traj.points();
    let Some(first) = pts.first() else {
        return Ok(Vec::new());
    };
    let mut rng = stream(seed, &[ODOMETRY, u64::from(first.key.robot_id)]);
    pts.windows(2)
        .map(|w| {
            let rel = w[0].pose.between(&w[1].pose).compose(&sample_noise(&mut rng, noise));
            Ok(Measurement::new(
                w[0].key,
                w[1].key,
                rel,
                kappa,
                tau,
                MeasurementKind::Odometry,
            )?)
        })
        .collect()
}

fn score_at(d: f64, params: &PlaceRecognitionParams, rng: &mut ChaCha8Rng) -> f64 {
    let scale = params.match_radius / 3.0;
    ((-d / scale).exp() + params.score_sigma * normal(rng)).clamp(0.0, 1.0)
}

fn distance(a: &TrajectoryPoint, b: &TrajectoryPoint) -> f64 {
    (a.pose.translation - b.pose.translation).norm()
}

/// Candidates between keyframes of two robots closer than the match radius,
/// scored `clamp(exp(−3d/r) + N(0, σ_s²), 0, 1)`. Each one may bring along a
/// spurious candidate between two keyframes more than `2r` apart, scored as if
/// they were `r/2` apart. Spurious pairs are deduplicated.
pub fn simulate_place_recognition(
    a: &[TrajectoryPoint],
    b: &[TrajectoryPoint],
    params: &PlaceRecognitionParams,
    seed: u64,
) -> Vec<CandidateMatch> {
    const ATTEMPTS: usize = 32;
    let r = params.match_radius;
    let mut out = Vec::new();
    let mut spurious = Vec::new();
    for pa in a {
        for pb in b {
            let d = distance(pa, pb);
            if d >= r {
                continue;
            }
            let mut rng = pair_stream(seed, SCORE, pa.key, pb.key);
            let score = score_at(d, params, &mut rng);
            out.push(CandidateMatch::new(pa.key, pb.key, score).expect("score clamped to [0, 1]"));

            let mut rng = pair_stream(seed, SPURIOUS, pa.key, pb.key);
            if !rng.random_bool(params.outlier_probability) {
                continue;
            }
            for _ in 0..ATTEMPTS {
                let (qa, qb) = (&a[rng.random_range(0..a.len())], &b[rng.random_range(0..b.len())]);
                if distance(qa, qb) > 2.0 * r {
                    let score = score_at(r / 2.0, params, &mut rng);
                    spurious.push(CandidateMatch::new(qa.key, qb.key, score).expect("score clamped to [0, 1]"));
                    break;
                }
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in spurious {
        if seen.insert(c.pair()) {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    /// A relative pose from the smaller key of the pair to the larger one.
    Accepted(Measurement),
    Rejected,
}

/// Registers one candidate once its payload is delivered. Pairs closer than
/// the match radius are true matches: they yield the ground-truth relative
/// pose with loop noise, or a rejection with the registration-failure
/// probability. Anything farther is perceptual aliasing and yields a gross
/// error: a random rotation and a translation offset drawn from the
/// configured range.
#[allow(clippy::too_many_arguments)]
pub fn simulate_geometric_verification(
    candidate: &CandidateMatch,
    plan: &TransmissionPlan,
    truth_a: &Pose,
    truth_b: &Pose,
    params: &PlaceRecognitionParams,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Verification, SimError> {
    if !plan.covers(std::slice::from_ref(candidate)) {
        return Err(SimError::PayloadMissing {
            a: candidate.vertex_a,
            b: candidate.vertex_b,
        });
    }
    let (from, to) = candidate.pair();
    let (tf, tt) = if from == candidate.vertex_a {
        (truth_a, truth_b)
    } else {
        (truth_b, truth_a)
    };
    let truth = tf.between(tt);
    let mut rng = pair_stream(seed, VERIFY, from, to);
    let (kappa, tau) = noise.information();
    let rel = if truth.translation.norm() < params.match_radius {
        if rng.random_bool(params.registration_failure) {
            return Ok(Verification::Rejected);
        }
        truth.compose(&sample_noise(&mut rng, noise))
    } else {
        let axis = random_unit(&mut rng);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let [lo, hi] = params.gross_translation;
        let offset = random_unit(&mut rng) * rng.random_range(lo..=hi);
        let rot = Pose::from_axis_angle(axis, angle);
        truth.compose(&Pose::new(rot.rotation, offset))
    };
    Ok(Verification::Accepted(Measurement::new(
        from,
        to,
        rel,
        kappa,
        tau,
        MeasurementKind::InterLoop,
    )?))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(normal(rng), normal(rng), normal(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

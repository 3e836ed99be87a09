//! Reference-frame bookkeeping across rendezvous and spanning-tree initialization.

use std::collections::{BTreeMap, BTreeSet};

use super::BackendError;
use crate::geometry::Pose;
use crate::graph::{MeasurementKind, MultiRobotPoseGraph, PoseKey, RobotId};

/// Picks the participant with the lowest reference frame (ties by lower robot
/// id); its first pose anchors the joint graph. Participants are
/// `(robot_id, reference_frame_id)`.
pub fn select_anchor(participants: &[(RobotId, RobotId)]) -> Result<(RobotId, PoseKey), BackendError> {
    let &(robot, _) = participants
        .iter()
        .min_by_key(|&&(robot, frame)| (frame, robot))
        .ok_or(BackendError::NoParticipants)?;
    Ok((robot, PoseKey::new(robot, 0)))
}

/// Per-robot reference frame and the pose of the robot's first keyframe in that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorState {
    reference_frame: BTreeMap<RobotId, RobotId>,
    origin_prior: BTreeMap<RobotId, Pose>,
}

impl AnchorState {
    /// Every robot starts in its own frame at the identity.
    pub fn new(robots: impl IntoIterator<Item = RobotId>) -> Self {
        let robots: Vec<RobotId> = robots.into_iter().collect();
        Self {
            reference_frame: robots.iter().map(|&r| (r, r)).collect(),
            origin_prior: robots.iter().map(|&r| (r, Pose::identity())).collect(),
        }
    }

    pub fn reference_frame(&self, robot: RobotId) -> Option<RobotId> {
        self.reference_frame.get(&robot).copied()
    }

    pub fn origin_prior(&self, robot: RobotId) -> Option<Pose> {
        self.origin_prior.get(&robot).copied()
    }

    pub fn frames(&self) -> &BTreeMap<RobotId, RobotId> {
        &self.reference_frame
    }

    /// Anchor for a rendezvous among `robots`: the robot, its first key and
    /// the prior that key must keep. Frames are left unchanged.
    pub fn anchor_for(&self, robots: &BTreeSet<RobotId>) -> Result<(RobotId, PoseKey, Pose), BackendError> {
        let participants: Vec<(RobotId, RobotId)> = robots
            .iter()
            .map(|&r| (r, self.reference_frame.get(&r).copied().unwrap_or(r)))
            .collect();
        let (anchor, key) = select_anchor(&participants)?;
        let prior = self.origin_prior.get(&anchor).copied().unwrap_or_default();
        Ok((anchor, key, prior))
    }

    /// Moves `robots` into `frame`.
    pub fn adopt(&mut self, robots: &BTreeSet<RobotId>, frame: RobotId) {
        for &r in robots {
            self.reference_frame.insert(r, frame);
        }
    }

    /// [`anchor_for`](Self::anchor_for) followed by moving every participant
    /// into the anchor's frame.
    pub fn begin_rendezvous(&mut self, robots: &BTreeSet<RobotId>) -> Result<(RobotId, PoseKey, Pose), BackendError> {
        let (anchor, key, prior) = self.anchor_for(robots)?;
        let frame = self.reference_frame.get(&anchor).copied().unwrap_or(anchor);
        self.adopt(robots, frame);
        self.origin_prior.entry(anchor).or_insert(prior);
        Ok((anchor, key, prior))
    }

    /// Stores the optimized first pose of each participant as its new origin.
    pub fn record_origins(&mut self, robots: &BTreeSet<RobotId>, estimates: &BTreeMap<PoseKey, Pose>) {
        for &r in robots {
            if let Some(p) = estimates.get(&PoseKey::new(r, 0)) {
                self.origin_prior.insert(r, *p);
            }
        }
    }
}

/// Initial estimates by composing measurements along a spanning tree rooted
/// at `anchor`. Odometry edges are preferred over loop closures (fewest loop
/// edges on the path), then lower keys. The anchor is placed at its prior, or
/// at the identity if the graph has none.
pub fn initialize(graph: &MultiRobotPoseGraph, anchor: PoseKey) -> Result<BTreeMap<PoseKey, Pose>, BackendError> {
    if !graph.contains(anchor) {
        return Err(BackendError::UnknownAnchor(anchor));
    }
    let mut adj: BTreeMap<PoseKey, Vec<(PoseKey, usize)>> = BTreeMap::new();
    for (i, e) in graph.edges().iter().enumerate() {
        adj.entry(e.from).or_default().push((e.to, i));
        adj.entry(e.to).or_default().push((e.from, i));
    }
    for list in adj.values_mut() {
        list.sort();
    }

    let root = graph.anchor_prior(anchor).unwrap_or_default();
    let mut dist: BTreeMap<PoseKey, usize> = BTreeMap::from([(anchor, 0)]);
    let mut parent: BTreeMap<PoseKey, (PoseKey, usize)> = BTreeMap::new();
    let mut queue: BTreeSet<(usize, PoseKey)> = BTreeSet::from([(0, anchor)]);
    let mut out: BTreeMap<PoseKey, Pose> = BTreeMap::new();
    while let Some((d, v)) = queue.pop_first() {
        let pose = match parent.get(&v) {
            None => root,
            Some(&(p, e)) => {
                let m = &graph.edges()[e];
                if m.from == p {
                    out[&p].compose(&m.relative_pose)
                } else {
                    out[&p].compose(&m.relative_pose.inverse())
                }
            }
        };
        out.insert(v, pose);
        for &(u, e) in adj.get(&v).map(Vec::as_slice).unwrap_or_default() {
            if out.contains_key(&u) {
                continue;
            }
            let cost = d + usize::from(graph.edges()[e].kind != MeasurementKind::Odometry);
            if dist.get(&u).is_none_or(|&du| cost < du) {
                if let Some(&du) = dist.get(&u) {
                    queue.remove(&(du, u));
                }
                dist.insert(u, cost);
                parent.insert(u, (v, e));
                queue.insert((cost, u));
            }
        }
    }
    let missing: Vec<PoseKey> = graph
        .vertices()
        .keys()
        .filter(|k| !out.contains_key(k))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(BackendError::Disconnected(missing));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Measurement;
    use nalgebra::Vector6;

    fn k(r: RobotId, f: u64) -> PoseKey {
        PoseKey::new(r, f)
    }

    #[test]
    fn first_meeting_anchors_lowest_robot() {
        assert_eq!(select_anchor(&[(4, 4), (0, 0), (5, 5)]).unwrap(), (0, k(0, 0)));
        assert_eq!(select_anchor(&[(3, 3)]).unwrap(), (3, k(3, 0)));
        assert_eq!(select_anchor(&[]), Err(BackendError::NoParticipants));
    }

    #[test]
    fn later_meeting_follows_lowest_frame() {
        let mut st = AnchorState::new(0..6);
        st.begin_rendezvous(&BTreeSet::from([0, 4, 5])).unwrap();
        let (anchor, key, _) = st.begin_rendezvous(&BTreeSet::from([2, 3, 4])).unwrap();
        assert_eq!((anchor, key), (4, k(4, 0)));
        assert_eq!(st.reference_frame(2), Some(0));
        assert_eq!(st.reference_frame(3), Some(0));
        assert_eq!(st.reference_frame(1), Some(1));
        st.begin_rendezvous(&BTreeSet::from([1, 2])).unwrap();
        assert!(st.frames().values().all(|&f| f == 0));
    }

    #[test]
    fn origins_are_recorded() {
        let mut st = AnchorState::new([0, 1]);
        st.begin_rendezvous(&BTreeSet::from([0, 1])).unwrap();
        let p = Pose::from_translation(3.0, 0.0, 0.0);
        st.record_origins(&BTreeSet::from([1]), &BTreeMap::from([(k(1, 0), p)]));
        assert_eq!(st.origin_prior(1), Some(p));
        let mut again = st.clone();
        let (_, _, prior) = again.begin_rendezvous(&BTreeSet::from([1])).unwrap();
        assert_eq!(prior, p);
    }

    fn chain(robot: RobotId, steps: &[Pose]) -> (MultiRobotPoseGraph, Vec<Pose>) {
        let mut g = MultiRobotPoseGraph::new();
        let mut truth = vec![Pose::identity()];
        for s in steps {
            truth.push(truth.last().unwrap().compose(s));
        }
        for f in 0..truth.len() as u64 {
            g.add_vertex(k(robot, f), None);
        }
        for (f, s) in steps.iter().enumerate() {
            let f = f as u64;
            g.add_edge(
                Measurement::new(k(robot, f), k(robot, f + 1), *s, 1.0, 1.0, MeasurementKind::Odometry).unwrap(),
            )
            .unwrap();
        }
        (g, truth)
    }

    #[test]
    fn chain_composes_exactly() {
        let steps: Vec<Pose> = (0..5)
            .map(|i| Pose::exp(&Vector6::new(0.1, -0.2, 0.3 * i as f64, 1.0, 0.5, -0.1)))
            .collect();
        let (g, truth) = chain(0, &steps);
        let est = initialize(&g, k(0, 0)).unwrap();
        for (f, t) in truth.iter().enumerate() {
            assert!(est[&k(0, f as u64)].max_abs_diff(t) < 1e-12);
        }
        assert_eq!(est[&k(0, 0)], Pose::identity());
    }

    #[test]
    fn second_robot_enters_through_loop() {
        let step = Pose::from_translation(1.0, 0.0, 0.0);
        let (mut g, _) = chain(0, &[step, step]);
        for f in 0..2 {
            g.add_vertex(k(1, f), None);
        }
        g.add_edge(Measurement::new(k(1, 0), k(1, 1), step, 1.0, 1.0, MeasurementKind::Odometry).unwrap())
            .unwrap();
        let link = Pose::rot_z(std::f64::consts::FRAC_PI_2, nalgebra::Vector3::new(0.0, 2.0, 0.0));
        // measured from robot 1 to robot 0, so it is traversed backwards
        g.add_edge(Measurement::new(k(1, 1), k(0, 2), link, 1.0, 1.0, MeasurementKind::InterLoop).unwrap())
            .unwrap();
        let prior = Pose::from_translation(0.0, 0.0, 5.0);
        g.add_anchor(k(0, 0), prior).unwrap();
        let est = initialize(&g, k(0, 0)).unwrap();
        let x02 = prior.compose(&step).compose(&step);
        let x11 = x02.compose(&link.inverse());
        let x10 = x11.compose(&step.inverse());
        assert!(est[&k(0, 0)].max_abs_diff(&prior) == 0.0);
        assert!(est[&k(1, 1)].max_abs_diff(&x11) < 1e-12);
        assert!(est[&k(1, 0)].max_abs_diff(&x10) < 1e-12);
    }

    #[test]
    fn odometry_preferred_over_loops() {
        let step = Pose::from_translation(1.0, 0.0, 0.0);
        let (mut g, truth) = chain(0, &[step, step, step]);
        // an inconsistent shortcut must not be used while odometry reaches the vertex
        g.add_edge(
            Measurement::new(
                k(0, 0),
                k(0, 3),
                Pose::from_translation(9.0, 0.0, 0.0),
                1.0,
                1.0,
                MeasurementKind::IntraLoop,
            )
            .unwrap(),
        )
        .unwrap();
        let est = initialize(&g, k(0, 0)).unwrap();
        assert!(est[&k(0, 3)].max_abs_diff(&truth[3]) < 1e-12);
    }

    #[test]
    fn disconnected_lists_unreachable() {
        let (mut g, _) = chain(0, &[Pose::identity()]);
        g.add_vertex(k(1, 0), None);
        g.add_vertex(k(1, 1), None);
        assert_eq!(
            initialize(&g, k(0, 0)),
            Err(BackendError::Disconnected(vec![k(1, 0), k(1, 1)]))
        );
        assert_eq!(initialize(&g, k(2, 0)), Err(BackendError::UnknownAnchor(k(2, 0))));
    }
}

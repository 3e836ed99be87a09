use std::collections::{BTreeMap, BTreeSet};

use super::ledger::{descriptor_bookkeeping, DescriptorBook, MessageKind, MessageLedger, MessageRecord};
use super::ledger::{RendezvousRecord, RendezvousTrace};
use super::scenario::{Communication, ExchangeMode, PrioritizationMode, Scenario};
use super::sensors::{simulate_geometric_verification, simulate_odometry, simulate_place_recognition, Verification};
use super::SimError;
use crate::backend::{gnc_optimize, initialize, AnchorState, GncParams};
use crate::exchange::{elect_broker, monolog_plan, vertex_cover_plan};
use crate::geometry::Pose;
use crate::graph::{CandidateMatch, Measurement, MeasurementKind, MultiRobotPoseGraph, PoseKey, RobotId};
use crate::metrics::align_rigid;
use crate::prioritization::{build_reduced_graph, exhaustive_select, fiedler_sparse, greedy_select, spectral_select};
use crate::trajectory::TrajectoryPoint;

/// A robot's state at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotOutput {
    /// Own odometry chain and known loop closures, with the robot's latest
    /// estimate of every vertex it knows, other robots' included.
    pub graph: MultiRobotPoseGraph,
    pub reference_frame: RobotId,
    /// Frames `0..optimized_frames` come from the last optimization; later
    /// ones are dead-reckoned from odometry.
    pub optimized_frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trace: RendezvousTrace,
    pub ledger: MessageLedger,
    pub robots: Vec<RobotOutput>,
}

/// Pairs `(a, b)`, `a < b`, in communication range at step `t`.
pub fn in_range(scenario: &Scenario, t: u64) -> BTreeSet<(RobotId, RobotId)> {
    let n = scenario.robot_count() as RobotId;
    let all = |members: &[RobotId]| -> Vec<(RobotId, RobotId)> {
        let mut out = Vec::new();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                out.push((a.min(b), a.max(b)));
            }
        }
        out
    };
    let cfg = &scenario.config;
    if cfg.worst_case {
        return if t + 1 == scenario.horizon() {
            all(&(0..n).collect::<Vec<_>>()).into_iter().collect()
        } else {
            BTreeSet::new()
        };
    }
    match &cfg.communication {
        Communication::Range { radius } => {
            let pos = |r: RobotId| {
                let pts = scenario.trajectories[r as usize].points();
                pts[(t as usize).min(pts.len() - 1)].pose.translation
            };
            all(&(0..n).collect::<Vec<_>>())
                .into_iter()
                .filter(|&(a, b)| (pos(a) - pos(b)).norm() <= *radius)
                .collect()
        }
        Communication::Schedule { windows } => windows
            .iter()
            .filter(|w| w.start <= t && t <= w.end)
            .flat_map(|w| all(&w.robots))
            .collect(),
    }
}

/// λ₂ of the unit-weight reduced graph of `graph`; zero below two vertices.
pub fn graph_lambda2(graph: &MultiRobotPoseGraph) -> Result<f64, SimError> {
    if graph.vertex_count() < 2 {
        return Ok(0.0);
    }
    let rg = build_reduced_graph(graph, &[])?;
    let (lambda, _) = fiedler_sparse(&rg.sparse_laplacian(&[]))?;
    Ok(lambda.max(0.0))
}

pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let mut sim = Simulation::new(scenario)?;
    for t in 0..scenario.horizon() {
        sim.advance(t);
        let links = in_range(scenario, t);
        sim.heartbeats(t, &links);
        for group in sim.groups(t, &links) {
            sim.rendezvous(t, &group)?;
        }
    }
    Ok(sim.finish())
}

struct Robot {
    truth: Vec<TrajectoryPoint>,
    odometry: Vec<Measurement>,
    frames: u64,
    estimates: BTreeMap<PoseKey, Pose>,
    loops: BTreeMap<(PoseKey, PoseKey), Measurement>,
    decided: BTreeSet<(PoseKey, PoseKey)>,
    optimized_frames: u64,
    last_heard: BTreeMap<RobotId, u64>,
    last_rendezvous: Option<u64>,
}

struct Simulation<'s> {
    sc: &'s Scenario,
    robots: Vec<Robot>,
    anchors: AnchorState,
    book: DescriptorBook,
    ledger: MessageLedger,
    trace: RendezvousTrace,
    gnc: GncParams,
}

/// Connected components of `members` under `links`, ordered by smallest id.
fn components(
    members: &BTreeSet<RobotId>,
    links: impl IntoIterator<Item = (RobotId, RobotId)>,
) -> Vec<BTreeSet<RobotId>> {
    let mut label: BTreeMap<RobotId, RobotId> = members.iter().map(|&r| (r, r)).collect();
    let links: Vec<(RobotId, RobotId)> = links.into_iter().collect();
    loop {
        let mut changed = false;
        for &(a, b) in &links {
            let (Some(&la), Some(&lb)) = (label.get(&a), label.get(&b)) else {
                continue;
            };
            if la != lb {
                let m = la.min(lb);
                label.insert(a, m);
                label.insert(b, m);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<RobotId, BTreeSet<RobotId>> = BTreeMap::new();
    for (r, l) in label {
        groups.entry(l).or_default().insert(r);
    }
    groups.into_values().collect()
}

fn inter_robot(e: &Measurement) -> Option<(RobotId, RobotId)> {
    (e.kind == MeasurementKind::InterLoop).then_some((e.from.robot_id, e.to.robot_id))
}

impl<'s> Simulation<'s> {
    fn new(sc: &'s Scenario) -> Result<Self, SimError> {
        let cfg = &sc.config;
        let robots = sc
            .trajectories
            .iter()
            .map(|t| {
                Ok(Robot {
                    truth: t.points().to_vec(),
                    odometry: simulate_odometry(t, &cfg.odometry, cfg.seed)?,
                    frames: 0,
                    estimates: BTreeMap::new(),
                    loops: BTreeMap::new(),
                    decided: BTreeSet::new(),
                    optimized_frames: 0,
                    last_heard: BTreeMap::new(),
                    last_rendezvous: None,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(Self {
            sc,
            anchors: AnchorState::new(0..robots.len() as RobotId),
            robots,
            book: DescriptorBook::new(),
            ledger: MessageLedger::new(),
            trace: RendezvousTrace::default(),
            gnc: GncParams {
                max_outer_iterations: cfg.gnc_iterations,
                ..GncParams::default()
            },
        })
    }

    fn send(&mut self, time: u64, sender: RobotId, receiver: RobotId, kind: MessageKind, bytes: u64) {
        self.ledger.push(MessageRecord {
            time,
            sender,
            receiver,
            kind,
            bytes,
            overhead: self.sc.config.messages.overhead,
        });
    }

    /// New keyframes, dead-reckoned from the previous estimate.
    fn advance(&mut self, t: u64) {
        for (id, robot) in self.robots.iter_mut().enumerate() {
            if t as usize >= robot.truth.len() {
                continue;
            }
            let id = id as RobotId;
            let pose = if t == 0 {
                self.anchors.origin_prior(id).unwrap_or_default()
            } else {
                robot.estimates[&PoseKey::new(id, t - 1)].compose(&robot.odometry[t as usize - 1].relative_pose)
            };
            robot.estimates.insert(PoseKey::new(id, t), pose);
            robot.frames = t + 1;
        }
    }

    fn heartbeats(&mut self, t: u64, links: &BTreeSet<(RobotId, RobotId)>) {
        let bytes = self.sc.config.messages.heartbeat;
        for &(a, b) in links {
            self.send(t, a, b, MessageKind::Heartbeat, bytes);
            self.send(t, b, a, MessageKind::Heartbeat, bytes);
            self.robots[a as usize].last_heard.insert(b, t);
            self.robots[b as usize].last_heard.insert(a, t);
        }
    }

    /// Groups of mutually linked robots with a live neighbor and no recent
    /// rendezvous. The lowest eligible id seeds a group, and higher ids join
    /// in order while they stay linked to every member.
    fn groups(&self, t: u64, links: &BTreeSet<(RobotId, RobotId)>) -> Vec<BTreeSet<RobotId>> {
        let cfg = &self.sc.config;
        let eligible = |r: RobotId| {
            let robot = &self.robots[r as usize];
            robot.last_heard.values().any(|&h| t - h < cfg.heartbeat_timeout)
                && robot.last_rendezvous.is_none_or(|l| t - l >= cfg.cooldown)
        };
        let linked = |a: RobotId, b: RobotId| links.contains(&(a.min(b), a.max(b)));
        let n = self.robots.len() as RobotId;
        let mut assigned = BTreeSet::new();
        let mut out = Vec::new();
        for r in 0..n {
            if assigned.contains(&r) || !eligible(r) {
                continue;
            }
            let mut g = BTreeSet::from([r]);
            for s in 0..n {
                if s != r && !assigned.contains(&s) && eligible(s) && g.iter().all(|&m| linked(m, s)) {
                    g.insert(s);
                }
            }
            if g.len() >= 2 {
                assigned.extend(g.iter().copied());
                out.push(g);
            }
        }
        out
    }

    fn truth(&self, key: PoseKey) -> &Pose {
        &self.robots[key.robot_id as usize].truth[key.frame_id as usize].pose
    }

    /// Members' chains and the loop closures any member knows between members.
    fn joint_graph(&self, members: &BTreeSet<RobotId>) -> Result<MultiRobotPoseGraph, SimError> {
        let mut g = MultiRobotPoseGraph::new();
        let mut loops = BTreeMap::new();
        for &m in members {
            let robot = &self.robots[m as usize];
            for f in 0..robot.frames {
                let k = PoseKey::new(m, f);
                g.add_vertex(k, robot.estimates.get(&k).copied());
            }
            for e in robot.odometry.iter().take(robot.frames.saturating_sub(1) as usize) {
                g.add_edge(e.clone())?;
            }
            for (pair, e) in &robot.loops {
                if members.contains(&pair.0.robot_id) && members.contains(&pair.1.robot_id) {
                    loops.entry(*pair).or_insert_with(|| e.clone());
                }
            }
        }
        for e in loops.into_values() {
            g.add_edge(e)?;
        }
        Ok(g)
    }

    fn rendezvous(&mut self, t: u64, group: &BTreeSet<RobotId>) -> Result<(), SimError> {
        let sc = self.sc;
        let cfg = &sc.config;
        let sizes = cfg.messages;
        let broker = elect_broker(group)?;
        for &r in group {
            self.robots[r as usize].last_rendezvous = Some(t);
        }

        for &s in group {
            if s == broker {
                continue;
            }
            let sent = descriptor_bookkeeping(&mut self.book, s, broker, self.robots[s as usize].frames);
            if !sent.is_empty() {
                self.send(
                    t,
                    s,
                    broker,
                    MessageKind::Descriptor,
                    (sent.end - sent.start) * sizes.descriptor,
                );
            }
        }

        let known = |s: RobotId| {
            if s == broker {
                self.robots[s as usize].frames
            } else {
                self.book.known(s, broker)
            }
        };
        let members: Vec<RobotId> = group.iter().copied().collect();
        let mut candidates: Vec<CandidateMatch> = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                let pa = &self.robots[a as usize].truth[..known(a) as usize];
                let pb = &self.robots[b as usize].truth[..known(b) as usize];
                for c in simulate_place_recognition(pa, pb, &cfg.place_recognition, cfg.seed) {
                    let pair = c.pair();
                    if !self.robots[a as usize].decided.contains(&pair) && seen.insert(pair) {
                        candidates.push(c);
                    }
                }
            }
        }
        let generated = candidates.len();

        let mut graph = self.joint_graph(group)?;
        let lambda2_before = graph_lambda2(&graph)?;
        let mut remaining = candidates;
        let mut selected = 0;
        let mut new_loops: Vec<(PoseKey, PoseKey)> = Vec::new();
        let mut decided = BTreeSet::new();
        for _ in 0..cfg.rounds {
            if remaining.is_empty() || cfg.budget == 0 {
                break;
            }
            let rg = build_reduced_graph(&graph, &remaining)?;
            let sel = match cfg.prioritization {
                PrioritizationMode::Greedy => greedy_select(&rg, cfg.budget),
                PrioritizationMode::Spectral => spectral_select(&rg, cfg.budget),
                PrioritizationMode::Exhaustive => exhaustive_select(&rg, cfg.budget)?,
            };
            let picked: Vec<CandidateMatch> = sel.selected().into_iter().map(|i| remaining[i]).collect();
            let plan = match cfg.exchange {
                ExchangeMode::Monolog => monolog_plan(&picked),
                ExchangeMode::VertexCover => vertex_cover_plan(&picked),
            };
            for &(key, dest) in &plan.transfers {
                self.send(t, key.robot_id, dest, MessageKind::VertexPayload, sizes.payload);
            }
            let mut results: BTreeMap<RobotId, u64> = BTreeMap::new();
            for c in &picked {
                let v = simulate_geometric_verification(
                    c,
                    &plan,
                    self.truth(c.vertex_a),
                    self.truth(c.vertex_b),
                    &cfg.place_recognition,
                    &cfg.loop_noise,
                    cfg.seed,
                )?;
                *results.entry(plan.covered[&c.pair()]).or_default() += 1;
                if let Verification::Accepted(m) = v {
                    new_loops.push(m.pair());
                    graph.add_edge(m)?;
                }
                decided.insert(c.pair());
            }
            for (at, n) in results {
                if at != broker {
                    self.send(t, at, broker, MessageKind::RegistrationResult, n * sizes.pose);
                }
            }
            selected += picked.len();
            remaining.retain(|c| !decided.contains(&c.pair()));
        }
        for &r in group {
            self.robots[r as usize].decided.extend(decided.iter().copied());
        }

        let mut anchors = Vec::new();
        let mut objective = f64::NAN;
        let mut converged = true;
        let mut ate = BTreeMap::new();
        let mut rejected = BTreeSet::new();
        let linked = components(group, graph.edges().iter().filter_map(inter_robot));
        for comp in linked.into_iter().filter(|c| c.len() >= 2) {
            for &s in &comp {
                if s != broker {
                    let robot = &self.robots[s as usize];
                    let loops = robot
                        .loops
                        .keys()
                        .filter(|(a, b)| comp.contains(&a.robot_id) && comp.contains(&b.robot_id))
                        .count() as u64;
                    let records = 2 * robot.frames - 1 + loops;
                    self.send(t, s, broker, MessageKind::PoseGraph, records * sizes.pose);
                }
            }

            let mut sub = graph.restricted_to(&comp);
            let (anchor, key, prior) = self.anchors.anchor_for(&comp)?;
            sub.add_anchor(key, prior)?;
            let init = initialize(&sub, key)?;
            let res = gnc_optimize(&sub, &init, key, &self.gnc)?;
            anchors.push(anchor);
            objective = if objective.is_nan() {
                res.objective
            } else {
                objective + res.objective
            };
            converged &= res.converged;

            let mut inlier_links = Vec::new();
            for (i, e) in sub.edges().iter().enumerate() {
                match res.inlier_flags.get(&i) {
                    Some(true) => inlier_links.extend(inter_robot(e)),
                    Some(false) => {
                        rejected.insert(e.pair());
                    }
                    None => {}
                }
            }
            let settled = components(&comp, inlier_links)
                .into_iter()
                .find(|c| c.contains(&anchor))
                .expect("anchor belongs to its component");
            let frame = self.anchors.reference_frame(anchor).unwrap_or(anchor);
            self.anchors.adopt(&settled, frame);
            self.anchors.record_origins(&settled, &res.estimates);

            let estimates: BTreeMap<PoseKey, Pose> = res
                .estimates
                .iter()
                .filter(|(k, _)| settled.contains(&k.robot_id))
                .map(|(k, p)| (*k, *p))
                .collect();
            let loops: Vec<Measurement> = sub
                .edges()
                .iter()
                .filter(|e| {
                    e.kind == MeasurementKind::InterLoop
                        && settled.contains(&e.from.robot_id)
                        && settled.contains(&e.to.robot_id)
                })
                .cloned()
                .collect();
            for &r in &settled {
                let robot = &mut self.robots[r as usize];
                robot.estimates.extend(estimates.iter().map(|(k, p)| (*k, *p)));
                robot.loops.extend(loops.iter().map(|e| (e.pair(), e.clone())));
                robot.optimized_frames = robot.frames;
                if r != broker {
                    let n = (estimates.len() + loops.len()) as u64;
                    self.send(t, broker, r, MessageKind::Estimates, n * sizes.pose);
                }
            }
            ate.extend(self.group_ate(&estimates));
        }

        let kept = graph.filter_edges(|_, e| !(e.kind.is_loop() && rejected.contains(&e.pair())));
        let lambda2_after = graph_lambda2(&kept)?;
        let inliers = new_loops.iter().filter(|p| !rejected.contains(p)).count();
        self.trace.records.push(RendezvousRecord {
            time: t,
            participants: members.clone(),
            broker,
            anchors,
            generated,
            selected,
            verified: new_loops.len(),
            inliers,
            lambda2_before,
            lambda2_after,
            objective,
            converged,
            ate,
            frames: members
                .iter()
                .map(|&r| (r, self.anchors.reference_frame(r).unwrap_or(r)))
                .collect(),
            cumulative_bytes: self.ledger.total_bytes(),
        });
        Ok(())
    }

    /// Per-robot translation RMSE after one rigid alignment of all `estimates`
    /// onto ground truth; NaN when the alignment is undetermined.
    fn group_ate(&self, estimates: &BTreeMap<PoseKey, Pose>) -> BTreeMap<RobotId, f64> {
        let (src, dst): (Vec<_>, Vec<_>) = estimates
            .iter()
            .map(|(k, p)| (p.translation, self.truth(*k).translation))
            .unzip();
        let align = align_rigid(&src, &dst).ok();
        let mut sums: BTreeMap<RobotId, (f64, usize)> = BTreeMap::new();
        for (k, (s, d)) in estimates.keys().zip(src.iter().zip(&dst)) {
            let e = sums.entry(k.robot_id).or_default();
            if let Some(g) = &align {
                e.0 += (g.transform_point(s) - d).norm_squared();
            }
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(r, (sq, n))| {
                (
                    r,
                    if align.is_some() {
                        (sq / n as f64).sqrt()
                    } else {
                        f64::NAN
                    },
                )
            })
            .collect()
    }

    fn finish(self) -> SimOutput {
        let robots = self
            .robots
            .iter()
            .enumerate()
            .map(|(id, robot)| {
                let mut g = MultiRobotPoseGraph::new();
                for (k, p) in &robot.estimates {
                    g.add_vertex(*k, Some(*p));
                }
                for e in robot.odometry.iter().take(robot.frames.saturating_sub(1) as usize) {
                    g.add_edge(e.clone()).expect("odometry between own keyframes");
                }
                for e in robot.loops.values() {
                    g.add_edge(e.clone()).expect("loop endpoints carry estimates");
                }
                let id = id as RobotId;
                RobotOutput {
                    graph: g,
                    reference_frame: self.anchors.reference_frame(id).unwrap_or(id),
                    optimized_frames: robot.optimized_frames,
                }
            })
            .collect();
        SimOutput {
            trace: self.trace,
            ledger: self.ledger,
            robots,
        }
    }
}

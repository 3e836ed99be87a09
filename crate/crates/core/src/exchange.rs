//! Rendezvous leadership and keyframe payload exchange planning.
//!
//! A candidate can only be verified by a robot holding the local features of
//! both endpoints. Sending one endpoint per candidate (monolog) is always
//! enough; sending a vertex cover of the candidate graph shares payloads
//! between candidates with a common keyframe.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{CandidateMatch, PoseKey, RobotId};

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("cannot elect a broker among zero robots")]
    NoRobots,
    #[error("plan csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plan csv: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowest id wins.
pub fn elect_broker(neighbor_ids: &BTreeSet<RobotId>) -> Result<RobotId, ExchangeError> {
    neighbor_ids.first().copied().ok_or(ExchangeError::NoRobots)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransmissionPlan {
    /// Keyframe payloads to send, each to one destination robot. Sorted, no duplicates.
    pub transfers: Vec<(PoseKey, RobotId)>,
    /// For each candidate (as an ordered key pair), the robot that computes the registration.
    pub covered: BTreeMap<(PoseKey, PoseKey), RobotId>,
}

impl TransmissionPlan {
    /// Distinct keyframes whose payload is sent at least once.
    pub fn sent_keys(&self) -> BTreeSet<PoseKey> {
        self.transfers.iter().map(|(k, _)| *k).collect()
    }

    pub fn transfer_count(&self) -> usize {
        self.transfers.len()
    }

    /// True if every candidate has one endpoint delivered to the owner of the other.
    pub fn covers(&self, candidates: &[CandidateMatch]) -> bool {
        let sent: BTreeSet<(PoseKey, RobotId)> = self.transfers.iter().copied().collect();
        candidates.iter().all(|c| {
            let (a, b) = c.pair();
            let Some(&at) = self.covered.get(&(a, b)) else {
                return false;
            };
            (at == b.robot_id && sent.contains(&(a, at))) || (at == a.robot_id && sent.contains(&(b, at)))
        })
    }

    fn finish(transfers: BTreeSet<(PoseKey, RobotId)>, covered: BTreeMap<(PoseKey, PoseKey), RobotId>) -> Self {
        Self {
            transfers: transfers.into_iter().collect(),
            covered,
        }
    }
}

fn unique_pairs(candidates: &[CandidateMatch]) -> BTreeSet<(PoseKey, PoseKey)> {
    candidates.iter().map(|c| c.pair()).collect()
}

/// One payload per candidate: the endpoint of the lower robot id goes to the higher one.
pub fn monolog_plan(candidates: &[CandidateMatch]) -> TransmissionPlan {
    let mut transfers = BTreeSet::new();
    let mut covered = BTreeMap::new();
    for (a, b) in unique_pairs(candidates) {
        // pair() orders keys, so a has the lower robot id
        transfers.insert((a, b.robot_id));
        covered.insert((a, b), b.robot_id);
    }
    TransmissionPlan::finish(transfers, covered)
}

struct CandidateGraph {
    keys: Vec<PoseKey>,
    adj: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl CandidateGraph {
    fn new(pairs: &BTreeSet<(PoseKey, PoseKey)>) -> Self {
        let keys: Vec<PoseKey> = pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<PoseKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut adj = vec![Vec::new(); keys.len()];
        let mut edges = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let (i, j) = (index[a], index[b]);
            adj[i].push(j);
            adj[j].push(i);
            edges.push((i, j));
        }
        Self { keys, adj, edges }
    }

    fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Cover preference: more incident candidates first, then lower key.
    fn preference(&self, v: usize) -> (std::cmp::Reverse<usize>, PoseKey) {
        (std::cmp::Reverse(self.degree(v)), self.keys[v])
    }
}

const UNMATCHED: usize = usize::MAX;

/// Maximum matching of a bipartite graph given as left adjacency lists over
/// `right` right vertices. Returns `match_left`.
pub fn hopcroft_karp(left_adj: &[Vec<usize>], right: usize) -> Vec<usize> {
    let left = left_adj.len();
    let mut match_l = vec![UNMATCHED; left];
    let mut match_r = vec![UNMATCHED; right];
    let mut dist = vec![0usize; left];
    loop {
        // layered BFS from free left vertices
        let mut queue = VecDeque::new();
        for u in 0..left {
            if match_l[u] == UNMATCHED {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &left_adj[u] {
                let w = match_r[v];
                if w == UNMATCHED {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            return match_l;
        }
        for u in 0..left {
            if match_l[u] == UNMATCHED {
                augment(u, left_adj, &mut match_l, &mut match_r, &mut dist);
            }
        }
    }
}

fn augment(u: usize, adj: &[Vec<usize>], match_l: &mut [usize], match_r: &mut [usize], dist: &mut [usize]) -> bool {
    for &v in &adj[u] {
        let w = match_r[v];
        if w == UNMATCHED || (dist[w] == dist[u] + 1 && augment(w, adj, match_l, match_r, dist)) {
            match_l[u] = v;
            match_r[v] = u;
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}

/// Minimum vertex cover of a bipartite graph (König). `side[v]` is true for left vertices.
fn konig_cover(g: &CandidateGraph, side: &[bool]) -> BTreeSet<usize> {
    let lefts: Vec<usize> = (0..g.keys.len()).filter(|&v| side[v]).collect();
    let rights: Vec<usize> = (0..g.keys.len()).filter(|&v| !side[v]).collect();
    let mut local = vec![0usize; g.keys.len()];
    for (i, &v) in lefts.iter().enumerate() {
        local[v] = i;
    }
    for (i, &v) in rights.iter().enumerate() {
        local[v] = i;
    }
    let left_adj: Vec<Vec<usize>> = lefts
        .iter()
        .map(|&u| {
            let mut nb: Vec<usize> = g.adj[u].clone();
            nb.sort_by_key(|&v| g.preference(v));
            nb.into_iter().map(|v| local[v]).collect()
        })
        .collect();
    let match_l = hopcroft_karp(&left_adj, rights.len());
    let mut match_r = vec![UNMATCHED; rights.len()];
    for (u, &v) in match_l.iter().enumerate() {
        if v != UNMATCHED {
            match_r[v] = u;
        }
    }

    // Z: reachable from free left vertices along alternating paths
    let mut seen_l = vec![false; lefts.len()];
    let mut seen_r = vec![false; rights.len()];
    let mut stack: Vec<usize> = (0..lefts.len()).filter(|&u| match_l[u] == UNMATCHED).collect();
    for &u in &stack {
        seen_l[u] = true;
    }
    while let Some(u) = stack.pop() {
        for &v in &left_adj[u] {
            if !seen_r[v] {
                seen_r[v] = true;
                let w = match_r[v];
                if w != UNMATCHED && !seen_l[w] {
                    seen_l[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    let mut cover = BTreeSet::new();
    for (i, &u) in lefts.iter().enumerate() {
        if !seen_l[i] {
            cover.insert(u);
        }
    }
    for (i, &v) in rights.iter().enumerate() {
        if seen_r[i] {
            cover.insert(v);
        }
    }
    cover
}

/// 2-approximate cover: both endpoints of a greedy maximal matching. Returns
/// the cover and the matching size (a lower bound on the minimum cover).
fn matching_cover(g: &CandidateGraph) -> (BTreeSet<usize>, usize) {
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by_key(|&e| {
        let (a, b) = g.edges[e];
        let (pa, pb) = (g.preference(a), g.preference(b));
        (pa.min(pb), pa.max(pb))
    });
    let mut cover = BTreeSet::new();
    let mut matched = 0;
    for e in order {
        let (a, b) = g.edges[e];
        if !cover.contains(&a) && !cover.contains(&b) {
            cover.insert(a);
            cover.insert(b);
            matched += 1;
        }
    }
    (cover, matched)
}

/// Drops cover vertices whose neighbors are all covered, least preferred first.
fn prune(g: &CandidateGraph, cover: &mut BTreeSet<usize>) {
    let mut order: Vec<usize> = cover.iter().copied().collect();
    order.sort_by_key(|&v| std::cmp::Reverse(g.preference(v)));
    for v in order {
        if g.adj[v].iter().all(|u| cover.contains(u)) {
            cover.remove(&v);
        }
    }
}

/// Turns a cover into transfers: each cover vertex goes to every robot owning
/// an uncovered neighbor; candidates between two cover vertices reuse an
/// existing transfer when possible.
fn plan_from_cover(g: &CandidateGraph, cover: &BTreeSet<usize>) -> TransmissionPlan {
    let mut transfers = BTreeSet::new();
    for &v in cover {
        for &u in &g.adj[v] {
            if !cover.contains(&u) {
                transfers.insert((g.keys[v], g.keys[u].robot_id));
            }
        }
    }
    let mut covered = BTreeMap::new();
    for &(i, j) in &g.edges {
        let (a, b) = (g.keys[i], g.keys[j]);
        let to_b = (a, b.robot_id);
        let to_a = (b, a.robot_id);
        let at = if transfers.contains(&to_b) {
            b.robot_id
        } else if transfers.contains(&to_a) {
            a.robot_id
        } else if cover.contains(&i) {
            transfers.insert(to_b);
            b.robot_id
        } else {
            transfers.insert(to_a);
            a.robot_id
        };
        covered.insert((a, b), at);
    }
    TransmissionPlan::finish(transfers, covered)
}

/// Payload plan from a vertex cover of the candidate graph: minimum for two
/// robots, at most twice the minimum otherwise.
pub fn vertex_cover_plan(candidates: &[CandidateMatch]) -> TransmissionPlan {
    let pairs = unique_pairs(candidates);
    if pairs.is_empty() {
        return TransmissionPlan::default();
    }
    let g = CandidateGraph::new(&pairs);
    let robots: BTreeSet<RobotId> = g.keys.iter().map(|k| k.robot_id).collect();
    if robots.len() == 2 {
        let low = *robots.first().expect("two robots");
        let side: Vec<bool> = g.keys.iter().map(|k| k.robot_id == low).collect();
        return plan_from_cover(&g, &konig_cover(&g, &side));
    }
    let (mut cover, matching) = matching_cover(&g);
    prune(&g, &mut cover);
    let plan = plan_from_cover(&g, &cover);
    let mono = monolog_plan(candidates);
    if mono.transfer_count() < plan.transfer_count() && mono.sent_keys().len() <= 2 * matching {
        mono
    } else {
        plan
    }
}

/// Total bytes: one message of `payload + overhead` per transfer.
pub fn account_bytes(plan: &TransmissionPlan, payload_bytes_per_vertex: u64, overhead_bytes_per_message: u64) -> u64 {
    plan.transfers.len() as u64 * (payload_bytes_per_vertex + overhead_bytes_per_message)
}

#[derive(Serialize)]
struct PlanRow {
    robot: RobotId,
    frame: u64,
    destination: RobotId,
    bytes: u64,
}

/// Audit dump: `robot,frame,destination,bytes`, one row per transfer.
pub fn write_plan_csv<W: Write>(
    plan: &TransmissionPlan,
    payload_bytes_per_vertex: u64,
    overhead_bytes_per_message: u64,
    writer: W,
) -> Result<(), ExchangeError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (k, dest) in &plan.transfers {
        wtr.serialize(PlanRow {
            robot: k.robot_id,
            frame: k.frame_id,
            destination: *dest,
            bytes: payload_bytes_per_vertex + overhead_bytes_per_message,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(r: RobotId, f: u64) -> PoseKey {
        PoseKey::new(r, f)
    }

    fn c(a: PoseKey, b: PoseKey) -> CandidateMatch {
        CandidateMatch::new(a, b, 0.5).unwrap()
    }

    #[test]
    fn broker_is_lowest_id() {
        assert_eq!(elect_broker(&BTreeSet::from([0, 4, 5])).unwrap(), 0);
        assert_eq!(elect_broker(&BTreeSet::from([7])).unwrap(), 7);
        assert_eq!(elect_broker(&BTreeSet::from([3, 2])).unwrap(), 2);
        assert!(matches!(elect_broker(&BTreeSet::new()), Err(ExchangeError::NoRobots)));
    }

    #[test]
    fn monolog_direction_and_dedup() {
        let p = monolog_plan(&[c(k(1, 7), k(0, 3))]);
        assert_eq!(p.transfers, vec![(k(0, 3), 1)]);
        let p = monolog_plan(&[c(k(0, 3), k(1, 7)), c(k(0, 3), k(1, 8))]);
        assert_eq!(p.transfers, vec![(k(0, 3), 1)]);
        assert!(monolog_plan(&[]).transfers.is_empty());
    }

    #[test]
    fn shared_vertex_is_sent_once() {
        // b1 and b2 both match a1, which sits on the higher robot
        let cands = [c(k(0, 1), k(1, 5)), c(k(0, 2), k(1, 5))];
        let cover = vertex_cover_plan(&cands);
        assert_eq!(cover.transfers, vec![(k(1, 5), 0)]);
        assert!(cover.covers(&cands));
        let mono = monolog_plan(&cands);
        assert_eq!(mono.transfer_count(), 2);
        assert_eq!(account_bytes(&cover, 1000, 24) * 2, account_bytes(&mono, 1000, 24));
    }

    #[test]
    fn perfect_matching_saves_nothing() {
        let cands: Vec<_> = (0..5).map(|i| c(k(0, i), k(1, i + 10))).collect();
        let p = vertex_cover_plan(&cands);
        assert_eq!(p.transfer_count(), 5);
        assert_eq!(p.transfer_count(), monolog_plan(&cands).transfer_count());
        assert!(p.covers(&cands));
    }

    #[test]
    fn byte_accounting() {
        assert_eq!(account_bytes(&TransmissionPlan::default(), 1000, 24), 0);
        let p = monolog_plan(&[c(k(0, 0), k(1, 0))]);
        assert_eq!(account_bytes(&p, 1000, 24), 1024);
    }

    #[test]
    fn hopcroft_karp_small() {
        // left 0 -> {0,1}, left 1 -> {0}, left 2 -> {1}: max matching is 2
        let m = hopcroft_karp(&[vec![0, 1], vec![0], vec![1]], 2);
        assert_eq!(m.iter().filter(|&&v| v != UNMATCHED).count(), 2);
        let m = hopcroft_karp(&[vec![0, 1], vec![0]], 2);
        assert_eq!(m, vec![1, 0]);
    }

    #[test]
    fn plan_csv() {
        let p = monolog_plan(&[c(k(0, 3), k(1, 7))]);
        let mut buf = Vec::new();
        write_plan_csv(&p, 1000, 24, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "robot,frame,destination,bytes\n0,3,1,1024\n"
        );
    }

    #[test]
    fn three_robot_star_uses_center() {
        let center = k(2, 0);
        let cands = [
            c(center, k(0, 1)),
            c(center, k(0, 2)),
            c(center, k(1, 1)),
            c(center, k(1, 2)),
        ];
        let p = vertex_cover_plan(&cands);
        assert_eq!(p.sent_keys(), BTreeSet::from([center]));
        assert_eq!(p.transfers, vec![(center, 0), (center, 1)]);
        assert!(p.covers(&cands));
    }
}

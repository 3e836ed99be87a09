use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use super::PrioritizationError;
use crate::graph::{CandidateMatch, GraphError, MeasurementKind, MultiRobotPoseGraph, PoseKey};
use crate::linalg::SymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEdge {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Topology of the multi-robot graph with unit-weight local and fixed global
/// edges plus score-weighted candidate edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGraph {
    vertex_count: usize,
    local_edges: Vec<(usize, usize)>,
    fixed_global_edges: Vec<(usize, usize)>,
    candidate_edges: Vec<CandidateEdge>,
    incident: Vec<Vec<usize>>,
    keys: Option<Vec<PoseKey>>,
}

fn normalized(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn check_edge(a: usize, b: usize, n: usize) -> Result<(), PrioritizationError> {
    for index in [a, b] {
        if index >= n {
            return Err(PrioritizationError::IndexOutOfRange { index, count: n });
        }
    }
    if a == b {
        return Err(PrioritizationError::SelfLoop(a));
    }
    Ok(())
}

impl ReducedGraph {
    pub fn new(
        vertex_count: usize,
        local_edges: Vec<(usize, usize)>,
        fixed_global_edges: Vec<(usize, usize)>,
        candidate_edges: Vec<CandidateEdge>,
    ) -> Result<Self, PrioritizationError> {
        for list in [&local_edges, &fixed_global_edges] {
            let mut seen = BTreeSet::new();
            for &(a, b) in list.iter() {
                check_edge(a, b, vertex_count)?;
                if !seen.insert(normalized(a, b)) {
                    return Err(PrioritizationError::DuplicateEdge(a, b));
                }
            }
        }
        let mut seen = BTreeSet::new();
        let mut incident = vec![Vec::new(); vertex_count];
        for (idx, c) in candidate_edges.iter().enumerate() {
            check_edge(c.a, c.b, vertex_count)?;
            if !(0.0..=1.0).contains(&c.score) {
                return Err(GraphError::BadScore(c.score).into());
            }
            if !seen.insert(normalized(c.a, c.b)) {
                return Err(PrioritizationError::DuplicateEdge(c.a, c.b));
            }
            incident[c.a].push(idx);
            incident[c.b].push(idx);
        }
        Ok(Self {
            vertex_count,
            local_edges,
            fixed_global_edges,
            candidate_edges,
            incident,
            keys: None,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn local_edges(&self) -> &[(usize, usize)] {
        &self.local_edges
    }

    pub fn fixed_global_edges(&self) -> &[(usize, usize)] {
        &self.fixed_global_edges
    }

    pub fn candidates(&self) -> &[CandidateEdge] {
        &self.candidate_edges
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_edges.len()
    }

    /// Candidate indices incident to vertex `i`.
    pub fn incident(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    /// Pose keys by vertex index, when built from a pose graph.
    pub fn keys(&self) -> Option<&[PoseKey]> {
        self.keys.as_deref()
    }

    /// Endpoint keys of candidate `idx`, when built from a pose graph.
    pub fn candidate_keys(&self, idx: usize) -> Option<(PoseKey, PoseKey)> {
        let keys = self.keys.as_ref()?;
        let c = self.candidate_edges.get(idx)?;
        Some((keys[c.a], keys[c.b]))
    }

    /// Laplacian of the local and fixed edges only.
    pub fn base_laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.vertex_count, self.vertex_count);
        for &(a, b) in self.local_edges.iter().chain(&self.fixed_global_edges) {
            add_edge(&mut l, a, b, 1.0);
        }
        l
    }

    /// Sparse `L(ω)`.
    pub fn sparse_laplacian(&self, omega: &[f64]) -> SymmetricMatrix {
        assert_eq!(omega.len(), self.candidate_edges.len());
        let mut l = SymmetricMatrix::zeros(self.vertex_count);
        let mut edge = |a: usize, b: usize, w: f64| {
            l.add(a, a, w);
            l.add(b, b, w);
            l.add(a, b, -w);
        };
        for &(a, b) in self.local_edges.iter().chain(&self.fixed_global_edges) {
            edge(a, b, 1.0);
        }
        // zero-weight candidates stay in the pattern so it does not depend on ω
        for (c, w) in self.candidate_edges.iter().zip(omega) {
            edge(c.a, c.b, w * c.score);
        }
        l
    }

    /// Adds `Σ ω_e s_e L_e` to `l`.
    pub fn add_candidates(&self, l: &mut DMatrix<f64>, omega: &[f64]) {
        assert_eq!(omega.len(), self.candidate_edges.len());
        for (c, w) in self.candidate_edges.iter().zip(omega) {
            if *w != 0.0 {
                add_edge(l, c.a, c.b, w * c.score);
            }
        }
    }
}

pub(crate) fn add_edge(l: &mut DMatrix<f64>, a: usize, b: usize, w: f64) {
    l[(a, a)] += w;
    l[(b, b)] += w;
    l[(a, b)] -= w;
    l[(b, a)] -= w;
}

/// Per-candidate selection weights with the budget they were chosen under.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionVector {
    pub omega: Vec<f64>,
    pub budget: usize,
}

impl SelectionVector {
    pub fn empty(candidates: usize, budget: usize) -> Self {
        Self {
            omega: vec![0.0; candidates],
            budget,
        }
    }

    pub fn from_indices(candidates: usize, budget: usize, indices: &[usize]) -> Self {
        let mut s = Self::empty(candidates, budget);
        for &i in indices {
            s.omega[i] = 1.0;
        }
        s
    }

    /// Indices with ω = 1, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.omega
            .iter()
            .enumerate()
            .filter(|(_, w)| **w >= 0.5)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.selected().len()
    }

    pub fn is_binary(&self) -> bool {
        self.omega.iter().all(|w| *w == 0.0 || *w == 1.0)
    }
}

pub fn weighted_laplacian(rg: &ReducedGraph, sel: &SelectionVector) -> DMatrix<f64> {
    let mut l = rg.base_laplacian();
    rg.add_candidates(&mut l, &sel.omega);
    l
}

/// Reduces a pose graph and its candidate list: odometry and intra-robot loops
/// become local edges, inter-robot loops become fixed edges. Repeated pairs
/// collapse to one edge; repeated candidates keep the highest score.
pub fn build_reduced_graph(
    graph: &MultiRobotPoseGraph,
    candidates: &[CandidateMatch],
) -> Result<ReducedGraph, PrioritizationError> {
    let keys: Vec<PoseKey> = graph.vertices().keys().copied().collect();
    let index: BTreeMap<PoseKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut local = BTreeSet::new();
    let mut fixed = BTreeSet::new();
    for e in graph.edges() {
        let pair = normalized(index[&e.from], index[&e.to]);
        match e.kind {
            MeasurementKind::Odometry | MeasurementKind::IntraLoop => {
                local.insert(pair);
            }
            MeasurementKind::InterLoop => {
                fixed.insert(pair);
            }
        }
    }

    let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut order = Vec::new();
    for c in candidates {
        if c.vertex_a.robot_id == c.vertex_b.robot_id {
            return Err(GraphError::SameRobotCandidate {
                a: c.vertex_a,
                b: c.vertex_b,
            }
            .into());
        }
        if !(0.0..=1.0).contains(&c.score) {
            return Err(GraphError::BadScore(c.score).into());
        }
        let ia = *index
            .get(&c.vertex_a)
            .ok_or(PrioritizationError::UnknownKey(c.vertex_a))?;
        let ib = *index
            .get(&c.vertex_b)
            .ok_or(PrioritizationError::UnknownKey(c.vertex_b))?;
        let pair = normalized(ia, ib);
        match best.get_mut(&pair) {
            Some(s) => *s = s.max(c.score),
            None => {
                best.insert(pair, c.score);
                order.push(pair);
            }
        }
    }
    let cands = order
        .into_iter()
        .map(|p| CandidateEdge {
            a: p.0,
            b: p.1,
            score: best[&p],
        })
        .collect();
    let mut rg = ReducedGraph::new(
        keys.len(),
        local.into_iter().collect(),
        fixed.into_iter().collect(),
        cands,
    )?;
    rg.keys = Some(keys);
    Ok(rg)
}

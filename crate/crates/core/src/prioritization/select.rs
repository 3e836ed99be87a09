use nalgebra::{DMatrix, DVector};

use std::cell::RefCell;

use super::fiedler::{algebraic_connectivity, eigen_cluster, fiedler, EigenCluster, SparseEigenSolver};
use super::reduced::{ReducedGraph, SelectionVector};
use super::PrioritizationError;

/// Upper bound on subsets enumerated by [`exhaustive_select`].
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

const MAX_ASCENT_ITERATIONS: usize = 50;
const RELATIVE_IMPROVEMENT_TOL: f64 = 1e-6;
const MULTIPLICITY_GAP: f64 = 1e-6;
/// Graphs up to this size are evaluated with dense eigendecompositions.
const DENSE_EVAL_LIMIT: usize = 64;
const SWAP_PASSES: usize = 10;
const SWAP_EVALUATIONS: usize = 16;

/// Candidate indices by descending score, ties by ascending index.
pub fn greedy_order(rg: &ReducedGraph) -> Vec<usize> {
    let c = rg.candidates();
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&i, &j| c[j].score.total_cmp(&c[i].score).then(i.cmp(&j)));
    idx
}

pub fn greedy_select(rg: &ReducedGraph, budget: usize) -> SelectionVector {
    let m = rg.candidate_count();
    let order = greedy_order(rg);
    SelectionVector::from_indices(m, budget, &order[..budget.min(m)])
}

/// `∂λ₂/∂ω_e = s_e (v_a − v_b)²` for a unit eigenvector `v` of λ₂.
pub fn supergradient(rg: &ReducedGraph, v: &DVector<f64>) -> Vec<f64> {
    rg.candidates()
        .iter()
        .map(|c| c.score * (v[c.a] - v[c.b]).powi(2))
        .collect()
}

/// Evaluates λ₂(L(ω)) for one reduced graph: dense for small graphs,
/// sparse inverse iteration above [`DENSE_EVAL_LIMIT`] vertices.
struct Evaluator<'a> {
    rg: &'a ReducedGraph,
    base: Option<DMatrix<f64>>,
    solver: RefCell<SparseEigenSolver>,
}

impl<'a> Evaluator<'a> {
    fn new(rg: &'a ReducedGraph) -> Self {
        let base = (rg.vertex_count() <= DENSE_EVAL_LIMIT).then(|| rg.base_laplacian());
        Self {
            rg,
            base,
            solver: RefCell::default(),
        }
    }

    fn dense(&self, base: &DMatrix<f64>, omega: &[f64]) -> DMatrix<f64> {
        let mut l = base.clone();
        self.rg.add_candidates(&mut l, omega);
        l
    }

    fn sparse(&self, omega: &[f64], gap: f64) -> Result<EigenCluster, PrioritizationError> {
        self.solver.borrow_mut().cluster(&self.rg.sparse_laplacian(omega), gap)
    }

    fn lambda2(&self, omega: &[f64]) -> f64 {
        if self.rg.vertex_count() < 2 {
            return 0.0;
        }
        let value = match &self.base {
            Some(base) => algebraic_connectivity(&self.dense(base, omega)),
            None => self.sparse(omega, 0.0).map(|c| c.lambda2),
        };
        value.unwrap_or(0.0)
    }

    fn cluster(&self, omega: &[f64]) -> Result<EigenCluster, PrioritizationError> {
        match &self.base {
            Some(base) => eigen_cluster(&self.dense(base, omega), MULTIPLICITY_GAP),
            None => self.sparse(omega, MULTIPLICITY_GAP),
        }
    }

    fn fiedler_vector(&self, omega: &[f64]) -> Result<DVector<f64>, PrioritizationError> {
        match &self.base {
            Some(base) => fiedler(&self.dense(base, omega)).map(|(_, v)| v),
            None => self.sparse(omega, 0.0).map(|mut c| c.vectors.swap_remove(0)),
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Euclidean projection onto `{x ∈ [0,1]^k : Σx ≤ budget}`.
fn project_capped_simplex(y: &[f64], budget: f64) -> Vec<f64> {
    let clipped: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return clipped;
    }
    let total = |tau: f64| y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = y.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    y.iter().map(|v| (v - hi).clamp(0.0, 1.0)).collect()
}

/// Diagnostics of one spectral selection.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub selection: SelectionVector,
    /// Candidates taken to connect the graph before the ascent, in selection order.
    pub bootstrap: Vec<usize>,
    pub lambda2: f64,
    pub greedy_lambda2: f64,
    pub warm_start_lambda2: f64,
    /// λ₂ of the last relaxed iterate.
    pub relaxed_lambda2: f64,
    pub iterations: usize,
    /// Whether the rounded relaxation beat the warm start.
    pub improved: bool,
}

pub fn spectral_select(rg: &ReducedGraph, budget: usize) -> SelectionVector {
    spectral_select_report(rg, budget).selection
}

pub fn spectral_select_report(rg: &ReducedGraph, budget: usize) -> SpectralReport {
    let m = rg.candidate_count();
    let k = budget.min(m);
    let ev = Evaluator::new(rg);
    let greedy = greedy_select(rg, budget);
    let greedy_lambda2 = ev.lambda2(&greedy.omega);
    let order = greedy_order(rg);

    let finish = |selection: SelectionVector, bootstrap: Vec<usize>, ws: f64, relaxed: f64, iterations, improved| {
        let value = ev.lambda2(&selection.omega);
        let (selection, value) = if value < greedy_lambda2 {
            (greedy.clone(), greedy_lambda2)
        } else {
            (selection, value)
        };
        SpectralReport {
            selection,
            bootstrap,
            lambda2: value,
            greedy_lambda2,
            warm_start_lambda2: ws,
            relaxed_lambda2: relaxed,
            iterations,
            improved,
        }
    };

    if k == m {
        return finish(greedy.clone(), Vec::new(), greedy_lambda2, greedy_lambda2, 0, false);
    }

    let mut uf = UnionFind::new(rg.vertex_count());
    let mut components = rg.vertex_count();
    for &(a, b) in rg.local_edges().iter().chain(rg.fixed_global_edges()) {
        if uf.union(a, b) {
            components -= 1;
        }
    }
    let mut bootstrap = Vec::new();
    for &i in &order {
        if components <= 1 || bootstrap.len() == k {
            break;
        }
        let c = rg.candidates()[i];
        if uf.union(c.a, c.b) {
            components -= 1;
            bootstrap.push(i);
        }
    }

    let mut warm = SelectionVector::from_indices(m, budget, &bootstrap);
    let free: Vec<usize> = order.iter().copied().filter(|i| !bootstrap.contains(i)).collect();
    let room = k - bootstrap.len();
    for &i in free.iter().take(room) {
        warm.omega[i] = 1.0;
    }
    let ws_lambda2 = ev.lambda2(&warm.omega);
    if components > 1 || room == 0 {
        return finish(warm, bootstrap, ws_lambda2, ws_lambda2, 0, false);
    }

    let scores = rg.candidates();
    let round = |omega: &[f64]| {
        let mut ranked = free.clone();
        ranked.sort_by(|&i, &j| {
            omega[j]
                .total_cmp(&omega[i])
                .then(scores[j].score.total_cmp(&scores[i].score))
                .then(i.cmp(&j))
        });
        let mut rounded = SelectionVector::from_indices(m, budget, &bootstrap);
        for &i in ranked.iter().take(room) {
            rounded.omega[i] = 1.0;
        }
        let value = ev.lambda2(&rounded.omega);
        (rounded, value)
    };

    let mut omega = warm.omega.clone();
    let mut current = ws_lambda2;
    let mut best_rounded = (warm.clone(), ws_lambda2);
    let mut scale = 1.0;
    let mut iterations = 0;
    while iterations < MAX_ASCENT_ITERATIONS {
        iterations += 1;
        let cluster = match ev.cluster(&omega) {
            Ok(c) => c,
            Err(_) => break,
        };
        let mut best_trial: Option<(Vec<f64>, f64)> = None;
        for v in &cluster.vectors {
            let g = supergradient(rg, v);
            let norm = free.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let y: Vec<f64> = free.iter().map(|&i| omega[i] + scale * g[i] / norm).collect();
            let projected = project_capped_simplex(&y, room as f64);
            let mut trial = omega.clone();
            for (&i, w) in free.iter().zip(projected) {
                trial[i] = w;
            }
            let value = ev.lambda2(&trial);
            if best_trial.as_ref().is_none_or(|(_, b)| value > *b) {
                best_trial = Some((trial, value));
            }
        }
        match best_trial {
            Some((trial, value)) if value > current => {
                let rel = (value - current) / current.abs().max(f64::MIN_POSITIVE);
                omega = trial;
                current = value;
                let rounded = round(&omega);
                if rounded.1 > best_rounded.1 {
                    best_rounded = rounded;
                }
                if rel < RELATIVE_IMPROVEMENT_TOL {
                    break;
                }
            }
            Some(_) => {
                scale *= 0.5;
                if scale < 1e-9 {
                    break;
                }
            }
            None => break,
        }
    }

    let polished = swap_polish(&ev, &free, best_rounded);
    let improved = polished.1 > ws_lambda2;
    finish(polished.0, bootstrap.clone(), ws_lambda2, current, iterations, improved)
}

/// Pairwise exchange of one selected and one unselected free candidate while
/// λ₂ increases. Pairs are ranked by the first-order change predicted from the
/// Fiedler vector and at most [`SWAP_EVALUATIONS`] are evaluated per pass.
fn swap_polish(ev: &Evaluator<'_>, free: &[usize], start: (SelectionVector, f64)) -> (SelectionVector, f64) {
    let (mut sel, mut value) = start;
    for _ in 0..SWAP_PASSES {
        let v = match ev.fiedler_vector(&sel.omega) {
            Ok(v) => v,
            Err(_) => break,
        };
        let g = supergradient(ev.rg, &v);
        let (inside, outside): (Vec<usize>, Vec<usize>) = free.iter().partition(|&&i| sel.omega[i] == 1.0);
        let mut pairs: Vec<(f64, usize, usize)> = inside
            .iter()
            .flat_map(|&i| outside.iter().map(move |&j| (i, j)))
            .map(|(i, j)| (g[j] - g[i], i, j))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut best: Option<(SelectionVector, f64)> = None;
        for &(_, i, j) in pairs.iter().take(SWAP_EVALUATIONS) {
            let mut trial = sel.clone();
            trial.omega[i] = 0.0;
            trial.omega[j] = 1.0;
            let t = ev.lambda2(&trial.omega);
            if t > best.as_ref().map_or(value, |b| b.1) {
                best = Some((trial, t));
            }
        }
        match best {
            Some(b) => (sel, value) = b,
            None => break,
        }
    }
    (sel, value)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Brute-force maximizer of λ₂ over all subsets of size `min(B, m)`; ties keep
/// the lexicographically first subset.
pub fn exhaustive_select(rg: &ReducedGraph, budget: usize) -> Result<SelectionVector, PrioritizationError> {
    let m = rg.candidate_count();
    let k = budget.min(m);
    let count = binomial(m, k);
    if count > EXHAUSTIVE_LIMIT {
        return Err(PrioritizationError::TooManySubsets {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let ev = Evaluator::new(rg);
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let sel = SelectionVector::from_indices(m, budget, &subset);
        let value = ev.lambda2(&sel.omega);
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((subset.clone(), value));
        }
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && subset[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for j in i..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
    let (subset, _) = best.expect("at least one subset");
    Ok(SelectionVector::from_indices(m, budget, &subset))
}

//! Sparse symmetric matrices and a fill-reducing sparse Cholesky factorization.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DVector, Matrix6, Vector6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CholeskyError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("ordering is not a permutation of 0..{0}")]
    BadOrdering(usize),
}

/// Symmetric matrix stored as its lower triangle, column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    /// `cols[j]` maps row `i ≥ j` to `A[i, j]`.
    cols: Vec<BTreeMap<usize, f64>>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            cols: vec![BTreeMap::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` to `A[i, j]` and, implicitly, `A[j, i]`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        *self.cols[c].entry(r).or_insert(0.0) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.cols[c].get(&r).copied().unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.get(i, i))
    }

    /// Lower-triangle entries `(i, j, A[i, j])` with `i ≥ j`.
    pub fn lower_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cols
            .iter()
            .enumerate()
            .flat_map(|(j, col)| col.iter().map(move |(&i, &v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for (i, j, v) in self.lower_entries() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.lower_entries()
            .map(|(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// Off-diagonal adjacency lists of the sparsity pattern.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, j, _) in self.lower_entries() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        adj
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.lower_entries() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    pub fn from_dense(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut s = Self::zeros(m.nrows());
        for j in 0..m.ncols() {
            for i in j..m.nrows() {
                if m[(i, j)] != 0.0 {
                    s.add(i, j, m[(i, j)]);
                }
            }
        }
        s
    }
}

/// Greedy minimum-degree elimination order; ties go to the lower index.
/// Returns `order` with `order[k]` the vertex eliminated at step `k`.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(v, list)| list.iter().copied().filter(|&u| u != v).collect())
        .collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    order
}

/// `P A Pᵀ = L Lᵀ` with `L` stored by columns in the permuted index space.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    diag: Vec<f64>,
    /// Strictly-lower entries of each column, rows ascending.
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseCholesky {
    pub fn new(a: &SymmetricMatrix) -> Result<Self, CholeskyError> {
        let order = minimum_degree(&a.adjacency());
        Self::with_ordering(a, &order)
    }

    pub fn with_ordering(a: &SymmetricMatrix, order: &[usize]) -> Result<Self, CholeskyError> {
        let n = a.dim();
        if order.len() != n {
            return Err(CholeskyError::BadOrdering(n));
        }
        let mut inv = vec![usize::MAX; n];
        for (k, &v) in order.iter().enumerate() {
            if v >= n || inv[v] != usize::MAX {
                return Err(CholeskyError::BadOrdering(n));
            }
            inv[v] = k;
        }

        // permuted lower triangle, column-wise
        let mut pa: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut pdiag = vec![0.0; n];
        for (i, j, v) in a.lower_entries() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi == pj {
                pdiag[pi] += v;
            } else {
                let (r, c) = if pi > pj { (pi, pj) } else { (pj, pi) };
                pa[c].push((r, v));
            }
        }

        // symbolic: column patterns via the elimination tree
        let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            let mut set: BTreeSet<usize> = pa[k].iter().map(|&(r, _)| r).collect();
            for &c in &children[k] {
                set.extend(pattern[c].iter().copied().filter(|&r| r > k));
            }
            pattern[k] = set.into_iter().collect();
            if let Some(&parent) = pattern[k].first() {
                children[parent].push(k);
            }
        }
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, pat) in pattern.iter().enumerate() {
            for &r in pat {
                row_cols[r].push(k);
            }
        }

        // numeric: left-looking
        let mut cols: Vec<Vec<(usize, f64)>> = pattern.iter().map(|p| p.iter().map(|&r| (r, 0.0)).collect()).collect();
        let mut diag = vec![0.0; n];
        let mut next = vec![0usize; n];
        let mut work = vec![0.0; n];
        for k in 0..n {
            work[k] = pdiag[k];
            for &(r, v) in &pa[k] {
                work[r] += v;
            }
            for &j in &row_cols[k] {
                let col = &cols[j];
                let start = next[j];
                let ljk = col[start].1;
                debug_assert_eq!(col[start].0, k);
                work[k] -= ljk * ljk;
                for &(r, lij) in &col[start + 1..] {
                    work[r] -= lij * ljk;
                }
                next[j] = start + 1;
            }
            let d = work[k];
            if !(d.is_finite() && d > 0.0) {
                return Err(CholeskyError::NotPositiveDefinite {
                    pivot: order[k],
                    value: d,
                });
            }
            let lkk = d.sqrt();
            diag[k] = lkk;
            work[k] = 0.0;
            for entry in cols[k].iter_mut() {
                entry.1 = work[entry.0] / lkk;
                work[entry.0] = 0.0;
            }
        }
        Ok(Self {
            n,
            perm: order.to_vec(),
            diag,
            cols,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L`, diagonal included.
    pub fn factor_nonzeros(&self) -> usize {
        self.n + self.cols.iter().map(Vec::len).sum::<usize>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for k in 0..self.n {
            y[k] /= self.diag[k];
            let yk = y[k];
            for &(r, l) in &self.cols[k] {
                y[r] -= l * yk;
            }
        }
        for k in (0..self.n).rev() {
            let mut s = y[k];
            for &(r, l) in &self.cols[k] {
                s -= l * y[r];
            }
            y[k] = s / self.diag[k];
        }
        let mut x = DVector::zeros(self.n);
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }
}

type Block = Matrix6<f64>;

/// Symbolic Cholesky factorization of a symmetric matrix made of 6×6 blocks,
/// computed once from the block sparsity pattern and reused across numeric
/// factorizations.
#[derive(Debug, Clone)]
pub struct BlockPattern {
    n: usize,
    /// `perm[k]` is the original block placed at position `k`.
    perm: Vec<usize>,
    inv: Vec<usize>,
    /// Strictly-lower block rows of each factor column, ascending.
    pattern: Vec<Vec<usize>>,
    /// Factor columns with a block in each row, ascending.
    row_cols: Vec<Vec<usize>>,
}

impl BlockPattern {
    /// `adjacency[i]` lists the off-diagonal blocks of block row `i`.
    pub fn new(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let perm = minimum_degree(adjacency);
        let mut inv = vec![0; n];
        for (k, &v) in perm.iter().enumerate() {
            inv[v] = k;
        }
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, list) in adjacency.iter().enumerate() {
            for &j in list {
                let (pi, pj) = (inv[i], inv[j]);
                if pi > pj {
                    lower[pj].push(pi);
                }
            }
        }
        let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            let mut set: BTreeSet<usize> = lower[k].iter().copied().collect();
            for &c in &children[k] {
                set.extend(pattern[c].iter().copied().filter(|&r| r > k));
            }
            pattern[k] = set.into_iter().collect();
            if let Some(&parent) = pattern[k].first() {
                children[parent].push(k);
            }
        }
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, pat) in pattern.iter().enumerate() {
            for &r in pat {
                row_cols[r].push(k);
            }
        }
        Self {
            n,
            perm,
            inv,
            pattern,
            row_cols,
        }
    }

    pub fn blocks(&self) -> usize {
        self.n
    }

    /// Numeric factorization. `off` holds blocks `(i, j, A_ij)` with `i ≠ j`
    /// inside the pattern; `A_ji = A_ijᵀ` is implied.
    pub fn factor(&self, diag: &[Block], off: &[(usize, usize, Block)]) -> Result<BlockCholesky, CholeskyError> {
        let n = self.n;
        let mut pa: Vec<Vec<(usize, Block)>> = vec![Vec::new(); n];
        for &(i, j, b) in off {
            let (pi, pj) = (self.inv[i], self.inv[j]);
            if pi > pj {
                pa[pj].push((pi, b));
            } else {
                pa[pi].push((pj, b.transpose()));
            }
        }
        let mut cols: Vec<Vec<(usize, Block)>> = self
            .pattern
            .iter()
            .map(|p| p.iter().map(|&r| (r, Block::zeros())).collect())
            .collect();
        let mut diag_inv = vec![Block::zeros(); n];
        let mut work = vec![Block::zeros(); n];
        let mut next = vec![0usize; n];
        for k in 0..n {
            work[k] += diag[self.perm[k]];
            for &(r, b) in &pa[k] {
                work[r] += b;
            }
            for &j in &self.row_cols[k] {
                let col = &cols[j];
                let start = next[j];
                debug_assert_eq!(col[start].0, k);
                let lkj_t = col[start].1.transpose();
                work[k] -= col[start].1 * lkj_t;
                for (r, lrj) in &col[start + 1..] {
                    work[*r] -= lrj * lkj_t;
                }
                next[j] = start + 1;
            }
            let w = (work[k] + work[k].transpose()) * 0.5;
            let chol = w.cholesky().ok_or(CholeskyError::NotPositiveDefinite {
                pivot: 6 * self.perm[k],
                value: w.diagonal().min(),
            })?;
            let linv = chol
                .l()
                .solve_lower_triangular(&Block::identity())
                .expect("Cholesky factor has a positive diagonal");
            let linv_t = linv.transpose();
            for entry in cols[k].iter_mut() {
                entry.1 = work[entry.0] * linv_t;
                work[entry.0] = Block::zeros();
            }
            work[k] = Block::zeros();
            diag_inv[k] = linv;
        }
        Ok(BlockCholesky {
            perm: self.perm.clone(),
            diag_inv,
            cols,
        })
    }
}

/// Numeric block factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    perm: Vec<usize>,
    /// Inverses of the diagonal factor blocks.
    diag_inv: Vec<Block>,
    cols: Vec<Vec<(usize, Block)>>,
}

impl BlockCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.perm.len();
        let mut y: Vec<Vector6<f64>> = self
            .perm
            .iter()
            .map(|&i| b.fixed_rows::<6>(6 * i).into_owned())
            .collect();
        for k in 0..n {
            y[k] = self.diag_inv[k] * y[k];
            let yk = y[k];
            for (r, l) in &self.cols[k] {
                y[*r] -= l * yk;
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for (r, l) in &self.cols[k] {
                s -= l.transpose() * y[*r];
            }
            y[k] = self.diag_inv[k].transpose() * s;
        }
        let mut x = DVector::zeros(6 * n);
        for (k, &i) in self.perm.iter().enumerate() {
            x.fixed_rows_mut::<6>(6 * i).copy_from(&y[k]);
        }
        x
    }
}

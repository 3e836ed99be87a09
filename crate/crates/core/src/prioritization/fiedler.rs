//! Second-smallest Laplacian eigenpair.
//!
//! Both paths work on `L + αJ` with `J = 11ᵀ/n`: the all-ones kernel vector
//! moves to eigenvalue `α`, above the rest of the spectrum, so λ₂ becomes the
//! smallest eigenvalue.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::PrioritizationError;
use crate::linalg::{minimum_degree, SparseCholesky, SymmetricMatrix};

/// Largest dimension handled by the dense eigendecomposition.
pub const DENSE_LIMIT: usize = 512;

const MAX_INVERSE_ITERATIONS: usize = 5000;
const SUBSPACE_DIM: usize = 6;

fn shifted(l: &DMatrix<f64>) -> Result<DMatrix<f64>, PrioritizationError> {
    let n = l.nrows();
    if n < 2 {
        return Err(PrioritizationError::Dimension(n));
    }
    let alpha = 2.0 * l.norm() + 1.0;
    Ok(l.add_scalar(alpha / n as f64))
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut pivot = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[pivot].abs() + 1e-12 {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

fn remove_mean(v: &mut DVector<f64>) {
    let mean = v.mean();
    v.add_scalar_mut(-mean);
}

/// λ₂ and a unit eigenvector orthogonal to the all-ones vector.
pub fn fiedler(l: &DMatrix<f64>) -> Result<(f64, DVector<f64>), PrioritizationError> {
    if l.nrows() <= DENSE_LIMIT {
        fiedler_dense(l)
    } else {
        fiedler_iterative(l)
    }
}

pub fn fiedler_dense(l: &DMatrix<f64>) -> Result<(f64, DVector<f64>), PrioritizationError> {
    let eig = SymmetricEigen::new(shifted(l)?);
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty spectrum");
    let mut v = eig.eigenvectors.column(idx).into_owned();
    remove_mean(&mut v);
    v.normalize_mut();
    fix_sign(&mut v);
    Ok((lambda, v))
}

/// λ₂ only.
pub fn algebraic_connectivity(l: &DMatrix<f64>) -> Result<f64, PrioritizationError> {
    if l.nrows() <= DENSE_LIMIT {
        let ev = shifted(l)?.symmetric_eigenvalues();
        Ok(ev.iter().copied().fold(f64::INFINITY, f64::min))
    } else {
        fiedler_iterative(l).map(|(lambda, _)| lambda)
    }
}

/// Large-dimension path: converts to sparse storage and runs
/// [`eigen_cluster_sparse`].
pub fn fiedler_iterative(l: &DMatrix<f64>) -> Result<(f64, DVector<f64>), PrioritizationError> {
    fiedler_sparse(&SymmetricMatrix::from_dense(l))
}

pub fn fiedler_sparse(l: &SymmetricMatrix) -> Result<(f64, DVector<f64>), PrioritizationError> {
    let mut c = eigen_cluster_sparse(l, 0.0)?;
    Ok((c.lambda2, c.vectors.swap_remove(0)))
}

/// Subspace inverse iteration with `(L + δI)⁻¹` applied through a sparse
/// Cholesky factor, the all-ones direction projected out after every solve,
/// and Rayleigh–Ritz extraction on `L`.
pub fn eigen_cluster_sparse(l: &SymmetricMatrix, gap: f64) -> Result<EigenCluster, PrioritizationError> {
    SparseEigenSolver::default().cluster(l, gap)
}

/// Reusable state for repeated sparse solves on matrices sharing one sparsity
/// pattern: the fill-reducing ordering and the last Ritz basis as warm start.
#[derive(Debug, Clone, Default)]
pub struct SparseEigenSolver {
    ordering: Option<Vec<usize>>,
    basis: Option<DMatrix<f64>>,
}

impl SparseEigenSolver {
    pub fn cluster(&mut self, l: &SymmetricMatrix, gap: f64) -> Result<EigenCluster, PrioritizationError> {
        let (cluster, basis) = cluster_sparse(l, gap, &mut self.ordering, self.basis.take())?;
        self.basis = Some(basis);
        Ok(cluster)
    }
}

fn cluster_sparse(
    l: &SymmetricMatrix,
    gap: f64,
    ordering: &mut Option<Vec<usize>>,
    init: Option<DMatrix<f64>>,
) -> Result<(EigenCluster, DMatrix<f64>), PrioritizationError> {
    let n = l.dim();
    if n < 2 {
        return Err(PrioritizationError::Dimension(n));
    }
    let scale = l.frobenius_norm().max(1.0);
    let mut m = l.clone();
    for i in 0..n {
        m.add(i, i, 1e-9 * scale);
    }
    let order = ordering.get_or_insert_with(|| minimum_degree(&m.adjacency()));
    let chol = SparseCholesky::with_ordering(&m, order).map_err(|_| PrioritizationError::NoConvergence)?;
    let p = (n - 1).min(SUBSPACE_DIM);
    let tol = 1e-11 * scale;

    let mut q = match init {
        Some(q) if q.shape() == (n, p) => q,
        _ => DMatrix::from_fn(n, p, |i, j| {
            ((i * (j + 3) + 7 * j + 1) as f64 * 0.618_033_988_749).sin()
        }),
    };
    for _ in 0..MAX_INVERSE_ITERATIONS {
        for j in 0..p {
            let mut y = chol.solve(&q.column(j).into_owned());
            remove_mean(&mut y);
            q.set_column(j, &y);
        }
        q = q.qr().q();
        let mut lq = DMatrix::zeros(n, p);
        for j in 0..p {
            lq.set_column(j, &l.mul_vec(&q.column(j).into_owned()));
        }
        let h = q.transpose() * &lq;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
        let rot = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, order[j])]);
        q = &q * &rot;
        let lq = lq * rot;
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let lambda2 = values[0];
        let members = values.iter().take_while(|&&v| v <= lambda2 + gap).count();
        let converged = (0..members).all(|j| (lq.column(j) - q.column(j) * values[j]).norm() <= tol);
        if converged {
            let vectors = (0..members)
                .map(|j| {
                    let mut v = q.column(j).into_owned();
                    remove_mean(&mut v);
                    v.normalize_mut();
                    fix_sign(&mut v);
                    v
                })
                .collect();
            return Ok((EigenCluster { lambda2, vectors }, q));
        }
    }
    Err(PrioritizationError::NoConvergence)
}

/// Eigenvectors whose eigenvalues lie within `gap` of λ₂.
#[derive(Debug, Clone)]
pub struct EigenCluster {
    pub lambda2: f64,
    pub vectors: Vec<DVector<f64>>,
}

impl EigenCluster {
    pub fn is_simple(&self) -> bool {
        self.vectors.len() == 1
    }
}

pub fn eigen_cluster(l: &DMatrix<f64>, gap: f64) -> Result<EigenCluster, PrioritizationError> {
    if l.nrows() > DENSE_LIMIT {
        return eigen_cluster_sparse(&SymmetricMatrix::from_dense(l), gap);
    }
    let eig = SymmetricEigen::new(shifted(l)?);
    let mut order: Vec<usize> = (0..l.nrows()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let lambda2 = eig.eigenvalues[order[0]];
    let vectors = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] <= lambda2 + gap)
        .map(|&i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            remove_mean(&mut v);
            v.normalize_mut();
            fix_sign(&mut v);
            v
        })
        .collect();
    Ok(EigenCluster { lambda2, vectors })
}

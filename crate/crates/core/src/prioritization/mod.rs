//! Budgeted selection of inter-robot loop-closure candidates, greedily by
//! similarity score or by maximizing the algebraic connectivity of the
//! augmented rotational Laplacian.

mod fiedler;
mod io;
mod reduced;
mod select;

pub use fiedler::{
    algebraic_connectivity, eigen_cluster, eigen_cluster_sparse, fiedler, fiedler_dense, fiedler_iterative,
    fiedler_sparse, EigenCluster, SparseEigenSolver, DENSE_LIMIT,
};
pub use io::{read_candidates_csv, write_candidates_csv};
pub use reduced::{build_reduced_graph, weighted_laplacian, CandidateEdge, ReducedGraph, SelectionVector};
pub use select::{
    exhaustive_select, greedy_order, greedy_select, spectral_select, spectral_select_report, supergradient,
    SpectralReport, EXHAUSTIVE_LIMIT,
};

use thiserror::Error;

use crate::graph::{GraphError, PoseKey};

#[derive(Debug, Error)]
pub enum PrioritizationError {
    #[error("vertex index {index} out of range for {count} vertices")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("self-loop on vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("candidate endpoint {0} is not a vertex of the graph")]
    UnknownKey(PoseKey),
    #[error(transparent)]
    Candidate(#[from] GraphError),
    #[error("Laplacian must have dimension at least 2, got {0}")]
    Dimension(usize),
    #[error("exhaustive search over {count} subsets exceeds the limit of {limit}")]
    TooManySubsets { count: u128, limit: u128 },
    #[error("eigen-solver did not converge")]
    NoConvergence,
    #[error("candidate csv: {0}")]
    Csv(String),
}

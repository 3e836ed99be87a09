use cslam_core::prioritization::{
    algebraic_connectivity, exhaustive_select, greedy_select, spectral_select, weighted_laplacian, CandidateEdge,
    ReducedGraph, SelectionVector,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `robots` odometry chains of `len` poses with random inter-robot candidates;
/// with `joined`, consecutive robots share one verified loop closure.
fn instance(seed: u64, robots: usize, len: usize, candidates: usize, joined: bool) -> ReducedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local: Vec<_> = (0..robots)
        .flat_map(|r| (0..len - 1).map(move |i| (r * len + i, r * len + i + 1)))
        .collect();
    let fixed: Vec<(usize, usize)> = if joined {
        (0..robots - 1)
            .map(|r| {
                (
                    r * len + rng.random_range(0..len),
                    (r + 1) * len + rng.random_range(0..len),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut cands: Vec<CandidateEdge> = Vec::new();
    while cands.len() < candidates {
        let ra = rng.random_range(0..robots);
        let mut rb = rng.random_range(0..robots - 1);
        if rb >= ra {
            rb += 1;
        }
        let a = ra * len + rng.random_range(0..len);
        let b = rb * len + rng.random_range(0..len);
        let taken = cands.iter().map(|c| (c.a, c.b)).chain(fixed.iter().copied());
        if taken.clone().any(|p| p == (a, b) || p == (b, a)) {
            continue;
        }
        cands.push(CandidateEdge {
            a,
            b,
            score: rng.random_range(0.0..1.0),
        });
    }
    ReducedGraph::new(robots * len, local, fixed, cands).unwrap()
}

fn lambda2(rg: &ReducedGraph, sel: &SelectionVector) -> f64 {
    algebraic_connectivity(&weighted_laplacian(rg, sel)).unwrap()
}

/// Direct per-edge summation of the weighted Laplacian.
fn laplacian_oracle(rg: &ReducedGraph, omega: &[f64]) -> DMatrix<f64> {
    let n = rg.vertex_count();
    let mut l = DMatrix::zeros(n, n);
    let mut edge = |a: usize, b: usize, w: f64| {
        let mut le = DMatrix::zeros(n, n);
        le[(a, a)] = w;
        le[(b, b)] = w;
        le[(a, b)] = -w;
        le[(b, a)] = -w;
        l += le;
    };
    for &(a, b) in rg.local_edges().iter().chain(rg.fixed_global_edges()) {
        edge(a, b, 1.0);
    }
    for (c, w) in rg.candidates().iter().zip(omega) {
        edge(c.a, c.b, w * c.score);
    }
    l
}

#[test]
fn laplacian_matches_per_edge_sum() {
    for seed in 0..10 {
        let rg = instance(seed, 3, 8, 10, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let omega: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let sel = SelectionVector {
            omega: omega.clone(),
            budget: 10,
        };
        let l = weighted_laplacian(&rg, &sel);
        assert!((&l - laplacian_oracle(&rg, &omega)).amax() < 1e-14);
        assert!((&l - l.transpose()).amax() == 0.0);
        for row in l.row_iter() {
            assert!(row.sum().abs() < 1e-12);
        }
    }
}

#[test]
fn small_instances_are_mostly_optimal() {
    let mut gaps = Vec::new();
    let mut hits = 0;
    for seed in 0..100u64 {
        let rg = instance(seed, 2 + (seed % 2) as usize, 6, 6 + (seed % 7) as usize, true);
        let b = 1 + (seed % 4) as usize;
        let best = lambda2(&rg, &exhaustive_select(&rg, b).unwrap());
        let got = lambda2(&rg, &spectral_select(&rg, b));
        assert!(got <= best + 1e-9);
        let gap = if best > 0.0 { (best - got) / best } else { 0.0 };
        if gap <= 1e-9 {
            hits += 1;
        }
        gaps.push(gap);
    }
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    assert!(median <= 0.05, "median gap {median}");
    assert!(hits >= 70, "optimum attained on {hits}/100");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectral_dominates_greedy(seed in 0u64..10_000, robots in 2usize..4, b in 1usize..6) {
        let rg = instance(seed, robots, 10, 12, seed % 2 == 0);
        let s = spectral_select(&rg, b);
        let g = greedy_select(&rg, b);
        prop_assert_eq!(s.count(), b.min(12));
        prop_assert!(s.is_binary());
        prop_assert!(lambda2(&rg, &s) >= lambda2(&rg, &g) - 1e-12);
    }

    #[test]
    fn adding_a_candidate_never_lowers_connectivity(seed in 0u64..10_000, pick in 0usize..10) {
        let rg = instance(seed, 3, 6, 10, seed % 2 == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut omega: Vec<f64> = (0..10).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
        omega[pick] = 0.0;
        let before = lambda2(&rg, &SelectionVector { omega: omega.clone(), budget: 10 });
        omega[pick] = 1.0;
        let after = lambda2(&rg, &SelectionVector { omega, budget: 10 });
        prop_assert!(after >= before - 1e-10);
    }

    #[test]
    fn laplacian_is_linear_in_omega(seed in 0u64..10_000) {
        let rg = instance(seed, 2, 7, 8, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let w1: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..0.5)).collect();
        let w2: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..0.5)).collect();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let l1 = weighted_laplacian(&rg, &SelectionVector { omega: w1, budget: 8 });
        let l2 = weighted_laplacian(&rg, &SelectionVector { omega: w2, budget: 8 });
        let l12 = weighted_laplacian(&rg, &SelectionVector { omega: sum, budget: 8 });
        let base = rg.base_laplacian();
        prop_assert!((l1 + l2 - base - l12).amax() < 1e-12);
    }
}

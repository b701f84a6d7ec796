mod common;

use std::collections::HashSet;

use beliefmix::encoder::ising_couplings;
use beliefmix::graph::{
    prune, pruning_score, sort_edges, validate_stats, wst_edge_fractions, FactorGraph, PairwiseStats, SortCriterion,
};
use beliefmix::mixture::MixtureModel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn mixture_stats(n: usize, c: usize, h_max: f64, seed: u64) -> PairwiseStats {
    MixtureModel::generate(n, c, h_max, seed).unwrap().exact_pair_stats()
}

/// Relabel 0 <-> 1 on every variable.
fn flipped(stats: &PairwiseStats) -> PairwiseStats {
    let singles = stats.singles().iter().map(|p| [p[1], p[0]]).collect();
    let pairs = stats
        .edges()
        .iter()
        .map(|&(i, j)| {
            let t = stats.pair(i, j).unwrap();
            ((i, j), [t[3], t[2], t[1], t[0]])
        })
        .collect();
    PairwiseStats::new(singles, pairs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn prune_is_monotone_in_connectivity(seed in any::<u64>(), n in 4usize..16, k1 in 0.5f64..3.0, dk in 0.0f64..6.0) {
        let stats = mixture_stats(n, 3, 1.5, seed);
        let k2 = (k1 + dk).min((n - 1) as f64);
        // edges selected by score at k1, before any repair
        let mut scored: Vec<((usize, usize), f64)> = stats
            .edges()
            .iter()
            .map(|&(i, j)| ((i, j), pruning_score(&stats, i, j).unwrap()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = ((n as f64 * k1 / 2.0).ceil() as usize).min(scored.len());
        let kept_hi: HashSet<(usize, usize)> = prune(&stats, k2).unwrap().edges().iter().copied().collect();
        for &(e, _) in &scored[..keep] {
            prop_assert!(kept_hi.contains(&e), "{:?} kept at K={} but not at K={}", e, k1, k2);
        }
        let kept_lo = prune(&stats, k1).unwrap();
        prop_assert!(kept_lo.is_connected());
    }

    #[test]
    fn pruning_score_ignores_global_relabeling(seed in any::<u64>(), n in 2usize..10, h_max in 0.1f64..3.0) {
        let stats = mixture_stats(n, 4, h_max, seed);
        let flip = flipped(&stats);
        prop_assert!(validate_stats(&flip).is_empty());
        for &(i, j) in stats.edges() {
            let (a, b) = (pruning_score(&stats, i, j).unwrap(), pruning_score(&flip, i, j).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn ranking_is_a_permutation(seed in any::<u64>(), n in 3usize..10, extra in 0usize..12, crit in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = mixture_stats(n, 3, 1.2, seed);
        let g = random_connected(n, extra, &mut rng);
        let couplings = ising_couplings(&stats, &g, rng.random_range(0.05..1.0)).unwrap();
        let criterion = [SortCriterion::Simple, SortCriterion::AbsoluteConductance, SortCriterion::RelativeConductance][crit];
        let ranking = sort_edges(&g, &couplings, criterion).unwrap();
        let mut got = ranking.edges();
        got.sort_unstable();
        let mut want = g.edges().to_vec();
        want.sort_unstable();
        prop_assert_eq!(got, want);
        prop_assert!(ranking.entries.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn wst_fractions_match_enumeration(seed in any::<u64>(), n in 2usize..8, extra in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected(n, extra, &mut rng);
        let w: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(0.05..5.0)).collect();
        let fast = wst_edge_fractions(&g, &w).unwrap();
        let slow = spanning_tree_fractions(&g, &w);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((fast.iter().sum::<f64>() - (n - 1) as f64).abs() < 1e-9);
    }
}

#[test]
fn wst_on_every_small_graph() {
    // all labeled connected graphs on up to five vertices
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 2..=5usize {
        let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for mask in 1u32..(1 << all.len()) {
            let edges: Vec<(usize, usize)> = (0..all.len()).filter(|k| mask >> k & 1 == 1).map(|k| all[k]).collect();
            let g = FactorGraph::new(n, edges).unwrap();
            if !g.is_connected() {
                continue;
            }
            let w: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(0.1..3.0)).collect();
            let fast = wst_edge_fractions(&g, &w).unwrap();
            let slow = spanning_tree_fractions(&g, &w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "n={n} mask={mask}");
            }
        }
    }
}

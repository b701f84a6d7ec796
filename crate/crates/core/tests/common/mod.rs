//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use beliefmix::bp::{Evidence, MessageSet, Potentials};
use beliefmix::graph::FactorGraph;
use rand::Rng;

pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> FactorGraph {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    FactorGraph::new(n, edges).unwrap()
}

/// Random spanning tree plus `extra` distinct chords.
pub fn random_connected<R: Rng>(n: usize, extra: usize, rng: &mut R) -> FactorGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    let max = n * (n - 1) / 2;
    let mut tries = 0;
    while edges.len() < (n - 1 + extra).min(max) && tries < 10_000 {
        tries += 1;
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(x, y)| (x.min(y), x.max(y)) == e) {
            edges.push(e);
        }
    }
    FactorGraph::new(n, edges).unwrap()
}

pub fn random_potentials<R: Rng>(graph: &FactorGraph, lo: f64, hi: f64, rng: &mut R) -> Potentials {
    let phi = (0..graph.num_variables() * 2).map(|_| rng.random_range(lo..hi)).collect();
    let psi = (0..graph.num_edges() * 4).map(|_| rng.random_range(lo..hi)).collect();
    Potentials::new(2, phi, psi).unwrap()
}

pub fn random_evidence<R: Rng>(n: usize, frac: f64, rng: &mut R) -> Evidence {
    let mut obs = Vec::new();
    for i in 0..n {
        if rng.random_bool(frac) {
            obs.push((i, rng.random_range(0..2)));
        }
    }
    Evidence::from_pairs(n, 2, obs).unwrap()
}

/// Exact single marginals `P(x_i = 1)` and pair tables by enumeration.
pub fn exact_marginals(graph: &FactorGraph, pot: &Potentials, evidence: &Evidence) -> (Vec<f64>, Vec<[f64; 4]>) {
    let n = graph.num_variables();
    assert!(n <= 20);
    let mut singles = vec![0.0; n];
    let mut pairs = vec![[0.0; 4]; graph.num_edges()];
    let mut z = 0.0;
    for s in 0..(1usize << n) {
        let x = |i: usize| (s >> i) & 1;
        if evidence.observed().any(|(i, v)| x(i) != v) {
            continue;
        }
        let mut w = 1.0;
        for i in 0..n {
            w *= pot.phi(i)[x(i)];
        }
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            w *= pot.psi(e)[2 * x(i) + x(j)];
        }
        z += w;
        for (i, si) in singles.iter_mut().enumerate() {
            if x(i) == 1 {
                *si += w;
            }
        }
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            pairs[e][2 * x(i) + x(j)] += w;
        }
    }
    singles.iter_mut().for_each(|p| *p /= z);
    pairs.iter_mut().flatten().for_each(|p| *p /= z);
    (singles, pairs)
}

/// Gauge transform by factor-to-variable messages `m0` (slot `2e + side`):
/// `psi_a / (m0_{a->i} m0_{a->j})` and `phi_i * prod_a m0_{a->i}`.
pub fn gauge(graph: &FactorGraph, pot: &Potentials, m0: &MessageSet) -> Potentials {
    let n = graph.num_variables();
    let mut phi: Vec<f64> = (0..n).flat_map(|i| pot.phi(i).to_vec()).collect();
    let mut psi = Vec::with_capacity(4 * graph.num_edges());
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let (mi, mj) = (m0.get(e, 0), m0.get(e, 1));
        for xi in 0..2 {
            for (xj, m) in mj.iter().enumerate() {
                psi.push(pot.psi(e)[2 * xi + xj] / (mi[xi] * m));
            }
            phi[2 * i + xi] *= mi[xi];
        }
        for (xj, m) in mj.iter().enumerate() {
            phi[2 * j + xj] *= m;
        }
    }
    Potentials::new(2, phi, psi).unwrap()
}

/// Messages `m / m0`, renormalized.
pub fn divide_messages(m: &MessageSet, m0: &MessageSet) -> MessageSet {
    let vals: Vec<f64> = m
        .values()
        .chunks(2)
        .zip(m0.values().chunks(2))
        .flat_map(|(a, b)| {
            let (u, v) = (a[0] / b[0], a[1] / b[1]);
            [u / (u + v), v / (u + v)]
        })
        .collect();
    MessageSet::from_values(2, vals).unwrap()
}

/// Spanning-tree edge fractions by explicit enumeration of edge subsets.
pub fn spanning_tree_fractions(graph: &FactorGraph, weights: &[f64]) -> Vec<f64> {
    let n = graph.num_variables();
    let edges = graph.edges();
    let mut totals = vec![0.0; edges.len()];
    let mut z = 0.0;
    let mut chosen = Vec::with_capacity(n - 1);
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        r
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        start: usize,
        need: usize,
        edges: &[(usize, usize)],
        weights: &[f64],
        parent: &mut Vec<usize>,
        chosen: &mut Vec<usize>,
        totals: &mut [f64],
        z: &mut f64,
    ) {
        if need == 0 {
            let w: f64 = chosen.iter().map(|&e| weights[e]).product();
            *z += w;
            for &e in chosen.iter() {
                totals[e] += w;
            }
            return;
        }
        for e in start..edges.len() {
            if edges.len() - e < need {
                break;
            }
            let (a, b) = edges[e];
            let (ra, rb) = (find(parent, a), find(parent, b));
            if ra == rb {
                continue;
            }
            let saved = parent.clone();
            parent[ra] = rb;
            chosen.push(e);
            rec(e + 1, need - 1, edges, weights, parent, chosen, totals, z);
            chosen.pop();
            *parent = saved;
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    rec(0, n - 1, edges, weights, &mut parent, &mut chosen, &mut totals, &mut z);
    totals.iter().map(|t| t / z).collect()
}

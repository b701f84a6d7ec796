use super::{BeliefSet, CountingNumbers, Potentials};
use crate::graph::FactorGraph;

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// (energy, negative entropy) per factor or variable
type Terms = Vec<(f64, f64)>;

/// Factor terms, then variable terms.
fn terms(beliefs: &BeliefSet, pot: &Potentials, graph: &FactorGraph) -> (Terms, Terms) {
    let q = beliefs.q();
    let factors = (0..graph.num_edges())
        .map(|e| {
            let b = beliefs.pair(e);
            let psi = pot.psi(e);
            let energy: f64 = -(0..q * q).map(|k| if b[k] > 0.0 { b[k] * psi[k].ln() } else { 0.0 }).sum::<f64>();
            let neg_entropy: f64 = b.iter().map(|&x| xlogx(x)).sum();
            (energy, neg_entropy)
        })
        .collect();
    let vars = (0..graph.num_variables())
        .map(|i| {
            let b = beliefs.single(i);
            let phi = pot.phi(i);
            let energy: f64 = -(0..q).map(|x| if b[x] > 0.0 { b[x] * phi[x].ln() } else { 0.0 }).sum::<f64>();
            let neg_entropy: f64 = b.iter().map(|&x| xlogx(x)).sum();
            (energy, neg_entropy)
        })
        .collect();
    (factors, vars)
}

/// Bethe free energy of a belief set.
pub fn bethe_free_energy(beliefs: &BeliefSet, pot: &Potentials, graph: &FactorGraph) -> f64 {
    let (factors, vars) = terms(beliefs, pot, graph);
    let f_factors: f64 = factors.iter().map(|(u, s)| u + s).sum();
    let f_vars: f64 = vars
        .iter()
        .enumerate()
        .map(|(i, (u, s))| u + (1.0 - graph.degree(i) as f64) * s)
        .sum();
    f_factors + f_vars
}

/// `sum_a (e_a E_a - h_a H_a) + sum_i (e_i E_i - h_i H_i)`.
pub fn generalized_free_energy(
    beliefs: &BeliefSet,
    pot: &Potentials,
    graph: &FactorGraph,
    counting: &CountingNumbers,
) -> f64 {
    let (factors, vars) = terms(beliefs, pot, graph);
    let f_factors: f64 = factors
        .iter()
        .enumerate()
        .map(|(e, (u, s))| counting.e_factor[e] * u + counting.h_factor[e] * s)
        .sum();
    let f_vars: f64 = vars
        .iter()
        .enumerate()
        .map(|(i, (u, s))| counting.e_var[i] * u + counting.h_var[i] * s)
        .sum();
    f_factors + f_vars
}

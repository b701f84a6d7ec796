//! Potentials built from pairwise statistics, and the Ising parametrization
//! they induce.

use serde::{Deserialize, Serialize};

use crate::bp::Potentials;
use crate::error::{invalid, Result};
use crate::graph::{
    clamp_prob, greedy_repair, log_odds_ratio, prune, sort_edges, EdgeRanking, FactorGraph,
    PairwiseStats, SortCriterion,
};
use crate::mixture::MixtureModel;

/// Ising couplings in spin variables `s = 2x - 1`, stored as `beta*J` and
/// `beta*h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Couplings {
    pub edges: Vec<(usize, usize)>,
    pub beta_j: Vec<f64>,
    pub beta_h: Vec<f64>,
    /// Physical inverse temperature, when one has been assigned.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperMode {
    /// `psi = psi_hat^alpha`
    #[default]
    Geometric,
    /// `psi = alpha psi_hat + 1 - alpha`, alpha in [0, 1]
    Convex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaModel {
    pub alpha: f64,
    #[serde(default)]
    pub mode: TemperMode,
    /// Target mean connectivity for pruning; complete graph when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<f64>,
}

impl AlphaModel {
    pub fn new(alpha: f64) -> Result<Self> {
        let m = Self {
            alpha,
            mode: TemperMode::Geometric,
            connectivity: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.mode == TemperMode::Convex && self.alpha > 1.0 {
            return Err(invalid("convex tempering needs alpha <= 1"));
        }
        Ok(())
    }
}

/// Ranked edges split into bins `(r_{k-1} E, r_k E]`, each with its own
/// exponent; edges past `r_q E` are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileModel {
    pub alphas: Vec<f64>,
    pub quantiles: Vec<f64>,
    #[serde(default)]
    pub criterion: SortCriterion,
}

impl QuantileModel {
    pub fn new(alphas: Vec<f64>, quantiles: Vec<f64>, criterion: SortCriterion) -> Result<Self> {
        let m = Self {
            alphas,
            quantiles,
            criterion,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_parts(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.len() != self.quantiles.len() {
            return Err(invalid("need one quantile per alpha and at least one part"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(invalid(format!("alphas must be non-negative, got {a}")));
        }
        let mut prev = 0.0;
        for &r in &self.quantiles {
            if !(r > prev) || r > 1.0 {
                return Err(invalid("quantiles must increase strictly within (0, 1]"));
            }
            prev = r;
        }
        Ok(())
    }
}

/// A model file: either a single temper exponent or a quantile model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Quantile(QuantileModel),
    Alpha(AlphaModel),
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Quantile(m) => m.validate(),
            Self::Alpha(m) => m.validate(),
        }
    }

    /// Graph and potentials for complete statistics `stats`.
    pub fn build(&self, stats: &PairwiseStats) -> Result<(Potentials, FactorGraph)> {
        self.validate()?;
        match self {
            Self::Alpha(m) => {
                let graph = match m.connectivity {
                    Some(k) => prune(stats, k)?,
                    None => stats.full_graph(),
                };
                let pot = tempered_potentials(stats, &graph, m.alpha, m.mode)?;
                Ok((pot, graph))
            }
            Self::Quantile(m) => {
                let ranking = reference_ranking(stats, m.criterion)?;
                quantile_potentials(stats, m, &ranking)
            }
        }
    }
}

/// Ranking of all pairs in `stats` from the untempered couplings.
pub fn reference_ranking(stats: &PairwiseStats, criterion: SortCriterion) -> Result<EdgeRanking> {
    let graph = stats.full_graph();
    let couplings = ising_couplings(stats, &graph, 1.0)?;
    sort_edges(&graph, &couplings, criterion)
}

fn pair_table(stats: &PairwiseStats, i: usize, j: usize) -> Result<[f64; 4]> {
    stats
        .pair(i, j)
        .ok_or_else(|| invalid(format!("no statistics for pair ({i}, {j})")))
}

/// `p_ij / (p_i p_j)` on clamped entries, row-major in `(x_i, x_j)`.
fn psi_hat(stats: &PairwiseStats, i: usize, j: usize) -> Result<[f64; 4]> {
    let t = pair_table(stats, i, j)?;
    let pi = stats.single(i).map(clamp_prob);
    let pj = stats.single(j).map(clamp_prob);
    Ok([
        clamp_prob(t[0]) / (pi[0] * pj[0]),
        clamp_prob(t[1]) / (pi[0] * pj[1]),
        clamp_prob(t[2]) / (pi[1] * pj[0]),
        clamp_prob(t[3]) / (pi[1] * pj[1]),
    ])
}

fn check_stats(stats: &PairwiseStats, graph: &FactorGraph) -> Result<()> {
    if stats.num_variables() != graph.num_variables() {
        return Err(invalid("statistics and graph disagree on the variable count"));
    }
    Ok(())
}

fn phi_table(stats: &PairwiseStats) -> Vec<f64> {
    stats.singles().iter().flat_map(|p| p.map(clamp_prob)).collect()
}

/// `phi_i = p_i`, `psi_ij = p_ij / (p_i p_j)`.
pub fn bethe_potentials(stats: &PairwiseStats, graph: &FactorGraph) -> Result<Potentials> {
    tempered_potentials(stats, graph, 1.0, TemperMode::Geometric)
}

/// Bethe potentials with every pair factor tempered by `alpha`.
pub fn tempered_potentials(
    stats: &PairwiseStats,
    graph: &FactorGraph,
    alpha: f64,
    mode: TemperMode,
) -> Result<Potentials> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    if mode == TemperMode::Convex && alpha > 1.0 {
        return Err(invalid("convex tempering needs alpha <= 1"));
    }
    let alphas = vec![alpha; graph.num_edges()];
    build_potentials(stats, graph, &alphas, mode)
}

/// Geometric tempering with one exponent per edge of `graph`.
pub fn edge_tempered_potentials(stats: &PairwiseStats, graph: &FactorGraph, alphas: &[f64]) -> Result<Potentials> {
    if alphas.len() != graph.num_edges() {
        return Err(invalid("one alpha per edge required"));
    }
    build_potentials(stats, graph, alphas, TemperMode::Geometric)
}

fn build_potentials(stats: &PairwiseStats, graph: &FactorGraph, alphas: &[f64], mode: TemperMode) -> Result<Potentials> {
    check_stats(stats, graph)?;
    let mut psi = Vec::with_capacity(4 * graph.num_edges());
    for (&(i, j), &alpha) in graph.edges().iter().zip(alphas) {
        let hat = psi_hat(stats, i, j)?;
        psi.extend(hat.map(|h| match mode {
            TemperMode::Geometric if alpha == 1.0 => h,
            TemperMode::Geometric => h.powf(alpha),
            TemperMode::Convex => alpha * h + (1.0 - alpha),
        }));
    }
    Potentials::new(2, phi_table(stats), psi)
}

/// Quantile-tempered model and its pruned graph.
///
/// Ranking position `p` (1-based) belongs to the first bin `k` with
/// `p <= ceil(r_k E)`. Edges re-added to restore connectivity take the last
/// bin's exponent.
pub fn quantile_potentials(
    stats: &PairwiseStats,
    model: &QuantileModel,
    ranking: &EdgeRanking,
) -> Result<(Potentials, FactorGraph)> {
    model.validate()?;
    let n = stats.num_variables();
    let total = ranking.len();
    let bounds: Vec<usize> = model
        .quantiles
        .iter()
        .map(|r| ((r * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total))
        .collect();
    let keep = *bounds.last().expect("validated non-empty");
    let ordered = ranking.edges();
    let mut chosen: Vec<((usize, usize), f64)> = Vec::with_capacity(keep);
    let mut bin = 0;
    for (pos, &edge) in ordered[..keep].iter().enumerate() {
        while pos + 1 > bounds[bin] {
            bin += 1;
        }
        chosen.push((edge, model.alphas[bin]));
    }
    let kept: Vec<(usize, usize)> = chosen.iter().map(|&(e, _)| e).collect();
    let (added, components) = greedy_repair(n, &kept, &ordered[keep..]);
    if components > 1 {
        return Err(crate::error::Error::Disconnected { components });
    }
    let last = *model.alphas.last().expect("validated non-empty");
    chosen.extend(added.into_iter().map(|e| (e, last)));
    chosen.sort_by_key(|a| a.0);
    let graph = FactorGraph::new(n, chosen.iter().map(|&(e, _)| e))?;
    let alphas: Vec<f64> = chosen.iter().map(|&(_, a)| a).collect();
    let pot = edge_tempered_potentials(stats, &graph, &alphas)?;
    Ok((pot, graph))
}

/// Couplings of the `alpha`-tempered model on `graph`:
/// `beta J_ij = (alpha/4) log(p11 p00 / (p01 p10))` and
/// `beta h_i = ((1 - alpha K_i)/2) log(p_i(1)/p_i(0)) + (alpha/4) sum_j log(p11 p10 / (p01 p00))`.
pub fn ising_couplings(stats: &PairwiseStats, graph: &FactorGraph, alpha: f64) -> Result<Couplings> {
    check_stats(stats, graph)?;
    let n = graph.num_variables();
    let mut beta_j = Vec::with_capacity(graph.num_edges());
    let mut beta_h: Vec<f64> = (0..n)
        .map(|i| {
            let [p0, p1] = stats.single(i).map(clamp_prob);
            (1.0 - alpha * graph.degree(i) as f64) / 2.0 * (p1.ln() - p0.ln())
        })
        .collect();
    for &(i, j) in graph.edges() {
        let t = pair_table(stats, i, j)?;
        beta_j.push(alpha / 4.0 * log_odds_ratio(&t));
        let [p00, p01, p10, p11] = t.map(clamp_prob);
        // x_i = 1 against x_i = 0, for each orientation
        beta_h[i] += alpha / 4.0 * ((p11.ln() + p10.ln()) - (p01.ln() + p00.ln()));
        beta_h[j] += alpha / 4.0 * ((p11.ln() + p01.ln()) - (p10.ln() + p00.ln()));
    }
    Ok(Couplings {
        edges: graph.edges().to_vec(),
        beta_j,
        beta_h,
        beta: None,
    })
}

/// Leading-order couplings in the many-component limit:
/// `beta J_ij ≈ 4 alpha v xi_ij`, `beta h_i ≈ 2 sqrt(v) xi_i - 8 alpha v^{3/2} sum_j xi_j xi_ij`.
pub fn asymptotic_couplings(mixture: &MixtureModel, graph: &FactorGraph, alpha: f64) -> Couplings {
    let xi = mixture.xi();
    let v = mixture.v;
    let mut beta_h: Vec<f64> = (0..graph.num_variables()).map(|i| 2.0 * v.sqrt() * xi.mean[i]).collect();
    let mut beta_j = Vec::with_capacity(graph.num_edges());
    for &(i, j) in graph.edges() {
        let xij = xi.pair(i, j);
        beta_j.push(4.0 * alpha * v * xij);
        beta_h[i] -= 8.0 * alpha * v.powf(1.5) * xi.mean[j] * xij;
        beta_h[j] -= 8.0 * alpha * v.powf(1.5) * xi.mean[i] * xij;
    }
    Couplings {
        edges: graph.edges().to_vec(),
        beta_j,
        beta_h,
        beta: None,
    }
}

/// `beta = 4 alpha v K / C`
pub fn beta_of_alpha(alpha: f64, v: f64, k: f64, c: f64) -> f64 {
    4.0 * alpha * v * k / c
}

/// Inverse of [`beta_of_alpha`].
pub fn alpha_of_beta(beta: f64, v: f64, k: f64, c: f64) -> f64 {
    beta * c / (4.0 * v * k)
}

/// `alpha = beta eta / (4 v)` with load `eta = C / K`.
pub fn alpha_of_beta_eta(beta: f64, v: f64, eta: f64) -> f64 {
    beta * eta / (4.0 * v)
}

/// `beta = 4 alpha v / eta`
pub fn beta_of_alpha_eta(alpha: f64, v: f64, eta: f64) -> f64 {
    4.0 * alpha * v / eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{run_bp, BpConfig, Evidence};
    use approx::assert_abs_diff_eq;

    fn one_pair(t: [f64; 4], pi: [f64; 2], pj: [f64; 2]) -> PairwiseStats {
        PairwiseStats::new(vec![pi, pj], vec![((0, 1), t)]).unwrap()
    }

    #[test]
    fn bethe_psi_is_ratio() {
        let s = one_pair([0.3, 0.2, 0.2, 0.3], [0.5, 0.5], [0.5, 0.5]);
        let g = s.full_graph();
        let pot = bethe_potentials(&s, &g).unwrap();
        assert_abs_diff_eq!(pot.psi(0)[3], 1.2, epsilon = 1e-15);
        let half = tempered_potentials(&s, &g, 0.5, TemperMode::Geometric).unwrap();
        assert_abs_diff_eq!(half.psi(0)[3], 1.2f64.sqrt(), epsilon = 1e-15);
        let zero = tempered_potentials(&s, &g, 0.0, TemperMode::Geometric).unwrap();
        assert!(zero.psi(0).iter().all(|&x| x == 1.0));
        let convex = tempered_potentials(&s, &g, 0.5, TemperMode::Convex).unwrap();
        assert_abs_diff_eq!(convex.psi(0)[3], 1.1, epsilon = 1e-15);
        assert!(tempered_potentials(&s, &g, 1.5, TemperMode::Convex).is_err());
    }

    #[test]
    fn independent_stats_give_flat_factors_and_no_coupling() {
        let s = one_pair([0.06, 0.14, 0.24, 0.56], [0.2, 0.8], [0.3, 0.7]);
        let g = s.full_graph();
        let pot = bethe_potentials(&s, &g).unwrap();
        for &x in pot.psi(0) {
            assert_abs_diff_eq!(x, 1.0, epsilon = 1e-12);
        }
        let c = ising_couplings(&s, &g, 0.7).unwrap();
        assert_abs_diff_eq!(c.beta_j[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coupling_values() {
        let s = one_pair([0.3, 0.2, 0.2, 0.3], [0.5, 0.5], [0.5, 0.5]);
        let c = ising_couplings(&s, &s.full_graph(), 1.0).unwrap();
        assert_abs_diff_eq!(c.beta_j[0], 0.25 * 2.25f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.beta_h[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ising_measure_matches_potentials() {
        // exp(sum beta J s s + sum beta h s) is proportional to prod phi prod psi^alpha
        let t = [0.35, 0.15, 0.1, 0.4];
        let s = one_pair(t, [0.5, 0.5], [0.45, 0.55]);
        let g = s.full_graph();
        let alpha = 0.8;
        let c = ising_couplings(&s, &g, alpha).unwrap();
        let pot = tempered_potentials(&s, &g, alpha, TemperMode::Geometric).unwrap();
        let mut ratios = Vec::new();
        for xi in 0..2 {
            for xj in 0..2 {
                let (si, sj) = (2.0 * xi as f64 - 1.0, 2.0 * xj as f64 - 1.0);
                let ising = c.beta_j[0] * si * sj + c.beta_h[0] * si + c.beta_h[1] * sj;
                let model = (pot.phi(0)[xi] * pot.phi(1)[xj] * pot.psi(0)[xi * 2 + xj]).ln();
                ratios.push(model - ising);
            }
        }
        for r in &ratios {
            assert_abs_diff_eq!(*r, ratios[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn temperature_mapping() {
        assert_abs_diff_eq!(beta_of_alpha(1.0, 0.15, 50.0, 5.0), 6.0, epsilon = 1e-12);
        let a = alpha_of_beta(6.0, 0.15, 50.0, 5.0);
        assert_abs_diff_eq!(beta_of_alpha(a, 0.15, 50.0, 5.0), 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha_of_beta_eta(1.25, 0.15, 0.04), 1.25 * 0.04 / 0.6, epsilon = 1e-15);
    }

    #[test]
    fn model_files_round_trip() {
        let a = ModelSpec::from_toml("alpha = 0.3\n").unwrap();
        assert_eq!(
            a,
            ModelSpec::Alpha(AlphaModel {
                alpha: 0.3,
                mode: TemperMode::Geometric,
                connectivity: None
            })
        );
        let q = ModelSpec::from_toml("alphas = [1.0, 0.5]\nquantiles = [0.2, 0.5]\ncriterion = \"simple\"\n").unwrap();
        let back = ModelSpec::from_toml(&q.to_toml().unwrap()).unwrap();
        assert_eq!(q, back);
        assert!(ModelSpec::from_toml("alphas = [1.0]\nquantiles = [0.0]\n").is_err());
        assert!(ModelSpec::from_toml("alpha = 0.3\ncriterion = \"simple\"\n").is_err());
    }

    #[test]
    fn bethe_model_reproduces_marginals() {
        let mix = MixtureModel::generate(6, 2, 1.5, 11).unwrap();
        let stats = mix.exact_pair_stats();
        let g = stats.full_graph();
        let pot = bethe_potentials(&stats, &g).unwrap();
        let run = run_bp(&g, &pot, &Evidence::none(6), None, &BpConfig::default()).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(run.beliefs.single(i)[1], stats.single(i)[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn quantile_bins_assign_exponents() {
        let mix = MixtureModel::generate(8, 3, 2.0, 5).unwrap();
        let stats = mix.exact_pair_stats();
        let ranking = reference_ranking(&stats, SortCriterion::Simple).unwrap();
        let one = QuantileModel::new(vec![0.7], vec![1.0], SortCriterion::Simple).unwrap();
        let (pot, g) = quantile_potentials(&stats, &one, &ranking).unwrap();
        let full = tempered_potentials(&stats, &g, 0.7, TemperMode::Geometric).unwrap();
        assert_eq!(g.num_edges(), 28);
        assert_eq!(pot, full);

        let two = QuantileModel::new(vec![1.0, 0.0], vec![0.25, 0.5], SortCriterion::Simple).unwrap();
        let (pot, g) = quantile_potentials(&stats, &two, &ranking).unwrap();
        assert!(g.is_connected());
        assert!(g.num_edges() >= 14);
        let order = ranking.edges();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let pos = order.iter().position(|&x| x == (i, j)).unwrap();
            if pos < 7 {
                let hat = bethe_potentials(&stats, &g).unwrap();
                assert_eq!(pot.psi(e), hat.psi(e));
            } else if pos < 14 {
                assert!(pot.psi(e).iter().all(|&x| x == 1.0));
            }
        }
    }
}

//! Scores for tempered models and the quantile-model search.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::bp::{run_bp, BpConfig, Evidence, GuideSchedule, Potentials};
use crate::cmaes::{cmaes_minimize, BoundHandling, CmaesConfig, OptimizationTrace};
use crate::encoder::{quantile_potentials, reference_ranking, ModelSpec, QuantileModel};
use crate::error::{invalid, Result};
use crate::graph::{FactorGraph, PairwiseStats, SortCriterion};
use crate::mixture::{metrics_against, MixtureModel};
use crate::par::{item_seed, map_indexed};
use crate::testbed::{run_decimation, DecimationConfig, DecimationCurve};

/// KL per variable charged to a run that did not converge.
pub const NONCONVERGED_PENALTY: f64 = LN_2;

/// Trapezoid weights `(1 - rho_k) drho_k` for the integral of `(1 - rho) D(rho)`.
pub fn global_weights(rho_grid: &[f64]) -> Vec<f64> {
    let n = rho_grid.len();
    (0..n)
        .map(|k| {
            let width = match (k, n) {
                (_, 1) => 1.0 - rho_grid[0],
                (0, _) => 0.5 * (rho_grid[1] - rho_grid[0]),
                (k, n) if k == n - 1 => 0.5 * (rho_grid[k] - rho_grid[k - 1]),
                (k, _) => 0.5 * (rho_grid[k + 1] - rho_grid[k - 1]),
            };
            (1.0 - rho_grid[k]) * width
        })
        .collect()
}

/// Weighted sum of a curve's mean D_KL.
pub fn global_from_curve(curve: &DecimationCurve) -> f64 {
    let grid: Vec<f64> = curve.points.iter().map(|p| p.rho).collect();
    global_weights(&grid)
        .iter()
        .zip(&curve.points)
        .map(|(w, p)| w * p.dkl)
        .sum()
}

fn penalized(config: &DecimationConfig) -> DecimationConfig {
    DecimationConfig {
        nonconverged_dkl: Some(config.nonconverged_dkl.unwrap_or(NONCONVERGED_PENALTY)),
        ..config.clone()
    }
}

/// Global score of a built model.
pub fn fitness_global_on(
    mixture: &MixtureModel,
    graph: &FactorGraph,
    pot: &Potentials,
    config: &DecimationConfig,
) -> Result<(f64, DecimationCurve)> {
    let curve = run_decimation(mixture, graph, pot, &penalized(config))?;
    Ok((global_from_curve(&curve), curve))
}

pub fn fitness_global(
    model: &ModelSpec,
    mixture: &MixtureModel,
    stats: &PairwiseStats,
    config: &DecimationConfig,
) -> Result<f64> {
    let (pot, graph) = model.build(stats)?;
    Ok(fitness_global_on(mixture, &graph, &pot, config)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub guide_h0: f64,
    pub guide_decay: f64,
    pub master_seed: u64,
    pub penalty: f64,
    pub bp: BpConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            guide_h0: 1.0,
            guide_decay: 0.9,
            master_seed: 0,
            penalty: NONCONVERGED_PENALTY,
            bp: BpConfig {
                max_iters: 500,
                ..BpConfig::default()
            },
        }
    }
}

/// Per-component KL of the guided fixed point against that component's
/// marginals, all variables hidden.
pub fn surrogate_terms(
    mixture: &MixtureModel,
    graph: &FactorGraph,
    pot: &Potentials,
    config: &SurrogateConfig,
) -> Result<Vec<f64>> {
    config.bp.validate()?;
    let n = mixture.n;
    let none = Evidence::none(n);
    map_indexed(mixture.c, |c| -> Result<f64> {
        let pattern = mixture.optimal_pattern(c);
        let guide = GuideSchedule::new(pattern.clone(), config.guide_h0, config.guide_decay)?;
        let bp = BpConfig {
            seed: item_seed(config.master_seed, c as u64),
            ..config.bp.clone()
        };
        let run = run_bp(graph, pot, &none, Some(&guide), &bp)?;
        if !run.status.converged() {
            return Ok(config.penalty);
        }
        Ok(metrics_against(&run.beliefs.prob_one(), &mixture.p[c], &pattern, &none)?.dkl)
    })
    .into_iter()
    .collect()
}

pub fn fitness_surrogate_on(
    mixture: &MixtureModel,
    graph: &FactorGraph,
    pot: &Potentials,
    config: &SurrogateConfig,
) -> Result<f64> {
    let terms = surrogate_terms(mixture, graph, pot, config)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn fitness_surrogate(
    model: &ModelSpec,
    mixture: &MixtureModel,
    stats: &PairwiseStats,
    config: &SurrogateConfig,
) -> Result<f64> {
    let (pot, graph) = model.build(stats)?;
    fitness_surrogate_on(mixture, &graph, &pot, config)
}

const LN_ALPHA_RANGE: (f64, f64) = (-9.2, 1.5);
const G_RANGE: (f64, f64) = (-12.0, 12.0);

/// `r_k = r_max * cumsum(softmax(g))_k`, with `g` clamped so that the
/// quantiles stay strictly increasing in floating point.
pub fn quantiles_from_logits(g: &[f64], r_max: f64) -> Vec<f64> {
    let g: Vec<f64> = g.iter().map(|x| x.clamp(G_RANGE.0, G_RANGE.1)).collect();
    let top = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = g.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = e.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = e
        .iter()
        .map(|x| {
            acc += x;
            r_max * acc / total
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = r_max;
    }
    out
}

/// Genome `(ln alpha_1..ln alpha_q, g_1..g_q)`.
pub fn decode_genome(x: &[f64], r_max: f64, criterion: SortCriterion) -> Result<QuantileModel> {
    if !x.len().is_multiple_of(2) || x.is_empty() {
        return Err(invalid("genome length must be 2q"));
    }
    let q = x.len() / 2;
    let alphas = x[..q]
        .iter()
        .map(|a| a.clamp(LN_ALPHA_RANGE.0, LN_ALPHA_RANGE.1).exp())
        .collect();
    QuantileModel::new(alphas, quantiles_from_logits(&x[q..], r_max), criterion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub q_parts: usize,
    pub r_max: f64,
    pub criterion: SortCriterion,
    /// starting exponent for every bin
    pub alpha0: f64,
    pub cmaes: CmaesConfig,
    pub surrogate: SurrogateConfig,
    /// used to re-score the final model
    pub decimation: DecimationConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            q_parts: 4,
            r_max: 1.0,
            criterion: SortCriterion::Simple,
            alpha0: 0.07,
            cmaes: CmaesConfig {
                sigma0: 0.5,
                max_evals: 400,
                bound_handling: BoundHandling::Reflection,
                ..CmaesConfig::default()
            },
            surrogate: SurrogateConfig::default(),
            decimation: DecimationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub model: QuantileModel,
    pub surrogate: f64,
    pub global: f64,
    pub evaluations: usize,
    pub trace: OptimizationTrace,
}

/// Minimizes the surrogate over `q_parts`-bin quantile models and re-scores
/// the winner with the global fitness.
pub fn optimize_quantiles(
    mixture: &MixtureModel,
    stats: &PairwiseStats,
    config: &OptimizeConfig,
) -> Result<OptimizeResult> {
    let q = config.q_parts;
    if q == 0 {
        return Err(invalid("need at least one quantile bin"));
    }
    if !(config.r_max > 0.0 && config.r_max <= 1.0) {
        return Err(invalid("r_max must lie in (0, 1]"));
    }
    if !(config.alpha0 > 0.0) {
        return Err(invalid("alpha0 must be positive"));
    }
    let ranking = reference_ranking(stats, config.criterion)?;
    let score = |x: &[f64]| -> f64 {
        let eval = || -> Result<f64> {
            let model = decode_genome(x, config.r_max, config.criterion)?;
            let (pot, graph) = quantile_potentials(stats, &model, &ranking)?;
            fitness_surrogate_on(mixture, &graph, &pot, &config.surrogate)
        };
        eval().unwrap_or(f64::INFINITY)
    };
    let mut x0 = vec![config.alpha0.ln().clamp(LN_ALPHA_RANGE.0, LN_ALPHA_RANGE.1); q];
    x0.extend(std::iter::repeat_n(0.0, q));
    let mut lower = vec![LN_ALPHA_RANGE.0; q];
    lower.extend(std::iter::repeat_n(G_RANGE.0, q));
    let mut upper = vec![LN_ALPHA_RANGE.1; q];
    upper.extend(std::iter::repeat_n(G_RANGE.1, q));
    let cma = CmaesConfig {
        lower: Some(lower),
        upper: Some(upper),
        ..config.cmaes.clone()
    };
    let result = cmaes_minimize(score, &x0, &cma)?;
    let model = decode_genome(&result.best_x, config.r_max, config.criterion)?;
    let (pot, graph) = quantile_potentials(stats, &model, &ranking)?;
    let (global, _) = fitness_global_on(mixture, &graph, &pot, &config.decimation)?;
    Ok(OptimizeResult {
        model,
        surrogate: result.best_f,
        global,
        evaluations: result.evaluations,
        trace: result.trace,
    })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

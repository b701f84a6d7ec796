//! Decimation curves and fixed-point censuses on a mixture instance.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bp::{
    bethe_free_energy, classify_fixed_points, run_bp, run_bp_from, BpConfig, Census, CensusConfig,
    Evidence, FixedPoint, FixedPointLabel, GuideSchedule, MessageSet, Potentials,
};
use crate::encoder::{tempered_potentials, TemperMode};
use crate::error::{invalid, Result};
use crate::graph::{FactorGraph, PairwiseStats};
use crate::mixture::{metrics_against, Metrics, MixtureModel};
use crate::par::{item_rng, item_seed, map_indexed};

pub const DEFAULT_RHO_GRID: [f64; 10] = [0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecimationConfig {
    pub rho_grid: Vec<f64>,
    /// Independent samples per component.
    pub seeds: usize,
    pub master_seed: u64,
    /// Restrict to the first `components` mixture components (all when absent).
    pub components: Option<usize>,
    pub bp: BpConfig,
    /// When set, runs that fail to converge score this KL per variable.
    pub nonconverged_dkl: Option<f64>,
}

impl Default for DecimationConfig {
    fn default() -> Self {
        Self {
            rho_grid: DEFAULT_RHO_GRID.to_vec(),
            seeds: 5,
            master_seed: 0,
            components: None,
            bp: BpConfig::default(),
            nonconverged_dkl: None,
        }
    }
}

impl DecimationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for &rho in &self.rho_grid {
            if !(0.0..1.0).contains(&rho) || rho <= prev {
                return Err(invalid("rho grid must increase strictly within [0, 1)"));
            }
            prev = rho;
        }
        if self.rho_grid.is_empty() || self.seeds == 0 {
            return Err(invalid("decimation needs a rho grid and at least one seed"));
        }
        self.bp.validate()
    }
}

/// One run of one component sample at one observed fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecimationRun {
    pub seed_index: usize,
    pub component: usize,
    pub rho: f64,
    pub metrics: Metrics,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecimationPoint {
    pub rho: f64,
    pub r: f64,
    pub r0: f64,
    pub e: f64,
    pub dkl: f64,
    /// standard errors over runs
    pub r_se: f64,
    pub r0_se: f64,
    pub dkl_se: f64,
    pub n_converged: usize,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecimationCurve {
    pub points: Vec<DecimationPoint>,
    pub runs: Vec<DecimationRun>,
    pub master_seed: u64,
}

impl DecimationCurve {
    /// `rho,R,R0,E,DKL,n_converged,n_runs`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rho", "R", "R0", "E", "DKL", "n_converged", "n_runs"])?;
        for p in &self.points {
            w.write_record([
                p.rho.to_string(),
                p.r.to_string(),
                p.r0.to_string(),
                p.e.to_string(),
                p.dkl.to_string(),
                p.n_converged.to_string(),
                p.n_runs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of revealed variables at fraction `rho` (at least one stays hidden).
pub fn observed_count(n: usize, rho: f64) -> usize {
    ((rho * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n.saturating_sub(1))
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Reveal each component sample in a random order and score BP on the
/// hidden variables at every grid fraction. No guiding field is used.
pub fn run_decimation(
    mixture: &MixtureModel,
    graph: &FactorGraph,
    pot: &Potentials,
    config: &DecimationConfig,
) -> Result<DecimationCurve> {
    config.validate()?;
    pot.check_graph(graph)?;
    if graph.num_variables() != mixture.n {
        return Err(invalid("graph and mixture disagree on the variable count"));
    }
    let comps = config.components.unwrap_or(mixture.c).min(mixture.c);
    let items = config.seeds * comps;
    let n = mixture.n;
    let results: Vec<Result<Vec<DecimationRun>>> = map_indexed(items, |k| {
        let seed_index = k / comps;
        let component = k % comps;
        let mut rng = item_rng(config.master_seed, k as u64);
        let x = mixture.sample_component(component, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        config
            .rho_grid
            .iter()
            .enumerate()
            .map(|(g, &rho)| {
                let m = observed_count(n, rho);
                let evidence = Evidence::from_pairs(n, 2, order[..m].iter().map(|&i| (i, x[i])))?;
                let bp = BpConfig {
                    seed: item_seed(config.master_seed ^ 0x5eed, (k * config.rho_grid.len() + g) as u64),
                    ..config.bp.clone()
                };
                let run = run_bp(graph, pot, &evidence, None, &bp)?;
                let p_ref = mixture.exact_conditionals(&evidence)?;
                let mut metrics = metrics_against(&run.beliefs.prob_one(), &p_ref, &x, &evidence)?;
                let converged = run.status.converged();
                if let (false, Some(penalty)) = (converged, config.nonconverged_dkl) {
                    metrics.dkl = penalty;
                }
                Ok(DecimationRun {
                    seed_index,
                    component,
                    rho,
                    metrics,
                    converged,
                })
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(items * config.rho_grid.len());
    for r in results {
        runs.extend(r?);
    }
    let points = config
        .rho_grid
        .iter()
        .map(|&rho| {
            let at: Vec<&DecimationRun> = runs.iter().filter(|r| r.rho == rho).collect();
            let (r, r_se) = mean_se(at.iter().map(|x| x.metrics.r));
            let (r0, r0_se) = mean_se(at.iter().map(|x| x.metrics.r0));
            let (e, _) = mean_se(at.iter().map(|x| x.metrics.e));
            let (dkl, dkl_se) = mean_se(at.iter().map(|x| x.metrics.dkl));
            DecimationPoint {
                rho,
                r,
                r0,
                e,
                dkl,
                r_se,
                r0_se,
                dkl_se,
                n_converged: at.iter().filter(|x| x.converged).count(),
                n_runs: at.len(),
            }
        })
        .collect();
    Ok(DecimationCurve {
        points,
        runs,
        master_seed: config.master_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusScanConfig {
    pub random_starts: usize,
    pub master_seed: u64,
    pub guide_h0: f64,
    pub guide_decay: f64,
    pub match_threshold: f64,
    pub dedup_tol: f64,
    pub bp: BpConfig,
}

impl Default for CensusScanConfig {
    fn default() -> Self {
        Self {
            random_starts: 100,
            master_seed: 0,
            guide_h0: 1.0,
            guide_decay: 0.9,
            match_threshold: 0.05,
            dedup_tol: 1e-6,
            bp: BpConfig {
                max_iters: 500,
                ..BpConfig::default()
            },
        }
    }
}

impl CensusScanConfig {
    fn census_config(&self) -> CensusConfig {
        CensusConfig {
            match_threshold: self.match_threshold,
            dedup_tol: self.dedup_tol,
        }
    }
}

/// Guided recovery and unguided fixed-point statistics for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusRecord {
    pub alpha: f64,
    /// fraction of components whose guided run lands on that component
    pub recovered_frac: f64,
    /// fraction of random starts ending on a spurious fixed point
    pub spurious_prob: f64,
    /// distinct spurious fixed points per random start
    pub distinct_spurious: f64,
    /// distinct fixed points of any label among converged random starts
    pub distinct_total: usize,
    pub n_converged: usize,
    pub n_runs: usize,
    pub guided: Vec<FixedPointLabel>,
    pub census: Census,
}

/// Guided runs toward every component plus `random_starts` unguided runs
/// from random messages.
pub fn fixed_point_census(
    mixture: &MixtureModel,
    graph: &FactorGraph,
    pot: &Potentials,
    alpha: f64,
    config: &CensusScanConfig,
) -> Result<CensusRecord> {
    config.bp.validate()?;
    let patterns: Vec<Vec<f64>> = mixture.p.clone();
    let census_config = config.census_config();
    let n = mixture.n;
    let c = mixture.c;
    let total = c + config.random_starts;
    let outcomes: Vec<Result<Option<FixedPoint>>> = map_indexed(total, |k| {
        let bp = BpConfig {
            seed: item_seed(config.master_seed, k as u64),
            ..config.bp.clone()
        };
        let run = if k < c {
            let guide = GuideSchedule::new(mixture.optimal_pattern(k), config.guide_h0, config.guide_decay)?;
            run_bp(graph, pot, &Evidence::none(n), Some(&guide), &bp)?
        } else {
            let mut rng = item_rng(config.master_seed ^ 0xa11ce, k as u64);
            let init = MessageSet::random(graph, 2, &mut rng);
            run_bp_from(graph, pot, &Evidence::none(n), None, &bp, &init)?
        };
        Ok(run.status.converged().then(|| FixedPoint {
            free_energy: bethe_free_energy(&run.beliefs, pot, graph),
            messages: run.messages,
            beliefs: run.beliefs,
        }))
    });
    let mut guided = Vec::with_capacity(c);
    let mut random_points = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        if k < c {
            let label = match &o {
                Some(fp) => classify_fixed_points(std::slice::from_ref(fp), &patterns, &census_config).labels[0],
                None => FixedPointLabel::Spurious,
            };
            guided.push(label);
        } else if let Some(fp) = o {
            random_points.push(fp);
        }
    }
    let recovered = guided
        .iter()
        .enumerate()
        .filter(|&(k, l)| *l == FixedPointLabel::Pattern(k))
        .count();
    let census = classify_fixed_points(&random_points, &patterns, &census_config);
    let runs = config.random_starts.max(1) as f64;
    Ok(CensusRecord {
        alpha,
        recovered_frac: recovered as f64 / c as f64,
        spurious_prob: census.spurious_count() as f64 / runs,
        distinct_spurious: census.distinct_spurious() as f64 / runs,
        distinct_total: census.distinct_total(),
        n_converged: random_points.len(),
        n_runs: config.random_starts,
        guided,
        census,
    })
}

/// Census at each `alpha` of the geometrically tempered model on `graph`.
pub fn census_scan(
    mixture: &MixtureModel,
    stats: &PairwiseStats,
    graph: &FactorGraph,
    alphas: &[f64],
    config: &CensusScanConfig,
) -> Result<Vec<CensusRecord>> {
    alphas
        .iter()
        .map(|&alpha| {
            let pot = tempered_potentials(stats, graph, alpha, TemperMode::Geometric)?;
            fixed_point_census(mixture, graph, &pot, alpha, config)
        })
        .collect()
}

/// `alpha,recovered_frac,spurious_prob,distinct_spurious`
pub fn write_census_scan_csv<W: Write>(records: &[CensusRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "recovered_frac", "spurious_prob", "distinct_spurious"])?;
    for r in records {
        w.write_record([
            r.alpha.to_string(),
            r.recovered_frac.to_string(),
            r.spurious_prob.to_string(),
            r.distinct_spurious.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

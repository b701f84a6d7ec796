//! Sum-product belief propagation on pairwise factor graphs.
//!
//! Messages are indexed by *slot* `2 e + side`: the message from factor `e` to
//! its endpoint on `side` (0 for the smaller variable index). Every message is
//! a normalized length-`q` table.

mod census;
mod engine;
mod free_energy;
mod gbp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::FactorGraph;

pub use census::{
    classify_fixed_points, mean_abs_distance, write_census_csv, write_fixed_point_csv, Census,
    CensusConfig, DistinctPoint, FixedPoint, FixedPointLabel,
};
pub use engine::{bp_step, compute_beliefs, run_bp, run_bp_from, BpRun, BpStatus};
pub use free_energy::{bethe_free_energy, generalized_free_energy};
pub use gbp::{gbp_beliefs, gbp_step, run_gbp, CountingNumbers};

/// Model potentials: one positive table per variable and per factor.
///
/// `psi` tables are row-major in `(x_first, x_second)` where `first` is the
/// smaller variable index of the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    q: usize,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl Potentials {
    pub fn new(q: usize, phi: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if q < 2 {
            return Err(invalid("variables need at least two states"));
        }
        if !phi.len().is_multiple_of(q) || !psi.len().is_multiple_of(q * q) {
            return Err(invalid("potential tables have the wrong length"));
        }
        if let Some(x) = phi.iter().chain(&psi).find(|x| !(**x > 0.0) || !x.is_finite()) {
            return Err(invalid(format!("potentials must be positive and finite, got {x}")));
        }
        Ok(Self { q, phi, psi })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn num_variables(&self) -> usize {
        self.phi.len() / self.q
    }

    pub fn num_factors(&self) -> usize {
        self.psi.len() / (self.q * self.q)
    }

    pub fn phi(&self, i: usize) -> &[f64] {
        &self.phi[i * self.q..(i + 1) * self.q]
    }

    pub fn psi(&self, e: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.psi[e * qq..(e + 1) * qq]
    }

    pub fn phi_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.phi[i * self.q..(i + 1) * self.q]
    }

    pub fn psi_mut(&mut self, e: usize) -> &mut [f64] {
        let qq = self.q * self.q;
        &mut self.psi[e * qq..(e + 1) * qq]
    }

    pub(crate) fn check_graph(&self, graph: &FactorGraph) -> Result<()> {
        if self.num_variables() != graph.num_variables() || self.num_factors() != graph.num_edges()
        {
            return Err(invalid(format!(
                "potentials ({} variables, {} factors) do not match graph ({}, {})",
                self.num_variables(),
                self.num_factors(),
                graph.num_variables(),
                graph.num_edges()
            )));
        }
        Ok(())
    }
}

/// Factor-to-variable messages, one normalized table per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    q: usize,
    values: Vec<f64>,
}

impl MessageSet {
    pub fn uniform(graph: &FactorGraph, q: usize) -> Self {
        Self {
            q,
            values: vec![1.0 / q as f64; 2 * graph.num_edges() * q],
        }
    }

    /// Independent uniform(0, 1) entries, normalized per slot.
    pub fn random<R: Rng + ?Sized>(graph: &FactorGraph, q: usize, rng: &mut R) -> Self {
        let mut values: Vec<f64> = (0..2 * graph.num_edges() * q)
            .map(|_| rng.random_range(f64::EPSILON..1.0))
            .collect();
        for chunk in values.chunks_mut(q) {
            let s: f64 = chunk.iter().sum();
            chunk.iter_mut().for_each(|x| *x /= s);
        }
        Self { q, values }
    }

    pub fn from_values(q: usize, values: Vec<f64>) -> Result<Self> {
        if q < 2 || !values.len().is_multiple_of(2 * q) {
            return Err(invalid("message table length must be a multiple of 2q"));
        }
        if let Some(x) = values.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
            return Err(invalid(format!("messages must be positive, got {x}")));
        }
        let mut out = Self { q, values };
        out.normalize();
        Ok(out)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn num_slots(&self) -> usize {
        self.values.len() / self.q
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        &self.values[slot * self.q..(slot + 1) * self.q]
    }

    /// Message from factor `e` to its endpoint on `side`.
    pub fn get(&self, e: usize, side: usize) -> &[f64] {
        self.slot(2 * e + side)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn normalize(&mut self) {
        for chunk in self.values.chunks_mut(self.q) {
            let s: f64 = chunk.iter().sum();
            chunk.iter_mut().for_each(|x| *x /= s);
        }
    }

    /// Largest componentwise absolute difference.
    pub fn sup_distance(&self, other: &MessageSet) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Single and pair beliefs with their log normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSet {
    q: usize,
    singles: Vec<f64>,
    pairs: Vec<f64>,
    pub log_z_single: Vec<f64>,
    pub log_z_pair: Vec<f64>,
}

impl BeliefSet {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn num_variables(&self) -> usize {
        self.singles.len() / self.q
    }

    pub fn single(&self, i: usize) -> &[f64] {
        &self.singles[i * self.q..(i + 1) * self.q]
    }

    pub fn pair(&self, e: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.pairs[e * qq..(e + 1) * qq]
    }

    /// `b_i(1)` for every variable.
    pub fn prob_one(&self) -> Vec<f64> {
        self.singles.chunks(self.q).map(|b| b[1]).collect()
    }

    /// Largest deviation between a pair belief marginal and the matching single belief.
    pub fn compatibility_residual(&self, graph: &FactorGraph) -> f64 {
        let q = self.q;
        let mut worst: f64 = 0.0;
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let b = self.pair(e);
            for x in 0..q {
                let row: f64 = (0..q).map(|y| b[x * q + y]).sum();
                let col: f64 = (0..q).map(|y| b[y * q + x]).sum();
                worst = worst
                    .max((row - self.single(i)[x]).abs())
                    .max((col - self.single(j)[x]).abs());
            }
        }
        worst
    }
}

/// Observed variables and their fixed states.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Evidence {
    states: Vec<Option<usize>>,
}

impl Evidence {
    pub fn none(num_variables: usize) -> Self {
        Self {
            states: vec![None; num_variables],
        }
    }

    pub fn from_pairs<I>(num_variables: usize, q: usize, observed: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut ev = Self::none(num_variables);
        for (i, x) in observed {
            if i >= num_variables || x >= q {
                return Err(invalid(format!("observation ({i}, {x}) out of range")));
            }
            if ev.states[i].replace(x).is_some() {
                return Err(invalid(format!("variable {i} observed twice")));
            }
        }
        Ok(ev)
    }

    pub fn num_variables(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> Option<usize> {
        self.states[i]
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.states[i].is_some()
    }

    pub fn num_observed(&self) -> usize {
        self.states.iter().filter(|s| s.is_some()).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|x| (i, x)))
    }
}

/// Geometrically decaying bias toward a target configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideSchedule {
    pub pattern: Vec<usize>,
    pub h0: f64,
    pub decay: f64,
    pub cutoff: f64,
}

impl GuideSchedule {
    pub fn new(pattern: Vec<usize>, h0: f64, decay: f64) -> Result<Self> {
        if !(h0 >= 0.0) || !(decay > 0.0 && decay < 1.0) {
            return Err(invalid(format!("guide needs h0 >= 0 and decay in (0, 1), got {h0}, {decay}")));
        }
        Ok(Self {
            pattern,
            h0,
            decay,
            cutoff: 1e-12,
        })
    }

    /// Default schedule: `h0 = 1`, decay 0.9.
    pub fn toward(pattern: Vec<usize>) -> Self {
        Self::new(pattern, 1.0, 0.9).expect("default guide is valid")
    }

    /// Field strength at sweep `t`.
    pub fn field(&self, t: usize) -> f64 {
        self.h0 * self.decay.powi(t as i32)
    }
}

/// Guide applied during one sweep: `phi_i(x)` is multiplied by `exp(+h)` when
/// `x` equals the pattern state and by `exp(-h)` otherwise.
#[derive(Debug, Clone, Copy)]
pub struct GuideField<'a> {
    pub pattern: &'a [usize],
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Synchronous,
    #[default]
    RandomSequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpConfig {
    pub max_iters: usize,
    /// Sup-norm bound on the per-sweep change of centered log messages.
    pub tolerance: f64,
    pub damping: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tolerance: 1e-10,
            damping: 0.5,
            schedule: Schedule::RandomSequential,
            seed: 0,
        }
    }
}

impl BpConfig {
    pub fn synchronous() -> Self {
        Self {
            schedule: Schedule::Synchronous,
            damping: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid("damping must lie in [0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        Ok(())
    }
}

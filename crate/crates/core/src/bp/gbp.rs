//! Belief propagation for region free energies with arbitrary counting numbers.
//!
//! Messages are stored as `m~_{a->i} = m_{a->i} * phi_i^{e_i / h_i}`, which
//! removes every division by `h_i` from the update:
//!
//! ```text
//! log n_{j->a} = -h_a log m~_{a->j} + k_j T_j + (e_j h_a / (h_j + H_j)) log phi_j
//! m~_{a->i}(x_i) ∝ sum_{x_j} exp((e_a log psi_a + log n_{j->a}) / h_a)
//! ```
//!
//! with `H_j = sum_{b ∋ j} h_b`, `k_j = h_a / (h_j + H_j)` and
//! `T_j = sum_{a' ∋ j} h_{a'} log m~_{a'->j}`. For `h_a = 1, h_i = 1 - d_i`
//! this is ordinary BP.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::engine::{centered_sup, BpStatus};
use super::{BeliefSet, BpConfig, MessageSet, Potentials, Schedule};
use crate::error::{invalid, Error, Result};
use crate::graph::FactorGraph;

/// Energy and entropy counting numbers per factor and per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingNumbers {
    pub e_factor: Vec<f64>,
    pub h_factor: Vec<f64>,
    pub e_var: Vec<f64>,
    pub h_var: Vec<f64>,
}

impl CountingNumbers {
    pub fn new(e_factor: Vec<f64>, h_factor: Vec<f64>, e_var: Vec<f64>, h_var: Vec<f64>) -> Result<Self> {
        if e_factor.len() != h_factor.len() || e_var.len() != h_var.len() {
            return Err(invalid("counting number vectors have mismatched lengths"));
        }
        if e_factor.iter().chain(&h_factor).chain(&e_var).chain(&h_var).any(|x| !x.is_finite()) {
            return Err(invalid("counting numbers must be finite"));
        }
        Ok(Self {
            e_factor,
            h_factor,
            e_var,
            h_var,
        })
    }

    /// Standard Bethe counting: `h_a = 1`, `h_i = 1 - d_i`, unit energies.
    pub fn bethe(graph: &FactorGraph) -> Self {
        Self::scaled(graph, 1.0)
    }

    /// `h_a = h`, `h_i = (1 - d_i) h`: the family without second-order feedback.
    pub fn scaled(graph: &FactorGraph, h: f64) -> Self {
        let m = graph.num_edges();
        let n = graph.num_variables();
        Self {
            e_factor: vec![1.0; m],
            h_factor: vec![h; m],
            e_var: vec![1.0; n],
            h_var: (0..n).map(|i| (1.0 - graph.degree(i) as f64) * h).collect(),
        }
    }

    /// Fractional BP: unit energies, `h_i = 1 - sum_{a ∋ i} h_a`.
    pub fn fractional(graph: &FactorGraph, h_factor: Vec<f64>) -> Result<Self> {
        if h_factor.len() != graph.num_edges() {
            return Err(invalid("one h_a per factor required"));
        }
        let h_var = (0..graph.num_variables())
            .map(|i| 1.0 - graph.incidence(i).iter().map(|&(e, _)| h_factor[e]).sum::<f64>())
            .collect();
        Self::new(vec![1.0; graph.num_edges()], h_factor, vec![1.0; graph.num_variables()], h_var)
    }

    /// Bethe entropies with per-factor energy weights (the tempered model).
    pub fn tempered(graph: &FactorGraph, e_factor: Vec<f64>) -> Result<Self> {
        if e_factor.len() != graph.num_edges() {
            return Err(invalid("one e_a per factor required"));
        }
        let base = Self::bethe(graph);
        Self::new(e_factor, base.h_factor, base.e_var, base.h_var)
    }

    fn check(&self, graph: &FactorGraph) -> Result<()> {
        if self.h_factor.len() != graph.num_edges() || self.h_var.len() != graph.num_variables() {
            return Err(invalid("counting numbers do not match the graph"));
        }
        if let Some(e) = self.h_factor.iter().position(|&h| h == 0.0) {
            return Err(Error::CountingGuard(format!("h_a = 0 on factor {e}")));
        }
        for i in 0..graph.num_variables() {
            if self.h_var[i] + self.region_sum(graph, i) == 0.0 {
                return Err(Error::CountingGuard(format!("h_i + sum h_b = 0 at variable {i}")));
            }
        }
        Ok(())
    }

    fn region_sum(&self, graph: &FactorGraph, i: usize) -> f64 {
        graph.incidence(i).iter().map(|&(e, _)| self.h_factor[e]).sum()
    }

    /// `Some(h)` when `h_a ≡ h` and `h_i ≡ (1 - d_i) h`, i.e. no feedback term.
    pub fn reduction_scale(&self, graph: &FactorGraph) -> Option<f64> {
        let h = *self.h_factor.first()?;
        let tol = 1e-12 * h.abs().max(1.0);
        let uniform = self.h_factor.iter().all(|&x| (x - h).abs() <= tol);
        let vars = (0..graph.num_variables())
            .all(|i| (self.h_var[i] - (1.0 - graph.degree(i) as f64) * h).abs() <= tol * graph.degree(i).max(1) as f64);
        (uniform && vars).then_some(h)
    }

    /// Exactly the counting numbers of ordinary BP.
    pub fn is_standard(&self, graph: &FactorGraph) -> bool {
        self.reduction_scale(graph) == Some(1.0)
            && self.e_factor.iter().chain(&self.e_var).all(|&e| e == 1.0)
    }
}

struct GbpSweeper<'a> {
    graph: &'a FactorGraph,
    counting: &'a CountingNumbers,
    q: usize,
    log_phi: Vec<f64>,
    log_psi: Vec<f64>,
    /// per variable: k-independent part `h_j + H_j`
    denom: Vec<f64>,
    msg: Vec<f64>,
    log_msg: Vec<f64>,
    weighted: Vec<f64>,
    damping: f64,
    order: Vec<usize>,
}

impl<'a> GbpSweeper<'a> {
    fn new(
        graph: &'a FactorGraph,
        pot: &Potentials,
        counting: &'a CountingNumbers,
        messages: &MessageSet,
        damping: f64,
    ) -> Result<Self> {
        pot.check_graph(graph)?;
        counting.check(graph)?;
        let q = pot.q();
        if messages.q() != q || messages.num_slots() != 2 * graph.num_edges() {
            return Err(invalid("message set does not match the graph"));
        }
        let log_phi = (0..graph.num_variables())
            .flat_map(|i| pot.phi(i).iter().map(|p| p.ln()))
            .collect();
        let log_psi = (0..graph.num_edges())
            .flat_map(|e| pot.psi(e).iter().map(|p| p.ln()))
            .collect();
        let denom = (0..graph.num_variables())
            .map(|i| counting.h_var[i] + counting.region_sum(graph, i))
            .collect();
        let msg = messages.values().to_vec();
        let log_msg = msg.iter().map(|m| m.ln()).collect();
        let mut s = Self {
            graph,
            counting,
            q,
            log_phi,
            log_psi,
            denom,
            msg,
            log_msg,
            weighted: vec![0.0; graph.num_variables() * q],
            damping,
            order: (0..2 * graph.num_edges()).collect(),
        };
        s.recompute();
        Ok(s)
    }

    fn recompute(&mut self) {
        let q = self.q;
        self.weighted.iter_mut().for_each(|w| *w = 0.0);
        for slot in 0..2 * self.graph.num_edges() {
            let e = slot / 2;
            let i = self.graph.endpoint(e, slot % 2);
            let h = self.counting.h_factor[e];
            for x in 0..q {
                self.weighted[i * q + x] += h * self.log_msg[slot * q + x];
            }
        }
    }

    /// `log n_{j->a}` for the source `j` of `slot`'s factor, into `out`.
    fn log_n(&self, e: usize, source_side: usize, out: &mut [f64]) {
        let q = self.q;
        let j = self.graph.endpoint(e, source_side);
        let src_slot = 2 * e + source_side;
        let h_a = self.counting.h_factor[e];
        let k = h_a / self.denom[j];
        let c = self.counting.e_var[j] * k;
        for (x, o) in out.iter_mut().enumerate() {
            *o = (-h_a * self.log_msg[src_slot * q + x] + k * self.weighted[j * q + x])
                + c * self.log_phi[j * q + x];
        }
    }

    fn compute_update(&self, slot: usize, out: &mut [f64]) -> Result<()> {
        let q = self.q;
        let e = slot / 2;
        let side = slot % 2;
        let mut ln = vec![0.0; q];
        self.log_n(e, 1 - side, &mut ln);
        let h_a = self.counting.h_factor[e];
        let e_a = self.counting.e_factor[e];
        let lpsi = &self.log_psi[e * q * q..(e + 1) * q * q];
        let mut terms = vec![0.0; q];
        for (xt, o) in out.iter_mut().enumerate() {
            for (xs, t) in terms.iter_mut().enumerate() {
                let lp = if side == 0 { lpsi[xt * q + xs] } else { lpsi[xs * q + xt] };
                *t = (e_a * lp + ln[xs]) / h_a;
            }
            *o = log_sum_exp(&terms);
        }
        let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::ZeroMessage { slot });
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - top).exp();
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(())
    }

    fn commit(&mut self, slot: usize, update: &mut [f64], track: bool) -> f64 {
        let q = self.q;
        let base = slot * q;
        if self.damping > 0.0 {
            let lambda = self.damping;
            let mut total = 0.0;
            for (x, u) in update.iter_mut().enumerate() {
                *u = (1.0 - lambda) * *u + lambda * self.msg[base + x];
                total += *u;
            }
            update.iter_mut().for_each(|u| *u /= total);
        }
        let e = slot / 2;
        let i = self.graph.endpoint(e, slot % 2);
        let h = self.counting.h_factor[e];
        let mut deltas = vec![0.0; q];
        for x in 0..q {
            let new_log = update[x].ln();
            deltas[x] = new_log - self.log_msg[base + x];
            self.msg[base + x] = update[x];
            self.log_msg[base + x] = new_log;
            if track {
                self.weighted[i * q + x] += h * deltas[x];
            }
        }
        centered_sup(&deltas)
    }

    fn sweep<R: Rng + ?Sized>(&mut self, schedule: Schedule, rng: &mut R) -> Result<f64> {
        self.recompute();
        let q = self.q;
        let slots = 2 * self.graph.num_edges();
        let mut change: f64 = 0.0;
        let mut buf = vec![0.0; q];
        match schedule {
            Schedule::Synchronous => {
                let mut pending = vec![0.0; slots * q];
                for slot in 0..slots {
                    self.compute_update(slot, &mut pending[slot * q..(slot + 1) * q])?;
                }
                for slot in 0..slots {
                    buf.copy_from_slice(&pending[slot * q..(slot + 1) * q]);
                    change = change.max(self.commit(slot, &mut buf, false));
                }
            }
            Schedule::RandomSequential => {
                let mut order = std::mem::take(&mut self.order);
                order.shuffle(rng);
                for &slot in &order {
                    self.compute_update(slot, &mut buf)?;
                    change = change.max(self.commit(slot, &mut buf, true));
                }
                self.order = order;
            }
        }
        Ok(change)
    }

    fn messages(&self) -> MessageSet {
        MessageSet {
            q: self.q,
            values: self.msg.clone(),
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// One sweep of the generalized update.
pub fn gbp_step<R: Rng + ?Sized>(
    graph: &FactorGraph,
    pot: &Potentials,
    messages: &MessageSet,
    counting: &CountingNumbers,
    config: &BpConfig,
    rng: &mut R,
) -> Result<MessageSet> {
    config.validate()?;
    let mut s = GbpSweeper::new(graph, pot, counting, messages, config.damping)?;
    s.sweep(config.schedule, rng)?;
    Ok(s.messages())
}

/// Iterate the generalized update from `init` (uniform if `None`).
pub fn run_gbp(
    graph: &FactorGraph,
    pot: &Potentials,
    counting: &CountingNumbers,
    config: &BpConfig,
    init: Option<&MessageSet>,
) -> Result<(MessageSet, BeliefSet, BpStatus)> {
    config.validate()?;
    let uniform;
    let init = match init {
        Some(m) => m,
        None => {
            uniform = MessageSet::uniform(graph, pot.q());
            &uniform
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut s = GbpSweeper::new(graph, pot, counting, init, config.damping)?;
    let mut status = BpStatus::MaxItersReached {
        iterations: config.max_iters,
        last_change: f64::INFINITY,
    };
    for t in 0..config.max_iters {
        let change = s.sweep(config.schedule, &mut rng)?;
        if change < config.tolerance {
            status = BpStatus::Converged { iterations: t + 1 };
            break;
        }
        status = BpStatus::MaxItersReached {
            iterations: t + 1,
            last_change: change,
        };
    }
    let messages = s.messages();
    let beliefs = gbp_beliefs(graph, pot, counting, &messages)?;
    Ok((messages, beliefs, status))
}

/// Beliefs at (or near) a generalized fixed point.
///
/// `b_a ∝ exp((e_a log psi_a + sum_j log n_{j->a}) / h_a)`. Single beliefs use
/// the compatibility relation `b_i ∝ m~_{a->i} n_{i->a}^{1/h_a}`, averaged in
/// the log domain over incident factors; isolated variables get
/// `phi_i^{e_i/h_i}`.
pub fn gbp_beliefs(
    graph: &FactorGraph,
    pot: &Potentials,
    counting: &CountingNumbers,
    messages: &MessageSet,
) -> Result<BeliefSet> {
    let s = GbpSweeper::new(graph, pot, counting, messages, 0.0)?;
    let q = s.q;
    let n = graph.num_variables();
    let mut log_b = vec![0.0; n * q];
    let mut ln = vec![0.0; q];
    for i in 0..n {
        let inc = graph.incidence(i);
        if inc.is_empty() {
            let h = counting.h_var[i];
            if h == 0.0 {
                return Err(Error::CountingGuard(format!("isolated variable {i} with h_i = 0")));
            }
            for x in 0..q {
                log_b[i * q + x] = counting.e_var[i] / h * s.log_phi[i * q + x];
            }
            continue;
        }
        for &(e, side) in inc {
            s.log_n(e, side, &mut ln);
            let h_a = counting.h_factor[e];
            for x in 0..q {
                log_b[i * q + x] += s.log_msg[(2 * e + side) * q + x] + ln[x] / h_a;
            }
        }
        let d = inc.len() as f64;
        log_b[i * q..(i + 1) * q].iter_mut().for_each(|v| *v /= d);
    }
    let mut singles = vec![0.0; n * q];
    let mut log_z_single = vec![0.0; n];
    for i in 0..n {
        let row = &log_b[i * q..(i + 1) * q];
        let lz = log_sum_exp(row);
        log_z_single[i] = lz;
        for x in 0..q {
            singles[i * q + x] = (row[x] - lz).exp();
        }
    }
    let m = graph.num_edges();
    let mut pairs = vec![0.0; m * q * q];
    let mut log_z_pair = vec![0.0; m];
    let mut n0 = vec![0.0; q];
    let mut n1 = vec![0.0; q];
    let mut table = vec![0.0; q * q];
    for e in 0..m {
        s.log_n(e, 0, &mut n0);
        s.log_n(e, 1, &mut n1);
        let h_a = counting.h_factor[e];
        let e_a = counting.e_factor[e];
        for a in 0..q {
            for b in 0..q {
                table[a * q + b] = (e_a * s.log_psi[e * q * q + a * q + b] + n0[a] + n1[b]) / h_a;
            }
        }
        let lz = log_sum_exp(&table);
        log_z_pair[e] = lz;
        for k in 0..q * q {
            pairs[e * q * q + k] = (table[k] - lz).exp();
        }
    }
    Ok(BeliefSet {
        q,
        singles,
        pairs,
        log_z_single,
        log_z_pair,
    })
}

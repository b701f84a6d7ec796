use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BeliefSet, BpConfig, Evidence, GuideField, GuideSchedule, MessageSet, Potentials, Schedule};
use crate::error::{invalid, Error, Result};
use crate::graph::FactorGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BpStatus {
    Converged { iterations: usize },
    MaxItersReached { iterations: usize, last_change: f64 },
}

impl BpStatus {
    pub fn converged(&self) -> bool {
        matches!(self, Self::Converged { .. })
    }

    pub fn iterations(&self) -> usize {
        match *self {
            Self::Converged { iterations } | Self::MaxItersReached { iterations, .. } => iterations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BpRun {
    pub messages: MessageSet,
    pub beliefs: BeliefSet,
    pub status: BpStatus,
}

/// Mutable sweep state: linear and log messages plus per-variable sums of
/// incoming log messages.
pub(crate) struct Sweeper<'a> {
    graph: &'a FactorGraph,
    pot: &'a Potentials,
    evidence: &'a Evidence,
    q: usize,
    base_log_phi: Vec<f64>,
    log_phi: Vec<f64>,
    msg: Vec<f64>,
    log_msg: Vec<f64>,
    sums: Vec<f64>,
    damping: f64,
    order: Vec<usize>,
    pending: Vec<f64>,
}

impl<'a> Sweeper<'a> {
    pub(crate) fn new(
        graph: &'a FactorGraph,
        pot: &'a Potentials,
        evidence: &'a Evidence,
        messages: &MessageSet,
        damping: f64,
    ) -> Result<Self> {
        pot.check_graph(graph)?;
        let q = pot.q();
        if messages.q() != q || messages.num_slots() != 2 * graph.num_edges() {
            return Err(invalid("message set does not match the graph"));
        }
        if evidence.num_variables() != graph.num_variables() {
            return Err(invalid("evidence does not match the graph"));
        }
        if let Some((i, x)) = evidence.observed().find(|&(_, x)| x >= q) {
            return Err(invalid(format!("observation ({i}, {x}) out of range")));
        }
        let base_log_phi: Vec<f64> = (0..graph.num_variables())
            .flat_map(|i| pot.phi(i).iter().map(|p| p.ln()))
            .collect();
        let msg = messages.values().to_vec();
        // binary messages only need their log-odds: keep (0, ln(m1/m0))
        let log_msg = if q == 2 {
            msg.chunks(2).flat_map(|m| [0.0, (m[1] / m[0]).ln()]).collect()
        } else {
            msg.iter().map(|m| m.ln()).collect()
        };
        let mut sweeper = Self {
            graph,
            pot,
            evidence,
            q,
            log_phi: base_log_phi.clone(),
            base_log_phi,
            msg,
            log_msg,
            sums: vec![0.0; graph.num_variables() * q],
            damping,
            order: (0..2 * graph.num_edges()).collect(),
            pending: Vec::new(),
        };
        sweeper.recompute_sums();
        Ok(sweeper)
    }

    pub(crate) fn set_guide(&mut self, guide: Option<GuideField<'_>>) -> Result<()> {
        self.log_phi.copy_from_slice(&self.base_log_phi);
        let Some(guide) = guide else {
            return Ok(());
        };
        if guide.pattern.len() != self.graph.num_variables() {
            return Err(invalid("guide pattern length differs from the variable count"));
        }
        let q = self.q;
        for (i, &target) in guide.pattern.iter().enumerate() {
            if target >= q {
                return Err(invalid(format!("guide state {target} out of range")));
            }
            for x in 0..q {
                let sign = if x == target { 1.0 } else { -1.0 };
                self.log_phi[i * q + x] += sign * guide.strength;
            }
        }
        Ok(())
    }

    fn recompute_sums(&mut self) {
        let q = self.q;
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        for slot in 0..2 * self.graph.num_edges() {
            let target = self.graph.endpoint(slot / 2, slot % 2);
            for x in 0..q {
                self.sums[target * q + x] += self.log_msg[slot * q + x];
            }
        }
    }

    /// Raw (undamped, normalized) update of `slot` from the current state.
    fn compute_update(&self, slot: usize, out: &mut [f64]) -> Result<()> {
        let q = self.q;
        let e = slot / 2;
        let side = slot % 2;
        let source = self.graph.endpoint(e, 1 - side);
        let source_slot = 2 * e + (1 - side);
        let psi = self.pot.psi(e);
        // psi entry for (target state, source state)
        let psi_at = |xt: usize, xs: usize| {
            if side == 0 {
                psi[xt * q + xs]
            } else {
                psi[xs * q + xt]
            }
        };
        if q == 2 {
            let (a, b) = match self.evidence.state(source) {
                Some(xs) => (psi_at(1, xs), psi_at(0, xs)),
                None => {
                    let t = (self.log_phi[2 * source + 1] - self.log_phi[2 * source])
                        + (self.sums[2 * source + 1] - self.sums[2 * source])
                        - (self.log_msg[2 * source_slot + 1] - self.log_msg[2 * source_slot]);
                    if t >= 0.0 {
                        let w = (-t).exp();
                        (psi_at(1, 0) * w + psi_at(1, 1), psi_at(0, 0) * w + psi_at(0, 1))
                    } else {
                        let w = t.exp();
                        (psi_at(1, 0) + psi_at(1, 1) * w, psi_at(0, 0) + psi_at(0, 1) * w)
                    }
                }
            };
            let s = a + b;
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ZeroMessage { slot });
            }
            out[0] = b / s;
            out[1] = a / s;
            return Ok(());
        }
        // generic q: cavity message in log domain, shifted by its maximum
        let mut cavity = vec![0.0; q];
        match self.evidence.state(source) {
            Some(xs) => {
                cavity.iter_mut().for_each(|c| *c = 0.0);
                cavity[xs] = 1.0;
            }
            None => {
                for (xs, c) in cavity.iter_mut().enumerate() {
                    *c = self.log_phi[source * q + xs] + self.sums[source * q + xs]
                        - self.log_msg[source_slot * q + xs];
                }
                let top = cavity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                cavity.iter_mut().for_each(|c| *c = (*c - top).exp());
            }
        }
        let mut total = 0.0;
        for (xt, o) in out.iter_mut().enumerate() {
            *o = (0..q).map(|xs| psi_at(xt, xs) * cavity[xs]).sum();
            total += *o;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroMessage { slot });
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(())
    }

    /// Damp, store and return the centered-log change of `slot`.
    fn commit(&mut self, slot: usize, update: &mut [f64], track_sums: bool) -> f64 {
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
        let target = self.graph.endpoint(slot / 2, slot % 2);
        if q == 2 {
            let l = (update[1] / update[0]).ln();
            let d = l - self.log_msg[base + 1];
            self.msg[base] = update[0];
            self.msg[base + 1] = update[1];
            self.log_msg[base + 1] = l;
            if track_sums {
                self.sums[2 * target + 1] += d;
            }
            return 0.5 * d.abs();
        }
        let mut deltas = [0.0f64; 8];
        let mut delta_vec;
        let deltas: &mut [f64] = if q <= 8 {
            &mut deltas[..q]
        } else {
            delta_vec = vec![0.0; q];
            &mut delta_vec
        };
        for x in 0..q {
            let new_log = update[x].ln();
            let d = new_log - self.log_msg[base + x];
            deltas[x] = d;
            self.msg[base + x] = update[x];
            self.log_msg[base + x] = new_log;
            if track_sums {
                self.sums[target * q + x] += d;
            }
        }
        centered_sup(deltas)
    }

    pub(crate) fn sweep<R: Rng + ?Sized>(&mut self, schedule: Schedule, rng: &mut R) -> Result<f64> {
        self.recompute_sums();
        let q = self.q;
        let slots = 2 * self.graph.num_edges();
        let mut change: f64 = 0.0;
        let mut buf = vec![0.0; q];
        match schedule {
            Schedule::Synchronous => {
                let mut pending = std::mem::take(&mut self.pending);
                pending.resize(slots * q, 0.0);
                for slot in 0..slots {
                    self.compute_update(slot, &mut pending[slot * q..(slot + 1) * q])?;
                }
                for slot in 0..slots {
                    buf.copy_from_slice(&pending[slot * q..(slot + 1) * q]);
                    change = change.max(self.commit(slot, &mut buf, false));
                }
                self.pending = pending;
                self.recompute_sums();
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

    pub(crate) fn messages(&self) -> MessageSet {
        MessageSet {
            q: self.q,
            values: self.msg.clone(),
        }
    }
}

/// `max_x |d_x - mean(d)|`
pub(crate) fn centered_sup(deltas: &[f64]) -> f64 {
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    deltas.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max)
}

/// One sweep of the configured schedule, returning the updated messages.
pub fn bp_step<R: Rng + ?Sized>(
    graph: &FactorGraph,
    pot: &Potentials,
    messages: &MessageSet,
    evidence: &Evidence,
    guide: Option<GuideField<'_>>,
    config: &BpConfig,
    rng: &mut R,
) -> Result<MessageSet> {
    config.validate()?;
    if let Some(g) = guide {
        if !(g.strength >= 0.0) {
            return Err(invalid("guide strength must be non-negative"));
        }
    }
    let mut sweeper = Sweeper::new(graph, pot, evidence, messages, config.damping)?;
    sweeper.set_guide(guide)?;
    sweeper.sweep(config.schedule, rng)?;
    Ok(sweeper.messages())
}

/// Run BP from uniform messages.
pub fn run_bp(
    graph: &FactorGraph,
    pot: &Potentials,
    evidence: &Evidence,
    guide: Option<&GuideSchedule>,
    config: &BpConfig,
) -> Result<BpRun> {
    let init = MessageSet::uniform(graph, pot.q());
    run_bp_from(graph, pot, evidence, guide, config, &init)
}

/// Run BP from the given messages until the change drops below the tolerance
/// (and the guide, if any, has faded below its cutoff) or `max_iters` sweeps.
pub fn run_bp_from(
    graph: &FactorGraph,
    pot: &Potentials,
    evidence: &Evidence,
    guide: Option<&GuideSchedule>,
    config: &BpConfig,
    init: &MessageSet,
) -> Result<BpRun> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sweeper = Sweeper::new(graph, pot, evidence, init, config.damping)?;
    let mut status = BpStatus::MaxItersReached {
        iterations: config.max_iters,
        last_change: f64::INFINITY,
    };
    for t in 0..config.max_iters {
        let field = guide.map_or(0.0, |g| g.field(t));
        sweeper.set_guide(guide.map(|g| GuideField {
            pattern: &g.pattern,
            strength: field,
        }))?;
        let change = sweeper.sweep(config.schedule, &mut rng)?;
        let faded = guide.is_none_or(|g| field < g.cutoff);
        if change < config.tolerance && faded {
            status = BpStatus::Converged { iterations: t + 1 };
            break;
        }
        status = BpStatus::MaxItersReached {
            iterations: t + 1,
            last_change: change,
        };
    }
    let messages = sweeper.messages();
    let beliefs = compute_beliefs(graph, pot, evidence, &messages)?;
    Ok(BpRun {
        messages,
        beliefs,
        status,
    })
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Single and pair beliefs induced by `messages`. Observed variables get a
/// point-mass belief and condition the pair beliefs they touch.
pub fn compute_beliefs(
    graph: &FactorGraph,
    pot: &Potentials,
    evidence: &Evidence,
    messages: &MessageSet,
) -> Result<BeliefSet> {
    pot.check_graph(graph)?;
    let q = pot.q();
    let n = graph.num_variables();
    if messages.num_slots() != 2 * graph.num_edges() || messages.q() != q {
        return Err(invalid("message set does not match the graph"));
    }
    let log_msg: Vec<f64> = messages.values().iter().map(|m| m.ln()).collect();
    let mut log_b = vec![0.0; n * q];
    for i in 0..n {
        for x in 0..q {
            log_b[i * q + x] = pot.phi(i)[x].ln();
        }
        for &(e, side) in graph.incidence(i) {
            let slot = 2 * e + side;
            for x in 0..q {
                log_b[i * q + x] += log_msg[slot * q + x];
            }
        }
    }
    // cavity log messages n_{i -> e} for both endpoints
    let cavity = |i: usize, e: usize, side: usize, x: usize| -> f64 {
        match evidence.state(i) {
            Some(s) if s != x => f64::NEG_INFINITY,
            _ => log_b[i * q + x] - log_msg[(2 * e + side) * q + x],
        }
    };
    let mut pairs = vec![0.0; graph.num_edges() * q * q];
    let mut log_z_pair = vec![0.0; graph.num_edges()];
    let mut scratch = vec![0.0; q * q];
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let psi = pot.psi(e);
        for xi in 0..q {
            for xj in 0..q {
                scratch[xi * q + xj] = psi[xi * q + xj].ln() + cavity(i, e, 0, xi) + cavity(j, e, 1, xj);
            }
        }
        let lz = log_sum_exp(&scratch);
        if !lz.is_finite() {
            return Err(invalid(format!("pair belief of edge ({i}, {j}) has no mass")));
        }
        log_z_pair[e] = lz;
        for (k, v) in scratch.iter().enumerate() {
            pairs[e * q * q + k] = (v - lz).exp();
        }
    }
    let mut singles = vec![0.0; n * q];
    let mut log_z_single = vec![0.0; n];
    for i in 0..n {
        let row = &log_b[i * q..(i + 1) * q];
        match evidence.state(i) {
            Some(s) => {
                singles[i * q + s] = 1.0;
                log_z_single[i] = row[s];
            }
            None => {
                let lz = log_sum_exp(row);
                log_z_single[i] = lz;
                for x in 0..q {
                    singles[i * q + x] = (row[x] - lz).exp();
                }
            }
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

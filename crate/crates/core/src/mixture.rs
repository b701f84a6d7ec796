//! Hidden mixture of product distributions used as ground truth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::bp::Evidence;
use crate::error::{invalid, Error, Result};
use crate::graph::{clamp_prob, PairwiseStats};

/// `P(x) = (1/C) sum_c prod_i p_i^c(x_i)` over binary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub n: usize,
    pub c: usize,
    /// `p[c][i] = p_i^c(1)`
    pub p: Vec<Vec<f64>>,
    pub h_max: f64,
    /// `(1/4) E tanh^2 h` for `h ~ U[-h_max, h_max]`
    pub v: f64,
    /// `(1/4)` times the sample mean of `(2p - 1)^2`
    pub v_empirical: f64,
    pub seed: u64,
}

/// `(1/4)(1 - tanh(h)/h)`
pub fn v_of_h_max(h_max: f64) -> f64 {
    if h_max.abs() < 1e-8 {
        // series: (1/4)(h^2/3 - ...)
        return h_max * h_max / 12.0;
    }
    0.25 * (1.0 - h_max.tanh() / h_max)
}

/// Solve `v_of_h_max(h) = v` by bisection.
pub fn h_max_for_v(v: f64) -> Result<f64> {
    if !(0.0..0.25).contains(&v) {
        return Err(invalid(format!("v must lie in [0, 1/4), got {v}")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while v_of_h_max(hi) < v {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoBracket { lo, hi });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if v_of_h_max(mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standardized component biases `xi_i^c = (p_i^c - 1/2) / sqrt(v)` with
/// their site means and centered pair covariances.
#[derive(Debug, Clone)]
pub struct XiTable {
    pub xi: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl XiTable {
    /// `(1/C) sum_c xi_i^c xi_j^c - xi_i xi_j`
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        let c = self.xi.len() as f64;
        self.xi.iter().map(|row| row[i] * row[j]).sum::<f64>() / c - self.mean[i] * self.mean[j]
    }
}

impl MixtureModel {
    /// Draw `h_i^c ~ U[-h_max, h_max]` and set `p = (1 + tanh h)/2`.
    pub fn generate(n: usize, c: usize, h_max: f64, seed: u64) -> Result<Self> {
        if n == 0 || c == 0 {
            return Err(invalid("mixture needs at least one variable and one component"));
        }
        if !(h_max >= 0.0) || !h_max.is_finite() {
            return Err(invalid(format!("h_max must be non-negative, got {h_max}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let h = if h_max > 0.0 { rng.random_range(-h_max..=h_max) } else { 0.0 };
                        0.5 * (1.0 + h.tanh())
                    })
                    .collect()
            })
            .collect();
        Ok(Self::from_table(p, h_max, seed))
    }

    /// Same as [`generate`](Self::generate) with `h_max` solved from `v`.
    pub fn generate_with_v(n: usize, c: usize, v: f64, seed: u64) -> Result<Self> {
        Self::generate(n, c, h_max_for_v(v)?, seed)
    }

    /// Wrap an explicit `C x N` table (entries in `[0, 1]`).
    pub fn from_probabilities(p: Vec<Vec<f64>>) -> Result<Self> {
        let n = p.first().map_or(0, |r| r.len());
        if n == 0 || p.iter().any(|r| r.len() != n) {
            return Err(invalid("probability table must be a non-empty rectangle"));
        }
        if p.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid("probabilities must lie in [0, 1]"));
        }
        Ok(Self::from_table(p, f64::NAN, 0))
    }

    fn from_table(p: Vec<Vec<f64>>, h_max: f64, seed: u64) -> Self {
        let c = p.len();
        let n = p[0].len();
        let v_empirical =
            p.iter().flatten().map(|x| (2.0 * x - 1.0).powi(2)).sum::<f64>() / (4.0 * (n * c) as f64);
        let v = if h_max.is_nan() { v_empirical } else { v_of_h_max(h_max) };
        Self {
            n,
            c,
            p,
            h_max,
            v,
            v_empirical,
            seed,
        }
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.p[c]
    }

    /// `x_i^{c,opt} = 1{p_i^c > 1/2}`
    pub fn optimal_pattern(&self, c: usize) -> Vec<usize> {
        self.p[c].iter().map(|&x| usize::from(x > 0.5)).collect()
    }

    /// Exact single and pair marginals over every pair of variables.
    pub fn exact_pair_stats(&self) -> PairwiseStats {
        let n = self.n;
        let cf = self.c as f64;
        let singles: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let p1 = self.p.iter().map(|row| row[i]).sum::<f64>() / cf;
                [self.p.iter().map(|row| 1.0 - row[i]).sum::<f64>() / cf, p1]
            })
            .collect();
        let mut pairs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let mut t = [0.0; 4];
                for row in &self.p {
                    let (a, b) = (row[i], row[j]);
                    t[0] += (1.0 - a) * (1.0 - b);
                    t[1] += (1.0 - a) * b;
                    t[2] += a * (1.0 - b);
                    t[3] += a * b;
                }
                pairs.push(((i, j), t.map(|x| x / cf)));
            }
        }
        PairwiseStats::new(singles, pairs).expect("complete pair list is well formed")
    }

    /// Independent Bernoulli draws from component `c`.
    pub fn sample_component<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Vec<usize> {
        self.p[c].iter().map(|&p| usize::from(rng.random::<f64>() < p)).collect()
    }

    pub fn sample_component_seeded(&self, c: usize, seed: u64) -> Vec<usize> {
        self.sample_component(c, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Posterior log-weights of the components given `evidence`, normalized
    /// so that their log-sum-exp is zero.
    fn component_log_weights(&self, evidence: &Evidence) -> Result<Vec<f64>> {
        if evidence.num_variables() != self.n {
            return Err(invalid("evidence does not match the mixture"));
        }
        let mut lw: Vec<f64> = self
            .p
            .iter()
            .map(|row| {
                evidence
                    .observed()
                    .map(|(j, x)| if x == 1 { row[j].ln() } else { (1.0 - row[j]).ln() })
                    .sum()
            })
            .collect();
        let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY || top.is_nan() {
            return Err(Error::ImpossibleEvidence);
        }
        let lz = top + lw.iter().map(|w| (w - top).exp()).sum::<f64>().ln();
        lw.iter_mut().for_each(|w| *w -= lz);
        Ok(lw)
    }

    /// `P(x_i | evidence)` as `[P(0), P(1)]`.
    pub fn exact_conditional(&self, evidence: &Evidence, i: usize) -> Result<[f64; 2]> {
        if evidence.is_observed(i) {
            return Err(invalid(format!("variable {i} is observed")));
        }
        let lw = self.component_log_weights(evidence)?;
        let p1: f64 = lw.iter().zip(&self.p).map(|(w, row)| w.exp() * row[i]).sum();
        Ok([1.0 - p1, p1])
    }

    /// `P(x_i = 1 | evidence)` for every variable (observed ones get their state).
    pub fn exact_conditionals(&self, evidence: &Evidence) -> Result<Vec<f64>> {
        let lw = self.component_log_weights(evidence)?;
        let w: Vec<f64> = lw.iter().map(|x| x.exp()).collect();
        Ok((0..self.n)
            .map(|i| match evidence.state(i) {
                Some(x) => x as f64,
                None => w.iter().zip(&self.p).map(|(w, row)| w * row[i]).sum(),
            })
            .collect())
    }

    pub fn xi(&self) -> XiTable {
        let s = self.v.sqrt();
        let xi: Vec<Vec<f64>> = self
            .p
            .iter()
            .map(|row| row.iter().map(|p| if s > 0.0 { (p - 0.5) / s } else { 0.0 }).collect())
            .collect();
        let mean = (0..self.n)
            .map(|i| xi.iter().map(|row| row[i]).sum::<f64>() / self.c as f64)
            .collect();
        XiTable { xi, mean }
    }
}

/// Inference quality on the hidden variables for one component sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    /// prediction success rate of the beliefs
    pub r: f64,
    /// success rate of the exact posterior
    pub r0: f64,
    /// `sum_x |b(x) - P(x)|`, averaged
    pub e: f64,
    pub dkl: f64,
    pub n_hidden: usize,
}

fn kl_binary(b1: f64, p1: f64) -> f64 {
    let (b1, p1) = (clamp_prob(b1), clamp_prob(p1));
    let (b0, p0) = (1.0 - b1, 1.0 - p1);
    b0 * (b0 / p0).ln() + b1 * (b1 / p1).ln()
}

/// Metrics of beliefs `b1[i] = b_i(1)` against the exact conditionals given
/// `evidence`, scored on the sample `x` over hidden sites.
pub fn compute_metrics(b1: &[f64], mixture: &MixtureModel, x: &[usize], evidence: &Evidence) -> Result<Metrics> {
    let p_ref = mixture.exact_conditionals(evidence)?;
    metrics_against(b1, &p_ref, x, evidence)
}

/// As [`compute_metrics`] with precomputed reference probabilities.
pub fn metrics_against(b1: &[f64], p_ref: &[f64], x: &[usize], evidence: &Evidence) -> Result<Metrics> {
    let n = p_ref.len();
    if b1.len() != n || x.len() != n || evidence.num_variables() != n {
        return Err(invalid("metric inputs have mismatched lengths"));
    }
    let mut m = Metrics::default();
    for i in (0..n).filter(|&i| !evidence.is_observed(i)) {
        let predict = usize::from(b1[i] > 0.5);
        let oracle = usize::from(p_ref[i] > 0.5);
        m.r += f64::from(u8::from(predict == x[i]));
        m.r0 += f64::from(u8::from(oracle == x[i]));
        m.e += 2.0 * (b1[i] - p_ref[i]).abs();
        m.dkl += kl_binary(b1[i], p_ref[i]);
        m.n_hidden += 1;
    }
    if m.n_hidden > 0 {
        let h = m.n_hidden as f64;
        m.r /= h;
        m.r0 /= h;
        m.e /= h;
        m.dkl /= h;
    }
    Ok(m)
}

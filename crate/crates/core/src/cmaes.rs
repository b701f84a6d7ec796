//! (mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundHandling {
    /// evaluate at the box projection plus a quadratic penalty
    #[default]
    Penalty,
    /// fold samples back into the box
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaesConfig {
    /// population size (default 4 + floor(3 ln n))
    pub lambda: Option<usize>,
    /// parents (default lambda / 2)
    pub mu: Option<usize>,
    pub sigma0: f64,
    pub max_evals: usize,
    pub target: Option<f64>,
    pub seed: u64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub bound_handling: BoundHandling,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            mu: None,
            sigma0: 0.5,
            max_evals: 10_000,
            target: None,
            seed: 0,
            lower: None,
            upper: None,
            bound_handling: BoundHandling::Penalty,
        }
    }
}

impl CmaesConfig {
    fn sizes(&self, n: usize) -> Result<(usize, usize)> {
        let lambda = self.lambda.unwrap_or(4 + (3.0 * (n as f64).ln()).floor() as usize);
        let mu = self.mu.unwrap_or(lambda / 2);
        if lambda < 4 || mu < 1 || mu > lambda / 2 {
            return Err(invalid(format!("need lambda >= 4 and 1 <= mu <= lambda/2 (got {lambda}, {mu})")));
        }
        Ok((lambda, mu))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(invalid("empty search space"));
        }
        self.sizes(n)?;
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(invalid("sigma0 must be positive"));
        }
        for b in [&self.lower, &self.upper].into_iter().flatten() {
            if b.len() != n {
                return Err(invalid("bounds must match the dimension"));
            }
        }
        if let (Some(lo), Some(hi)) = (&self.lower, &self.upper) {
            if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                return Err(invalid("lower bounds must lie below upper bounds"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Target,
    MaxEvals,
    SigmaCollapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub generation: usize,
    /// best value seen so far
    pub best: f64,
    /// median of this generation
    pub median: f64,
    pub sigma: f64,
    pub best_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizationTrace {
    pub generations: Vec<Generation>,
}

impl OptimizationTrace {
    /// `generation,best,median,sigma`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "best", "median", "sigma"])?;
        for g in &self.generations {
            w.write_record([
                g.generation.to_string(),
                g.best.to_string(),
                g.median.to_string(),
                g.sigma.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
    pub mean: Vec<f64>,
    pub stop: StopReason,
    pub trace: OptimizationTrace,
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut t = (x - lo).rem_euclid(2.0 * w);
    if t > w {
        t = 2.0 * w - t;
    }
    lo + t
}

/// Minimizes `objective` from `x0`. Evaluations within a generation run in
/// parallel; sampling and updates are sequential, so results depend only on
/// the seed.
pub fn cmaes_minimize<F>(objective: F, x0: &[f64], config: &CmaesConfig) -> Result<CmaesResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    config.validate(n)?;
    let (lambda, mu) = config.sizes(n)?;
    let nf = n as f64;

    let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = config.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::from_element(n, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);

    let mut best_x = x0.to_vec();
    let mut best_f = f64::INFINITY;
    let mut evaluations = 0;
    let mut trace = OptimizationTrace::default();
    let mut generation = 0;

    let stop = loop {
        generation += 1;
        let samples: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let y = &b * d.component_mul(&z);
                let mut x = &mean + y * sigma;
                if let (BoundHandling::Reflection, Some(lo), Some(hi)) =
                    (config.bound_handling, &config.lower, &config.upper)
                {
                    for i in 0..n {
                        x[i] = reflect(x[i], lo[i], hi[i]);
                    }
                }
                x
            })
            .collect();
        let values: Vec<f64> = map_indexed(lambda, |k| {
            let x = samples[k].as_slice();
            let mut penalty = 0.0;
            let mut clipped = x.to_vec();
            for i in 0..n {
                if let Some(lo) = &config.lower {
                    if clipped[i] < lo[i] {
                        penalty += (lo[i] - clipped[i]).powi(2);
                        clipped[i] = lo[i];
                    }
                }
                if let Some(hi) = &config.upper {
                    if clipped[i] > hi[i] {
                        penalty += (clipped[i] - hi[i]).powi(2);
                        clipped[i] = hi[i];
                    }
                }
            }
            let f = if penalty > 0.0 {
                objective(&clipped) + 1e3 * penalty
            } else {
                objective(x)
            };
            if f.is_finite() {
                f
            } else {
                f64::INFINITY
            }
        });
        evaluations += lambda;

        // stable sort keeps ties in sampling order
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        if values[order[0]] < best_f {
            best_f = values[order[0]];
            best_x = samples[order[0]].as_slice().to_vec();
        }
        let median = if lambda % 2 == 1 {
            values[order[lambda / 2]]
        } else {
            let (a, b) = (values[order[lambda / 2 - 1]], values[order[lambda / 2]]);
            if a.is_finite() && b.is_finite() {
                0.5 * (a + b)
            } else {
                b
            }
        };

        let old_mean = mean.clone();
        let ys: Vec<DVector<f64>> = order[..mu].iter().map(|&k| (&samples[k] - &old_mean) / sigma).collect();
        let mut y_w = DVector::<f64>::zeros(n);
        for (w, y) in weights.iter().zip(&ys) {
            y_w += y * *w;
        }
        mean = &old_mean + &y_w * sigma;

        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * b.transpose();
        p_sigma = p_sigma * (1.0 - c_sigma) + (&inv_sqrt * &y_w) * (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt();
        let norm_ps = p_sigma.norm();
        let h_sigma = norm_ps / (1.0 - (1.0 - c_sigma).powi(2 * generation as i32)).sqrt()
            < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        p_c = p_c * (1.0 - c_c) + &y_w * (hs * (c_c * (2.0 - c_c) * mu_eff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, y) in weights.iter().zip(&ys) {
            rank_mu += y * y.transpose() * *w;
        }
        let rank_one = &p_c * p_c.transpose() + &cov * ((1.0 - hs) * c_c * (2.0 - c_c));
        cov = &cov * (1.0 - c_1 - c_mu) + rank_one * c_1 + rank_mu * c_mu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((c_sigma / d_sigma) * (norm_ps / chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(cov.clone());
        b = eig.eigenvectors;
        d = eig.eigenvalues.map(|x| x.max(1e-300).sqrt());

        trace.generations.push(Generation {
            generation,
            best: best_f,
            median,
            sigma,
            best_x: best_x.clone(),
        });

        if config.target.is_some_and(|t| best_f <= t) {
            break StopReason::Target;
        }
        if evaluations + lambda > config.max_evals {
            break StopReason::MaxEvals;
        }
        if sigma < 1e-14 || !sigma.is_finite() {
            break StopReason::SigmaCollapse;
        }
    };

    Ok(CmaesResult {
        best_x,
        best_f,
        evaluations,
        mean: mean.as_slice().to_vec(),
        stop,
        trace,
    })
}

//! Gauss rules from the Golub-Welsch eigenvalue problem.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of an `n`-point rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn golub_welsch(offdiag: impl Fn(usize) -> f64, n: usize, mass: f64) -> Rule {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = offdiag(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mass * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to remove eigen-solver noise
    for k in 0..n / 2 {
        let x = 0.5 * (pairs[n - 1 - k].0 - pairs[k].0);
        let w = 0.5 * (pairs[n - 1 - k].1 + pairs[k].1);
        pairs[k] = (-x, w);
        pairs[n - 1 - k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Rule for `E f(z)` with `z ~ N(0, 1)` (probabilists' Hermite).
pub fn gauss_hermite(n: usize) -> Rule {
    golub_welsch(|k| (k as f64).sqrt(), n, 1.0)
}

/// Rule for `int_{-1}^{1} f(x) dx`.
pub fn gauss_legendre(n: usize) -> Rule {
    golub_welsch(
        |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        n,
        2.0,
    )
}

/// `E f(z)` for `z ~ N(0, 1)` when `f` varies sharply near one point `k`:
/// Gauss-Legendre on pieces of `[-L, L]` that shrink toward `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGaussian {
    unit: Rule,
}

const HALF_RANGE: f64 = 10.0;
const GRADING: [f64; 2] = [0.1, 1.0];
const FIXED_CUTS: [f64; 9] = [-HALF_RANGE, -7.0, -4.0, -2.0, 0.0, 2.0, 4.0, 7.0, HALF_RANGE];

impl SplitGaussian {
    /// `n` nodes on each piece.
    pub fn new(n: usize) -> Self {
        Self { unit: gauss_legendre(n) }
    }

    pub fn for_each<F: FnMut(f64, f64)>(&self, kink: f64, mut f: F) {
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mut cuts = FIXED_CUTS.to_vec();
        if kink.abs() < HALF_RANGE {
            cuts.push(kink);
            for d in GRADING {
                cuts.extend([kink - d, kink + d].into_iter().filter(|c| c.abs() < HALF_RANGE));
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for piece in cuts.windows(2) {
            let (mid, half) = (0.5 * (piece[1] + piece[0]), 0.5 * (piece[1] - piece[0]));
            for (&x, &w) in self.unit.nodes.iter().zip(&self.unit.weights) {
                let z = mid + half * x;
                f(z, half * w * norm * (-0.5 * z * z).exp());
            }
        }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, kink: f64, f: F) -> f64 {
        let mut acc = 0.0;
        self.for_each(kink, |z, w| acc += w * f(z));
        acc
    }
}

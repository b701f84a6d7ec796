use std::fmt;
use std::io::Write;

use super::{BeliefSet, MessageSet};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FixedPointLabel {
    /// Matches exactly one mixture component (0-based).
    Pattern(usize),
    Spurious,
    Ambiguous,
}

impl fmt::Display for FixedPointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pattern(c) => write!(f, "pattern({c})"),
            Self::Spurious => f.write_str("spurious"),
            Self::Ambiguous => f.write_str("ambiguous"),
        }
    }
}

/// A converged BP state.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub messages: MessageSet,
    pub beliefs: BeliefSet,
    pub free_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensusConfig {
    pub match_threshold: f64,
    pub dedup_tol: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            match_threshold: 0.05,
            dedup_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistinctPoint {
    pub label: FixedPointLabel,
    pub count: usize,
    pub free_energy: f64,
    /// index of the first fixed point in this class
    pub representative: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Census {
    pub labels: Vec<FixedPointLabel>,
    pub distinct: Vec<DistinctPoint>,
}

impl Census {
    pub fn num_points(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, label: FixedPointLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn spurious_count(&self) -> usize {
        self.count(FixedPointLabel::Spurious)
    }

    pub fn ambiguous_count(&self) -> usize {
        self.count(FixedPointLabel::Ambiguous)
    }

    pub fn distinct_spurious(&self) -> usize {
        self.distinct
            .iter()
            .filter(|d| d.label == FixedPointLabel::Spurious)
            .count()
    }

    pub fn distinct_total(&self) -> usize {
        self.distinct.len()
    }
}

/// Mean over variables of `|b_i(1) - p_i|`.
pub fn mean_abs_distance(beliefs: &BeliefSet, pattern: &[f64]) -> f64 {
    let n = beliefs.num_variables();
    (0..n).map(|i| (beliefs.single(i)[1] - pattern[i]).abs()).sum::<f64>() / n as f64
}

/// Label each fixed point against the component marginals `patterns[c][i] = p_i^c`
/// and group points whose messages agree within `dedup_tol`.
pub fn classify_fixed_points(points: &[FixedPoint], patterns: &[Vec<f64>], config: &CensusConfig) -> Census {
    let labels: Vec<FixedPointLabel> = points
        .iter()
        .map(|p| {
            let mut hits = patterns
                .iter()
                .enumerate()
                .filter(|(_, pat)| mean_abs_distance(&p.beliefs, pat) < config.match_threshold)
                .map(|(c, _)| c);
            match (hits.next(), hits.next()) {
                (Some(c), None) => FixedPointLabel::Pattern(c),
                (None, _) => FixedPointLabel::Spurious,
                _ => FixedPointLabel::Ambiguous,
            }
        })
        .collect();
    let mut distinct: Vec<DistinctPoint> = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let found = distinct
            .iter_mut()
            .find(|d| points[d.representative].messages.sup_distance(&p.messages) < config.dedup_tol);
        match found {
            Some(d) => d.count += 1,
            None => distinct.push(DistinctPoint {
                label: labels[k],
                count: 1,
                free_energy: p.free_energy,
                representative: k,
            }),
        }
    }
    Census { labels, distinct }
}

/// `label,count,free_energy`, one row per distinct fixed point.
pub fn write_census_csv<W: Write>(census: &Census, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "count", "free_energy"])?;
    for d in &census.distinct {
        w.write_record([d.label.to_string(), d.count.to_string(), d.free_energy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `variable,b0,b1` for binary beliefs.
pub fn write_fixed_point_csv<W: Write>(beliefs: &BeliefSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "b0", "b1"])?;
    for i in 0..beliefs.num_variables() {
        let b = beliefs.single(i);
        w.write_record([i.to_string(), b[0].to_string(), b[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

//! Pairwise factor-graph topology, empirical statistics, pruning and edge ranking.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoder::Couplings;
use crate::error::{invalid, Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before any log or ratio.
pub const PROB_FLOOR: f64 = 1e-9;

const NORMALIZATION_TOL: f64 = 1e-12;
const CONSISTENCY_TOL: f64 = 1e-10;

/// Smallest weight handed to the Laplacian when ranking by conductance.
const MIN_CONDUCTANCE_WEIGHT: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub(crate) fn canonical(i: usize, j: usize) -> (usize, usize) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Pairwise factor graph over `num_variables` variables.
///
/// Each factor is an edge `(i, j)` with `i < j`. Variables keep an incidence list of
/// `(edge, side)` pairs where `side` is 0 when the variable is the edge's first endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    num_variables: usize,
    edges: Vec<(usize, usize)>,
    degree: Vec<usize>,
    incidence: Vec<Vec<(usize, usize)>>,
    components: usize,
}

impl FactorGraph {
    pub fn new<I>(num_variables: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut seen = HashMap::new();
        let mut list = Vec::new();
        for (i, j) in edges {
            if i == j {
                return Err(invalid(format!("factor ({i}, {j}) repeats a variable")));
            }
            if i >= num_variables || j >= num_variables {
                return Err(invalid(format!(
                    "factor ({i}, {j}) out of range for {num_variables} variables"
                )));
            }
            let e = canonical(i, j);
            if seen.insert(e, list.len()).is_some() {
                return Err(invalid(format!("duplicate factor ({}, {})", e.0, e.1)));
            }
            list.push(e);
        }
        let mut degree = vec![0; num_variables];
        let mut incidence = vec![Vec::new(); num_variables];
        for (e, &(i, j)) in list.iter().enumerate() {
            degree[i] += 1;
            degree[j] += 1;
            incidence[i].push((e, 0));
            incidence[j].push((e, 1));
        }
        let components = count_components(num_variables, &list);
        Ok(Self {
            num_variables,
            edges: list,
            degree,
            incidence,
            components,
        })
    }

    /// Complete graph with edges in lexicographic order.
    pub fn complete(num_variables: usize) -> Self {
        let edges = (0..num_variables).flat_map(|i| (i + 1..num_variables).map(move |j| (i, j)));
        Self::new(num_variables, edges).expect("complete graph is well formed")
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Endpoint of edge `e` on the given side.
    pub fn endpoint(&self, e: usize, side: usize) -> usize {
        let (i, j) = self.edges[e];
        if side == 0 {
            i
        } else {
            j
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    /// `(edge, side)` pairs for every factor containing variable `i`.
    pub fn incidence(&self, i: usize) -> &[(usize, usize)] {
        &self.incidence[i]
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components <= 1
    }

    pub fn is_tree(&self) -> bool {
        self.is_connected() && self.edges.len() + 1 == self.num_variables
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_variables == 0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.num_variables as f64
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = canonical(i, j);
        self.edges.iter().position(|&e| e == key)
    }

    /// Longest shortest path (in edges); `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        if !self.is_connected() {
            return None;
        }
        let mut best = 0;
        for s in 0..self.num_variables {
            let mut dist = vec![usize::MAX; self.num_variables];
            let mut queue = std::collections::VecDeque::new();
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &(e, side) in &self.incidence[u] {
                    let w = self.endpoint(e, 1 - side);
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            best = best.max(dist.into_iter().max().unwrap_or(0));
        }
        Some(best)
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

fn count_components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut sets = DisjointSets::new(n);
    let mut components = n;
    for &(i, j) in edges {
        if sets.union(i, j) {
            components -= 1;
        }
    }
    components
}

/// Greedily add edges from `candidates` (highest priority first) that join two
/// components of the graph spanned by `kept`. Returns the added edges and the
/// number of components left.
pub(crate) fn greedy_repair(
    n: usize,
    kept: &[(usize, usize)],
    candidates: &[(usize, usize)],
) -> (Vec<(usize, usize)>, usize) {
    let mut sets = DisjointSets::new(n);
    let mut components = n;
    for &(i, j) in kept {
        if sets.union(i, j) {
            components -= 1;
        }
    }
    let mut added = Vec::new();
    for &(i, j) in candidates {
        if components <= 1 {
            break;
        }
        if sets.union(i, j) {
            components -= 1;
            added.push((i, j));
        }
    }
    (added, components)
}

/// Empirical single and pair marginals of binary variables.
///
/// Pair tables are stored as `[p00, p01, p10, p11]` with the first index
/// referring to the smaller variable index of the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseStats {
    singles: Vec<[f64; 2]>,
    edges: Vec<(usize, usize)>,
    pairs: Vec<[f64; 4]>,
    index: HashMap<(usize, usize), usize>,
}

impl PairwiseStats {
    pub fn new(singles: Vec<[f64; 2]>, pairs: Vec<((usize, usize), [f64; 4])>) -> Result<Self> {
        let n = singles.len();
        let mut edges = Vec::with_capacity(pairs.len());
        let mut tables = Vec::with_capacity(pairs.len());
        let mut index = HashMap::with_capacity(pairs.len());
        for ((i, j), table) in pairs {
            if i == j || i >= n || j >= n {
                return Err(invalid(format!("pair ({i}, {j}) invalid for {n} variables")));
            }
            let (key, table) = if i < j {
                ((i, j), table)
            } else {
                ((j, i), transpose(table))
            };
            if index.insert(key, edges.len()).is_some() {
                return Err(invalid(format!("duplicate pair ({}, {})", key.0, key.1)));
            }
            edges.push(key);
            tables.push(table);
        }
        Ok(Self {
            singles,
            edges,
            pairs: tables,
            index,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.singles.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.edges.len()
    }

    pub fn single(&self, i: usize) -> [f64; 2] {
        self.singles[i]
    }

    pub fn singles(&self) -> &[[f64; 2]] {
        &self.singles
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Pair table oriented as `(x_i, x_j)` for the requested order of `i` and `j`.
    pub fn pair(&self, i: usize, j: usize) -> Option<[f64; 4]> {
        let &k = self.index.get(&canonical(i, j))?;
        let table = self.pairs[k];
        Some(if i < j { table } else { transpose(table) })
    }

    /// Graph spanned by every pair with a table.
    pub fn full_graph(&self) -> FactorGraph {
        FactorGraph::new(self.num_variables(), self.edges.iter().copied())
            .expect("stats edges are well formed")
    }

    /// Number of table entries that clamping to `[PROB_FLOOR, 1 - PROB_FLOOR]` alters.
    pub fn clamped_entries(&self) -> usize {
        let outside = |p: &f64| *p < PROB_FLOOR || *p > 1.0 - PROB_FLOOR;
        self.singles.iter().flatten().filter(|p| outside(p)).count()
            + self.pairs.iter().flatten().filter(|p| outside(p)).count()
    }

    /// CSV layout: a block `i,p0,p1` followed by a block `i,j,p00,p01,p10,p11`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(["i", "p0", "p1"])?;
        for (i, p) in self.singles.iter().enumerate() {
            w.write_record([i.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
        w.write_record(["i", "j", "p00", "p01", "p10", "p11"])?;
        for (&(i, j), t) in self.edges.iter().zip(&self.pairs) {
            let mut row = vec![i.to_string(), j.to_string()];
            row.extend(t.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut singles = Vec::new();
        let mut pairs = Vec::new();
        let mut block = 0;
        for record in r.records() {
            let record = record?;
            let fields: Vec<&str> = record.iter().map(str::trim).collect();
            if fields.first() == Some(&"i") {
                block = if fields.get(1) == Some(&"j") { 2 } else { 1 };
                continue;
            }
            let num = |k: usize| -> Result<f64> {
                fields
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| invalid(format!("bad stats row {fields:?}")))
            };
            let idx = |k: usize| -> Result<usize> {
                fields
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| invalid(format!("bad stats row {fields:?}")))
            };
            match block {
                1 => {
                    let i = idx(0)?;
                    if i != singles.len() {
                        return Err(invalid(format!("single rows out of order at {i}")));
                    }
                    singles.push([num(1)?, num(2)?]);
                }
                2 => pairs.push(((idx(0)?, idx(1)?), [num(2)?, num(3)?, num(4)?, num(5)?])),
                _ => return Err(invalid("stats csv must start with the `i,p0,p1` header")),
            }
        }
        Self::new(singles, pairs)
    }
}

fn transpose(t: [f64; 4]) -> [f64; 4] {
    [t[0], t[2], t[1], t[3]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsLocation {
    Variable(usize),
    Edge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    OutOfRange,
    Normalization,
    /// Row sum of the pair table disagrees with the single table of `variable`.
    Consistency { variable: usize, state: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub location: StatsLocation,
    pub kind: ViolationKind,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?}: residual {:e}", self.location, self.kind, self.residual)
    }
}

/// Check ranges, normalization and pair/single consistency. Empty iff valid.
///
/// Consistency is reported once per (edge, endpoint), at the state with the
/// largest absolute residual (ties resolved toward the higher state).
pub fn validate_stats(stats: &PairwiseStats) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, p) in stats.singles.iter().enumerate() {
        let loc = StatsLocation::Variable(i);
        if let Some(&bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            out.push(Violation {
                location: loc,
                kind: ViolationKind::OutOfRange,
                residual: bad,
            });
        }
        let s = p[0] + p[1] - 1.0;
        if s.abs() > NORMALIZATION_TOL {
            out.push(Violation {
                location: loc,
                kind: ViolationKind::Normalization,
                residual: s,
            });
        }
    }
    for (&(i, j), t) in stats.edges.iter().zip(&stats.pairs) {
        let loc = StatsLocation::Edge(i, j);
        if let Some(&bad) = t.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            out.push(Violation {
                location: loc,
                kind: ViolationKind::OutOfRange,
                residual: bad,
            });
        }
        let s = t.iter().sum::<f64>() - 1.0;
        if s.abs() > NORMALIZATION_TOL {
            out.push(Violation {
                location: loc,
                kind: ViolationKind::Normalization,
                residual: s,
            });
        }
        // rows marginalize onto i, columns onto j
        let row = [t[0] + t[1] - stats.singles[i][0], t[2] + t[3] - stats.singles[i][1]];
        let col = [t[0] + t[2] - stats.singles[j][0], t[1] + t[3] - stats.singles[j][1]];
        for (variable, res) in [(i, row), (j, col)] {
            let state = if res[1].abs() >= res[0].abs() { 1 } else { 0 };
            if res[state].abs() > CONSISTENCY_TOL {
                out.push(Violation {
                    location: loc,
                    kind: ViolationKind::Consistency { variable, state },
                    residual: res[state],
                });
            }
        }
    }
    out
}

/// Magnitude of the pair log-odds ratio `|log(p11 p00 / (p01 p10))|` after clamping.
pub fn pruning_score(stats: &PairwiseStats, i: usize, j: usize) -> Result<f64> {
    let t = stats
        .pair(i, j)
        .ok_or_else(|| invalid(format!("no pair table for ({i}, {j})")))?;
    Ok(log_odds_ratio(&t).abs())
}

/// `log(p11 p00 / (p01 p10))` with clamped entries.
pub(crate) fn log_odds_ratio(t: &[f64; 4]) -> f64 {
    let [p00, p01, p10, p11] = t.map(clamp_prob);
    (p11.ln() + p00.ln()) - (p01.ln() + p10.ln())
}

/// Keep the `ceil(N K / 2)` highest-scoring pairs, then restore connectivity by
/// re-adding the highest-scoring bridging pairs.
pub fn prune(stats: &PairwiseStats, mean_connectivity: f64) -> Result<FactorGraph> {
    let n = stats.num_variables();
    if n < 2 {
        return Err(invalid("pruning needs at least two variables"));
    }
    if !(mean_connectivity > 0.0) || mean_connectivity > (n - 1) as f64 {
        return Err(invalid(format!(
            "target connectivity {mean_connectivity} outside (0, {}]",
            n - 1
        )));
    }
    let mut scored: Vec<((usize, usize), f64)> = stats
        .edges
        .iter()
        .zip(&stats.pairs)
        .map(|(&e, t)| (e, log_odds_ratio(t).abs()))
        .collect();
    sort_by_score(&mut scored);
    let keep = ((n as f64 * mean_connectivity / 2.0).ceil() as usize).min(scored.len());
    let ordered: Vec<(usize, usize)> = scored.iter().map(|&(e, _)| e).collect();
    let mut kept = ordered[..keep].to_vec();
    let (added, components) = greedy_repair(n, &kept, &ordered[keep..]);
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    kept.extend(added);
    kept.sort_unstable();
    FactorGraph::new(n, kept)
}

fn sort_by_score(items: &mut [((usize, usize), f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Fraction of the weighted spanning-tree measure carried by each edge.
///
/// Equals `w_e * R_e` where `R_e` is the effective resistance across `e` in the
/// network with conductances `w`; the fractions sum to `N - 1`.
pub fn wst_edge_fractions(graph: &FactorGraph, weights: &[f64]) -> Result<Vec<f64>> {
    let n = graph.num_variables();
    if weights.len() != graph.num_edges() {
        return Err(invalid("one weight per edge required"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(invalid(format!("weights must be positive and finite, got {w}")));
    }
    if n <= 1 {
        return Ok(Vec::new());
    }
    // Laplacian with the last variable grounded.
    let m = n - 1;
    let mut lap = DMatrix::<f64>::zeros(m, m);
    for (&(i, j), &w) in graph.edges().iter().zip(weights) {
        if i < m {
            lap[(i, i)] += w;
        }
        if j < m {
            lap[(j, j)] += w;
        }
        if i < m && j < m {
            lap[(i, j)] -= w;
            lap[(j, i)] -= w;
        }
    }
    let inverse = lap
        .cholesky()
        .ok_or(Error::SingularLaplacian)?
        .inverse();
    let entry = |a: usize, b: usize| if a < m && b < m { inverse[(a, b)] } else { 0.0 };
    let fractions = graph
        .edges()
        .iter()
        .zip(weights)
        .map(|(&(i, j), &w)| {
            let resistance = entry(i, i) + entry(j, j) - 2.0 * entry(i, j);
            w * resistance
        })
        .collect();
    Ok(fractions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortCriterion {
    #[default]
    Simple,
    AbsoluteConductance,
    RelativeConductance,
}

impl SortCriterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::AbsoluteConductance => "absolute_conductance",
            Self::RelativeConductance => "relative_conductance",
        }
    }
}

impl fmt::Display for SortCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SortCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "absolute_conductance" => Ok(Self::AbsoluteConductance),
            "relative_conductance" => Ok(Self::RelativeConductance),
            other => Err(Error::UnknownCriterion(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEdge {
    pub edge: (usize, usize),
    pub score: f64,
}

/// Edges in descending score order, ties broken by lexicographic edge index.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRanking {
    pub criterion: SortCriterion,
    pub entries: Vec<RankedEdge>,
}

impl EdgeRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|r| r.edge).collect()
    }
}

/// Rank the edges of `graph` by coupling strength, weighted-spanning-tree
/// fraction, or their product. `couplings` must be defined on `graph`.
pub fn sort_edges(
    graph: &FactorGraph,
    couplings: &Couplings,
    criterion: SortCriterion,
) -> Result<EdgeRanking> {
    if couplings.beta_j.len() != graph.num_edges() {
        return Err(invalid("couplings do not match the graph"));
    }
    let magnitudes: Vec<f64> = couplings.beta_j.iter().map(|j| j.abs()).collect();
    let scores = match criterion {
        SortCriterion::Simple => magnitudes,
        SortCriterion::AbsoluteConductance | SortCriterion::RelativeConductance => {
            if !graph.is_connected() {
                return Err(Error::Disconnected {
                    components: graph.components(),
                });
            }
            let weights: Vec<f64> = magnitudes
                .iter()
                .map(|w| w.max(MIN_CONDUCTANCE_WEIGHT))
                .collect();
            let fractions = wst_edge_fractions(graph, &weights)?;
            if criterion == SortCriterion::RelativeConductance {
                fractions
            } else {
                magnitudes.iter().zip(&fractions).map(|(m, f)| m * f).collect()
            }
        }
    };
    let mut scored: Vec<((usize, usize), f64)> =
        graph.edges().iter().copied().zip(scores).collect();
    sort_by_score(&mut scored);
    Ok(EdgeRanking {
        criterion,
        entries: scored
            .into_iter()
            .map(|(edge, score)| RankedEdge { edge, score })
            .collect(),
    })
}

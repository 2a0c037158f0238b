//! Communication topologies and their Laplacians.
//!
//! The communication matrix acting on stacked `m * n` vectors is the Kronecker
//! product of the `m x m` Laplacian with the `n x n` identity. It is never
//! materialized: every consumer works block-wise, and the consensus distance is
//! evaluated as the edge sum `sum_{(i,j) in E} |p_i - p_j|^2`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many reseeded Erdos-Renyi draws are attempted before giving up.
pub const ER_RETRY_BUDGET: usize = 100;

/// Above this size `lambda_max` switches from a dense eigensolve to power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

/// Family of generated networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Cycle,
    /// Hub is node 0.
    Star,
    /// `p = None` uses `2 ln(m) / m`, clamped to 1.
    ErdosRenyi { p: Option<f64>, seed: u64 },
}

impl TopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Complete => "complete",
            TopologyKind::Cycle => "cycle",
            TopologyKind::Star => "star",
            TopologyKind::ErdosRenyi { .. } => "erdos_renyi",
        }
    }
}

/// Default Erdos-Renyi edge probability, comfortably above the connectivity threshold.
pub fn default_edge_probability(m: usize) -> f64 {
    if m < 2 {
        return 1.0;
    }
    let m = m as f64;
    (2.0 * m.ln() / m).min(1.0)
}

/// A connected undirected simple graph on agents `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    m: usize,
    /// Sorted, each stored as `(i, j)` with `i < j`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Validates and builds a topology from an explicit edge list.
    ///
    /// A single agent with no edges is accepted; for `m >= 2` the graph must be connected.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Topology("at least one agent is required".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::AgentIndex { index: a.max(b), m });
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop at node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(Error::Topology(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); m];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for row in &mut adjacency {
            row.sort_unstable();
        }
        let t = Topology { m, edges, adjacency };
        if !t.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(t)
    }

    pub fn build(kind: TopologyKind, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Topology(format!("need at least 2 agents, got {m}")));
        }
        match kind {
            TopologyKind::Complete => {
                let edges = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j)));
                Self::from_edges(m, edges)
            }
            TopologyKind::Cycle => {
                if m == 2 {
                    return Self::from_edges(2, [(0, 1)]);
                }
                Self::from_edges(m, (0..m).map(|i| (i, (i + 1) % m)))
            }
            TopologyKind::Star => Self::from_edges(m, (1..m).map(|j| (0, j))),
            TopologyKind::ErdosRenyi { p, seed } => {
                let p = p.unwrap_or_else(|| default_edge_probability(m));
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::param("edge_probability", format!("must lie in (0, 1], got {p}")));
                }
                for attempt in 0..ER_RETRY_BUDGET {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
                    let mut edges = Vec::new();
                    for i in 0..m {
                        for j in i + 1..m {
                            if rng.random::<f64>() < p {
                                edges.push((i, j));
                            }
                        }
                    }
                    match Self::from_edges(m, edges) {
                        Ok(t) => return Ok(t),
                        Err(Error::Disconnected) => {
                            log::debug!("erdos-renyi draw {attempt} disconnected, reseeding");
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::ErdosRenyiRetries {
                    m,
                    p,
                    attempts: ER_RETRY_BUDGET,
                })
            }
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Sorted neighbor list of agent `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::AgentIndex { index: i, m: self.m })
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.m
    }

    pub fn laplacian(&self) -> Laplacian {
        let m = self.m;
        let mut entries = vec![0i64; m * m];
        for &(a, b) in &self.edges {
            entries[a * m + b] = -1;
            entries[b * m + a] = -1;
        }
        for i in 0..m {
            entries[i * m + i] = self.degree(i) as i64;
        }
        Laplacian {
            m,
            entries,
            edges: self.edges.clone(),
        }
    }

    /// Edge-list text: first line `m`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.m);
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let m: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("agent count: {e}")))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                it.next()
                    .ok_or_else(|| Error::Parse(format!("edge line {}: expected `i j`", lineno + 2)))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("edge line {}: {e}", lineno + 2)))
            };
            let a = next()?;
            let b = next()?;
            edges.push((a, b));
        }
        Self::from_edges(m, edges)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }
}

/// Graph Laplacian `D - A`, stored densely with integer entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Laplacian {
    m: usize,
    entries: Vec<i64>,
    edges: Vec<(usize, usize)>,
}

impl Laplacian {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| self.entry(i, j) as f64)
    }

    /// Largest eigenvalue. Equal to the largest eigenvalue of the block
    /// communication matrix, since the Kronecker product with an identity keeps the spectrum.
    pub fn lambda_max(&self) -> Result<f64> {
        if self.m == 1 {
            return Ok(0.0);
        }
        if self.m <= DENSE_EIGEN_LIMIT {
            let eig = SymmetricEigen::new(self.to_dense());
            Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        } else {
            self.lambda_max_power(1e-12, 1_000_000)
        }
    }

    /// Power iteration on the sparse Laplacian with Rayleigh-quotient stopping.
    ///
    /// The start vector is orthogonalized against the all-ones kernel so the
    /// zero eigenvalue never contaminates the estimate.
    pub fn lambda_max_power(&self, rel_tol: f64, max_iter: usize) -> Result<f64> {
        let m = self.m;
        if m == 1 {
            return Ok(0.0);
        }
        let deg: Vec<f64> = (0..m).map(|i| self.entry(i, i) as f64).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..m {
                y[i] = deg[i] * x[i];
            }
            for &(a, b) in &self.edges {
                y[a] -= x[b];
                y[b] -= x[a];
            }
        };
        // deterministic, non-symmetric start
        let mut x: Vec<f64> = (0..m).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0 + i as f64 * 1e-3).collect();
        let mean = x.iter().sum::<f64>() / m as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        normalize(&mut x);
        let mut y = vec![0.0; m];
        let mut estimate = 0.0;
        for _ in 0..max_iter {
            apply(&x, &mut y);
            let rq: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            normalize(&mut y);
            std::mem::swap(&mut x, &mut y);
            if (rq - estimate).abs() <= rel_tol * rq.abs() {
                return Ok(rq);
            }
            estimate = rq;
        }
        Err(Error::NoConvergence {
            what: "power iteration",
            iterations: max_iter,
        })
    }

    /// `sqrt(p^T (L kron I_n) p)` for a stacked vector of `m` blocks of length `n`.
    pub fn consensus_norm(&self, p: &[f64], n: usize) -> Result<f64> {
        if p.len() != self.m * n {
            return Err(Error::Dimension {
                expected: self.m * n,
                actual: p.len(),
            });
        }
        let total: f64 = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let pa = &p[a * n..(a + 1) * n];
                let pb = &p[b * n..(b + 1) * n];
                pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
            .sum();
        Ok(total.sqrt())
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

//! Latent geometry graph construction.
//!
//! A graph over `n` samples is built in four steps: a dense similarity
//! matrix (cosine or RBF), k-nearest-neighbor thresholding per row, optional
//! symmetrization, and optional degree normalization.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Cosine,
    Rbf,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Cosine => "cosine",
            Kernel::Rbf => "rbf",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Kernel::Cosine),
            "rbf" => Ok(Kernel::Rbf),
            other => Err(Error::Config(format!("unknown kernel {other:?}"))),
        }
    }
}

/// RBF bandwidth: `gamma` in `exp(-gamma * |x - y|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `gamma = 1 / (2 m)` with `m` the median pairwise squared distance.
    MedianHeuristic,
    Gamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub kernel: Kernel,
    pub k: usize,
    pub binarize: bool,
    pub symmetrize: bool,
    pub normalize: bool,
    pub rbf_bandwidth: Bandwidth,
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let Bandwidth::Gamma(g) = self.rbf_bandwidth {
            check_gamma(g)?;
        }
        Ok(())
    }
}

fn check_gamma(g: f64) -> Result<()> {
    if g.is_finite() && g > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("rbf gamma must be > 0, got {g}")))
    }
}

/// `S[i][j] = <x_i, x_j> / (|x_i| |x_j|)`, exactly symmetric with unit diagonal.
pub fn cosine_similarity(x: &EmbeddingMatrix) -> Result<Array2<f64>> {
    let data = x.view();
    let norms: Vec<f64> = data.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(row) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormRow(row));
    }
    let mut unit = data.to_owned();
    for (mut row, &norm) in unit.axis_iter_mut(Axis(0)).zip(&norms) {
        row /= norm;
    }
    let mut s = unit.dot(&unit.t());
    let n = s.nrows();
    for i in 0..n {
        s[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let v = s[[i, j]].clamp(-1.0, 1.0);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    Ok(s)
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise_squared_distances(data: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = data.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(data.row(i), data.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Median of a non-empty slice; mean of the two central values for even length.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

fn median_gamma(dist: &Array2<f64>) -> f64 {
    let n = dist.nrows();
    let upper: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| dist[[i, j]])
        .collect();
    match median(&upper) {
        Some(m) if m > 0.0 => 1.0 / (2.0 * m),
        _ => 1.0,
    }
}

/// Resolves the bandwidth to a concrete `gamma` for these embeddings.
pub fn resolve_gamma(x: &EmbeddingMatrix, bandwidth: Bandwidth) -> Result<f64> {
    match bandwidth {
        Bandwidth::Gamma(g) => check_gamma(g).map(|_| g),
        Bandwidth::MedianHeuristic => Ok(median_gamma(&pairwise_squared_distances(x.view()))),
    }
}

/// `S[i][j] = exp(-gamma |x_i - x_j|^2)`.
pub fn rbf_similarity(x: &EmbeddingMatrix, bandwidth: Bandwidth) -> Result<Array2<f64>> {
    let dist = pairwise_squared_distances(x.view());
    let gamma = match bandwidth {
        Bandwidth::Gamma(g) => {
            check_gamma(g)?;
            g
        }
        Bandwidth::MedianHeuristic => median_gamma(&dist),
    };
    Ok(dist.mapv(|d| (-gamma * d).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

impl From<(usize, usize, f64)> for Edge {
    fn from((src, dst, weight): (usize, usize, f64)) -> Self {
        Edge { src, dst, weight }
    }
}

impl From<Edge> for (usize, usize, f64) {
    fn from(e: Edge) -> Self {
        (e.src, e.dst, e.weight)
    }
}

/// Weighted adjacency stored as directed edges sorted by `(src, dst)`.
///
/// When `symmetric` is set every edge `(i, j, w)` has its twin `(j, i, w)`.
/// Serializes as `{"n": .., "symmetric": .., "edges": [[i, j, w], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGraph {
    n: usize,
    symmetric: bool,
    edges: Vec<Edge>,
}

impl SparseGraph {
    /// Checks the invariants: no self-loops, finite non-negative weights,
    /// in-range endpoints, no duplicates, and twin edges when `symmetric`.
    pub fn new(n: usize, mut edges: Vec<Edge>, symmetric: bool) -> Result<Self> {
        edges.sort_by_key(|e| (e.src, e.dst));
        for (idx, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(Error::Dimension(format!(
                    "edge ({}, {}) out of range for {n} vertices",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::Config(format!("self-loop at vertex {}", e.src)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::Config(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            if idx > 0 && (edges[idx - 1].src, edges[idx - 1].dst) == (e.src, e.dst) {
                return Err(Error::Config(format!(
                    "duplicate edge ({}, {})",
                    e.src, e.dst
                )));
            }
        }
        let graph = SparseGraph {
            n,
            symmetric,
            edges,
        };
        if symmetric && !graph.is_structurally_symmetric() {
            return Err(Error::AsymmetricGraph);
        }
        Ok(graph)
    }

    fn from_sorted_unchecked(n: usize, edges: Vec<Edge>, symmetric: bool) -> Self {
        SparseGraph {
            n,
            symmetric,
            edges,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn weight(&self, src: usize, dst: usize) -> f64 {
        self.edges
            .binary_search_by(|e| (e.src, e.dst).cmp(&(src, dst)))
            .map(|idx| self.edges[idx].weight)
            .unwrap_or(0.0)
    }

    /// Whether every stored edge has a twin of exactly equal weight.
    pub fn is_structurally_symmetric(&self) -> bool {
        self.edges.iter().all(|e| {
            self.edges
                .binary_search_by(|t| (t.src, t.dst).cmp(&(e.dst, e.src)))
                .is_ok_and(|idx| self.edges[idx].weight == e.weight)
        })
    }

    /// Row sums of the adjacency (the degree vector).
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.src] += e.weight;
        }
        d
    }

    /// Column sums of the adjacency.
    pub fn in_degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.dst] += e.weight;
        }
        d
    }

    pub fn out_edge_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for e in &self.edges {
            c[e.src] += 1;
        }
        c
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for e in &self.edges {
            a[[e.src, e.dst]] = e.weight;
        }
        a
    }

    /// Every weight multiplied by `factor` (must be positive).
    pub fn scaled(&self, factor: f64) -> Result<SparseGraph> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Config(format!(
                "scale factor must be > 0, got {factor}"
            )));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                weight: e.weight * factor,
                ..*e
            })
            .collect();
        Ok(Self::from_sorted_unchecked(self.n, edges, self.symmetric))
    }

    /// Relabels vertex `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SparseGraph> {
        if perm.len() != self.n {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {} vertices",
                perm.len(),
                self.n
            )));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                src: perm[e.src],
                dst: perm[e.dst],
                weight: e.weight,
            })
            .collect();
        SparseGraph::new(self.n, edges, self.symmetric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization cannot fail")
    }
}

/// Keeps, for each row, the `min(k, n - 1)` largest off-diagonal similarities
/// (ties go to the smaller column index).
///
/// Kept weights are the similarity clamped at zero, or 1 when `binarize`.
pub fn knn_threshold(s: ArrayView2<'_, f64>, k: usize, binarize: bool) -> Result<SparseGraph> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Dimension(format!(
            "similarity matrix is {}x{}",
            n,
            s.ncols()
        )));
    }
    if n < 2 {
        return Err(Error::TooFewVertices(n));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let keep = k.min(n - 1);
    let mut edges = Vec::with_capacity(n * keep);
    let mut candidates: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row = s.row(i);
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i));
        let by_rank =
            |a: &usize, b: &usize| -> Ordering { row[*b].total_cmp(&row[*a]).then(a.cmp(b)) };
        if keep < candidates.len() {
            candidates.select_nth_unstable_by(keep - 1, by_rank);
            candidates.truncate(keep);
        }
        candidates.sort_unstable();
        for &j in &candidates {
            let weight = if binarize { 1.0 } else { row[j].max(0.0) };
            edges.push(Edge {
                src: i,
                dst: j,
                weight,
            });
        }
    }
    Ok(SparseGraph::from_sorted_unchecked(n, edges, false))
}

/// Undirected union: `(i, j)` is kept if either direction exists, with both
/// directions weighted by the larger of the available weights.
pub fn symmetrize(g: &SparseGraph) -> SparseGraph {
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in g.edges() {
        for key in [(e.src, e.dst), (e.dst, e.src)] {
            merged
                .entry(key)
                .and_modify(|w| *w = w.max(e.weight))
                .or_insert(e.weight);
        }
    }
    let edges = merged
        .into_iter()
        .map(|((src, dst), weight)| Edge { src, dst, weight })
        .collect();
    SparseGraph::from_sorted_unchecked(g.n(), edges, true)
}

/// `D_r^{-1/2} A D_c^{-1/2}` with row-sum and column-sum degrees; both equal
/// the ordinary degree for symmetric graphs. Zero-degree vertices stay
/// isolated.
pub fn degree_normalize(g: &SparseGraph) -> SparseGraph {
    let row = g.degrees();
    let col = if g.is_symmetric() {
        row.clone()
    } else {
        g.in_degrees()
    };
    let edges = g
        .edges()
        .iter()
        .map(|e| {
            let denom = row[e.src] * col[e.dst];
            let weight = if denom > 0.0 {
                e.weight / denom.sqrt()
            } else {
                0.0
            };
            Edge { weight, ..*e }
        })
        .collect();
    SparseGraph::from_sorted_unchecked(g.n(), edges, g.is_symmetric())
}

/// Sparse square matrix as sorted `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for &(i, j, v) in &self.entries {
            m[[i, j]] += v;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(i, _, v) in &self.entries {
            s[i] += v;
        }
        s
    }

    /// `x^T M x`.
    pub fn quadratic_form(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.entries.iter().map(|&(i, j, v)| x[i] * v * x[j]).sum()
    }

    pub fn mul_vec(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.n);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }
}

/// `L = D - A` for a symmetric graph.
pub fn combinatorial_laplacian(g: &SparseGraph) -> Result<SparseMatrix> {
    if !g.is_symmetric() {
        return Err(Error::AsymmetricGraph);
    }
    let degrees = g.degrees();
    let mut entries: Vec<(usize, usize, f64)> = g
        .edges()
        .iter()
        .map(|e| (e.src, e.dst, -e.weight))
        .chain(
            degrees
                .iter()
                .enumerate()
                .filter(|(_, d)| **d != 0.0)
                .map(|(i, &d)| (i, i, d)),
        )
        .collect();
    entries.sort_by_key(|e| (e.0, e.1));
    Ok(SparseMatrix { n: g.n(), entries })
}

/// Full pipeline: similarity, k-NN, then the optional steps in order.
pub fn build_lgg(x: &EmbeddingMatrix, cfg: &GraphConfig) -> Result<SparseGraph> {
    cfg.validate()?;
    let s = match cfg.kernel {
        Kernel::Cosine => cosine_similarity(x)?,
        Kernel::Rbf => rbf_similarity(x, cfg.rbf_bandwidth)?,
    };
    let mut g = knn_threshold(s.view(), cfg.k, cfg.binarize)?;
    if cfg.symmetrize {
        g = symmetrize(&g);
    }
    if cfg.normalize {
        g = degree_normalize(&g);
    }
    Ok(g)
}

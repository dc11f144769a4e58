//! Spatial and temporal neighbourhood structures and the CAR precision
//! matrices built on them.

mod io;
mod precision;

pub use io::{
    parse_adjacency, read_adjacency, read_edge_list, read_matrix_csv, write_edge_list,
    write_matrix_csv,
};
pub use precision::{
    build_intrinsic_precision, build_leroux_precision, build_temporal_precision, PrecisionMatrix,
    RHO_MAX,
};

use crate::error::{Error, Result};

/// Anything with a binary symmetric neighbourhood relation.
pub trait Neighborhood {
    fn size(&self) -> usize;
    fn degree(&self, i: usize) -> usize;
    /// Sum of `values[k]` over the neighbours `k` of `i`.
    fn neighbor_sum(&self, i: usize, values: &[f64]) -> f64;
    /// Calls `f(j, k)` once per undirected edge with `j < k`.
    fn for_each_edge(&self, f: impl FnMut(usize, usize));
}

/// Binary symmetric adjacency over `K` areas, stored as sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGraph {
    neighbors: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Builds a graph from unordered 0-based pairs. Duplicate pairs collapse.
    pub fn from_edges(num_areas: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_areas == 0 {
            return Err(Error::Graph("graph needs at least one area".into()));
        }
        let mut neighbors = vec![Vec::new(); num_areas];
        for &(j, k) in edges {
            if j >= num_areas || k >= num_areas {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) references an area outside 1..={num_areas}",
                    j + 1,
                    k + 1
                )));
            }
            if j == k {
                return Err(Error::Graph(format!("self-loop at area {}", j + 1)));
            }
            neighbors[j].push(k);
            neighbors[k].push(j);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    /// Path graph 0 - 1 - ... - (n-1).
    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|t| (t - 1, t)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn num_areas(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    pub fn neighbor_counts(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, j: usize, k: usize) -> bool {
        self.neighbors[j].binary_search(&k).is_ok()
    }

    /// Undirected edges as 0-based `(j, k)` with `j < k`, in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        self.for_each_edge(|j, k| out.push((j, k)));
        out
    }

    pub fn isolated_areas(&self) -> Vec<usize> {
        (0..self.num_areas())
            .filter(|&j| self.neighbors[j].is_empty())
            .collect()
    }

    /// Connected-component label per area, labels numbered in order of first
    /// appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.num_areas();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn num_components(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }
}

impl Neighborhood for SpatialGraph {
    fn size(&self) -> usize {
        self.num_areas()
    }

    fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    fn neighbor_sum(&self, i: usize, values: &[f64]) -> f64 {
        self.neighbors[i].iter().map(|&k| values[k]).sum()
    }

    fn for_each_edge(&self, mut f: impl FnMut(usize, usize)) {
        for (j, list) in self.neighbors.iter().enumerate() {
            for &k in list.iter().filter(|&&k| k > j) {
                f(j, k);
            }
        }
    }
}

/// Temporal band structure: period `t` neighbours `t - 1` and `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalGraph {
    num_periods: usize,
}

impl TemporalGraph {
    pub fn new(num_periods: usize) -> Result<Self> {
        if num_periods == 0 {
            return Err(Error::Graph("temporal graph needs at least one period".into()));
        }
        Ok(Self { num_periods })
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    /// `d_tl` of the temporal adjacency.
    pub fn weight(&self, t: usize, l: usize) -> f64 {
        if t.abs_diff(l) == 1 {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_spatial_graph(&self) -> SpatialGraph {
        SpatialGraph::path(self.num_periods).expect("path graph is always valid")
    }
}

impl Neighborhood for TemporalGraph {
    fn size(&self) -> usize {
        self.num_periods
    }

    fn degree(&self, t: usize) -> usize {
        usize::from(t > 0) + usize::from(t + 1 < self.num_periods)
    }

    fn neighbor_sum(&self, t: usize, values: &[f64]) -> f64 {
        let mut s = 0.0;
        if t > 0 {
            s += values[t - 1];
        }
        if t + 1 < self.num_periods {
            s += values[t + 1];
        }
        s
    }

    fn for_each_edge(&self, mut f: impl FnMut(usize, usize)) {
        for t in 1..self.num_periods {
            f(t - 1, t);
        }
    }
}

/// Unvalidated adjacency as read from disk: directed weighted entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAdjacency {
    pub num_areas: usize,
    /// 0-based `(row, col, weight)`; zero weights are not listed.
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub graph: Option<SpatialGraph>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_graph(self) -> Result<SpatialGraph> {
        match self.graph {
            Some(g) if self.errors.is_empty() => Ok(g),
            _ => Err(Error::Graph(self.errors.join("; "))),
        }
    }
}

/// Checks symmetry, binary weights and self-loops (errors) and reports
/// isolated areas and disconnected graphs (warnings).
pub fn validate_graph(raw: &RawAdjacency) -> ValidationReport {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let k = raw.num_areas;
    if k == 0 {
        errors.push("graph needs at least one area".to_string());
        return ValidationReport {
            errors,
            warnings,
            graph: None,
        };
    }
    let mut directed = std::collections::BTreeMap::new();
    for &(r, c, w) in &raw.entries {
        if r >= k || c >= k {
            errors.push(format!("entry ({}, {}) outside 1..={k}", r + 1, c + 1));
            continue;
        }
        if w != 0.0 && w != 1.0 {
            errors.push(format!("non-binary weight {w} at ({}, {})", r + 1, c + 1));
            continue;
        }
        if w == 0.0 {
            continue;
        }
        if r == c {
            errors.push(format!("self-loop at area {}", r + 1));
            continue;
        }
        directed.insert((r, c), ());
    }
    let mut edges = Vec::new();
    for &(r, c) in directed.keys() {
        if !directed.contains_key(&(c, r)) {
            errors.push(format!("asymmetric entry: ({}, {}) without ({}, {})", r + 1, c + 1, c + 1, r + 1));
        } else if r < c {
            edges.push((r, c));
        }
    }
    if !errors.is_empty() {
        return ValidationReport {
            errors,
            warnings,
            graph: None,
        };
    }
    let graph = SpatialGraph::from_edges(k, &edges).expect("entries checked above");
    for j in graph.isolated_areas() {
        warnings.push(format!("area {} isolated", j + 1));
    }
    let comps = graph.num_components();
    if comps > 1 {
        warnings.push(format!("graph is disconnected ({comps} components)"));
    }
    ValidationReport {
        errors,
        warnings,
        graph: Some(graph),
    }
}

/// Full conditional of a Leroux CAR effect given all others:
/// mean `rho * sum_k w_jk psi_k / (rho * n_j + 1 - rho)` and variance
/// `tau_sq / (rho * n_j + 1 - rho)`.
pub fn leroux_conditional<G: Neighborhood>(
    graph: &G,
    psi: &[f64],
    j: usize,
    rho: f64,
    tau_sq: f64,
) -> (f64, f64) {
    let denom = rho * graph.degree(j) as f64 + 1.0 - rho;
    let mean = rho * graph.neighbor_sum(j, psi) / denom;
    (mean, tau_sq / denom)
}

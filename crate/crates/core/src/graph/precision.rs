use nalgebra::DMatrix;

use super::{Neighborhood, SpatialGraph, TemporalGraph};
use crate::error::{Error, Result};

/// Largest admissible autocorrelation outside the intrinsic pathway.
pub const RHO_MAX: f64 = 1.0 - 1e-8;

/// Sparse symmetric matrix stored as upper-triangle triplets `(row, col, value)`
/// with `row <= col`, sorted by row then column.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    dim: usize,
    triplets: Vec<(usize, usize, f64)>,
    strictly_pd: bool,
}

impl PrecisionMatrix {
    /// Builds from upper-triangle triplets; duplicate positions are summed.
    pub fn from_upper_triplets(
        dim: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        strictly_pd: bool,
    ) -> Result<Self> {
        for t in triplets.iter_mut() {
            if t.0 >= dim || t.1 >= dim {
                return Err(Error::InvalidParameter(format!(
                    "triplet ({}, {}) outside dimension {dim}",
                    t.0, t.1
                )));
            }
            if t.0 > t.1 {
                std::mem::swap(&mut t.0, &mut t.1);
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        Ok(Self {
            dim,
            triplets: merged,
            strictly_pd,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_strictly_positive_definite(&self) -> bool {
        self.strictly_pd
    }

    pub fn upper_triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.triplets
            .binary_search_by_key(&key, |&(r, c, _)| (r, c))
            .map_or(0.0, |idx| self.triplets[idx].2)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(r, c, v) in &self.triplets {
            if r == c {
                d[r] = v;
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for &(r, c, v) in &self.triplets {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// `x^T Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        self.triplets
            .iter()
            .map(|&(r, c, v)| {
                let term = v * x[r] * x[c];
                if r == c {
                    term
                } else {
                    2.0 * term
                }
            })
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            triplets: self
                .triplets
                .iter()
                .map(|&(r, c, v)| (r, c, v * factor))
                .collect(),
            strictly_pd: self.strictly_pd,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.triplets {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }
}

fn check_rho_tau(rho: f64, tau_sq: f64) -> Result<()> {
    if !(0.0..=RHO_MAX).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in [0, 1 - 1e-8], got {rho}"
        )));
    }
    if !(tau_sq > 0.0 && tau_sq.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "variance must be positive, got {tau_sq}"
        )));
    }
    Ok(())
}

fn leroux<G: Neighborhood>(graph: &G, rho: f64, tau_sq: f64) -> Result<PrecisionMatrix> {
    check_rho_tau(rho, tau_sq)?;
    let n = graph.size();
    let mut triplets = Vec::with_capacity(n + 2 * n);
    for j in 0..n {
        let diag = rho * graph.degree(j) as f64 + 1.0 - rho;
        triplets.push((j, j, diag / tau_sq));
    }
    graph.for_each_edge(|j, k| triplets.push((j, k, -rho / tau_sq)));
    PrecisionMatrix::from_upper_triplets(n, triplets, true)
}

/// `(rho R + (1 - rho) I) / tau_sq` with `R` the graph Laplacian, so that the
/// field has covariance `tau_sq Q^-1`.
pub fn build_leroux_precision(
    graph: &SpatialGraph,
    rho: f64,
    tau_sq: f64,
) -> Result<PrecisionMatrix> {
    leroux(graph, rho, tau_sq)
}

/// Temporal analogue of [`build_leroux_precision`] on the band graph.
pub fn build_temporal_precision(
    tgraph: &TemporalGraph,
    rho_t: f64,
    tau_sq_t: f64,
) -> Result<PrecisionMatrix> {
    leroux(tgraph, rho_t, tau_sq_t)
}

/// Intrinsic CAR precision `R / tau_sq`. Isolated areas get a unit diagonal
/// (an independent `N(0, tau_sq)` fallback). Singular whenever an edge exists.
pub fn build_intrinsic_precision(graph: &SpatialGraph, tau_sq: f64) -> Result<PrecisionMatrix> {
    if !(tau_sq > 0.0 && tau_sq.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "variance must be positive, got {tau_sq}"
        )));
    }
    let n = graph.num_areas();
    let mut triplets = Vec::new();
    for j in 0..n {
        let deg = graph.degree(j);
        let d = if deg == 0 { 1.0 } else { deg as f64 };
        triplets.push((j, j, d / tau_sq));
    }
    graph.for_each_edge(|j, k| triplets.push((j, k, -1.0 / tau_sq)));
    let strictly_pd = graph.num_edges() == 0;
    PrecisionMatrix::from_upper_triplets(n, triplets, strictly_pd)
}

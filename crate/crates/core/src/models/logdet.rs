use nalgebra::DMatrix;

use crate::error::Result;
use crate::graph::{build_leroux_precision, SpatialGraph};
use crate::sampling::CholeskyFactor;

/// Graphs up to this many areas use the eigenvalue route.
pub const SPECTRAL_LIMIT: usize = 1500;

/// `log det(rho R + (1 - rho) I)` as a function of `rho`.
///
/// With `R = V diag(lambda) V'` the determinant is
/// `prod_i (rho lambda_i + 1 - rho)`, so after one eigendecomposition each
/// evaluation costs `O(K)`. Larger graphs factor the sparse precision.
#[derive(Debug, Clone)]
pub struct LerouxLogDet {
    eigenvalues: Option<Vec<f64>>,
    graph: SpatialGraph,
}

impl LerouxLogDet {
    pub fn new(graph: &SpatialGraph) -> Self {
        if graph.num_areas() <= SPECTRAL_LIMIT {
            Self::spectral(graph)
        } else {
            Self::sparse(graph)
        }
    }

    pub fn spectral(graph: &SpatialGraph) -> Self {
        let k = graph.num_areas();
        let mut r = DMatrix::zeros(k, k);
        for j in 0..k {
            r[(j, j)] = graph.neighbors(j).len() as f64;
            for &n in graph.neighbors(j) {
                r[(j, n)] = -1.0;
            }
        }
        let eig = r
            .symmetric_eigenvalues()
            .iter()
            .map(|&l| l.max(0.0))
            .collect();
        Self {
            eigenvalues: Some(eig),
            graph: graph.clone(),
        }
    }

    pub fn sparse(graph: &SpatialGraph) -> Self {
        Self {
            eigenvalues: None,
            graph: graph.clone(),
        }
    }

    pub fn log_det(&self, rho: f64) -> Result<f64> {
        match &self.eigenvalues {
            Some(eig) => Ok(eig.iter().map(|l| (rho * l + 1.0 - rho).ln()).sum()),
            None => {
                let q = build_leroux_precision(&self.graph, rho, 1.0)?;
                Ok(CholeskyFactor::factor(&q)?.log_det())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::lattice_geography;

    #[test]
    fn spectral_and_cholesky_routes_agree() {
        let g = lattice_geography(6, 7).unwrap();
        let a = LerouxLogDet::spectral(&g);
        let b = LerouxLogDet::sparse(&g);
        for rho in [0.0, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-8] {
            let (x, y) = (a.log_det(rho).unwrap(), b.log_det(rho).unwrap());
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()), "rho {rho}: {x} vs {y}");
        }
    }

    #[test]
    fn single_area_is_log_one_minus_rho() {
        let g = lattice_geography(1, 1).unwrap();
        let d = LerouxLogDet::new(&g);
        assert!((d.log_det(0.3).unwrap() - 0.7f64.ln()).abs() < 1e-15);
    }
}

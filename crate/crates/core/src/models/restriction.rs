use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Area-level design `Z` (K x q) and the projector `I - Z (Z'Z)^-1 Z'` onto
/// its orthogonal complement. `beta_columns[c]` is the fixed-effect index
/// whose design column equals `Z[, c]` for every observation in each area.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionMatrix {
    z: DMatrix<f64>,
    /// `(Z'Z)^-1 Z'`.
    coef_map: DMatrix<f64>,
    projector: DMatrix<f64>,
    beta_columns: Vec<usize>,
}

impl RestrictionMatrix {
    pub fn new(z: DMatrix<f64>, beta_columns: Vec<usize>) -> Result<Self> {
        if z.ncols() != beta_columns.len() || z.ncols() == 0 || z.ncols() >= z.nrows() {
            return Err(Error::Mismatch(format!(
                "restriction needs 0 < q < K columns, got {} for K = {}",
                z.ncols(),
                z.nrows()
            )));
        }
        let ztz = z.transpose() * &z;
        let chol = ztz.cholesky().ok_or(Error::RankDeficient)?;
        let coef_map = chol.solve(&z.transpose());
        let k = z.nrows();
        let projector = DMatrix::identity(k, k) - &z * &coef_map;
        Ok(Self {
            z,
            coef_map,
            projector,
            beta_columns,
        })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn beta_columns(&self) -> &[usize] {
        &self.beta_columns
    }

    pub fn num_columns(&self) -> usize {
        self.z.ncols()
    }

    /// Least-squares coefficients `c` of `psi` on `Z`.
    pub fn coefficients(&self, psi: &[f64]) -> DVector<f64> {
        &self.coef_map * DVector::from_column_slice(psi)
    }

    /// `max_c |Z[, c]' psi|`.
    pub fn max_abs_zt(&self, psi: &[f64]) -> f64 {
        (self.z.transpose() * DVector::from_column_slice(psi)).amax()
    }
}

/// Projects `psi` onto the orthogonal complement of `Z`.
pub fn restrict_projection(psi: &[f64], restriction: &RestrictionMatrix) -> Vec<f64> {
    let c = restriction.coefficients(psi);
    let fitted = &restriction.z * c;
    psi.iter().zip(fitted.iter()).map(|(p, f)| p - f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z_matrix(k: usize, seed: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(k, 2, |j, c| if c == 0 { 1.0 } else { seed[j % seed.len()] + j as f64 * 0.1 })
    }

    #[test]
    fn constant_column_centres() {
        let r = RestrictionMatrix::new(DMatrix::from_element(4, 1, 1.0), vec![0]).unwrap();
        let out = restrict_projection(&[1.0, 2.0, 3.0, 6.0], &r);
        for (o, e) in out.iter().zip([-2.0, -1.0, 0.0, 3.0]) {
            assert!((o - e).abs() < 1e-14);
        }
    }

    #[test]
    fn null_space_maps_to_zero() {
        let z = z_matrix(6, &[0.3, -1.2, 0.8]);
        let r = RestrictionMatrix::new(z.clone(), vec![0, 1]).unwrap();
        let psi: Vec<f64> = (&z * DVector::from_vec(vec![1.5, -2.0])).iter().copied().collect();
        assert!(restrict_projection(&psi, &r).iter().all(|v| v.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn projector_is_idempotent_and_annihilates_z(
            seed in proptest::collection::vec(-3.0f64..3.0, 3..8),
            psi in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let z = z_matrix(8, &seed);
            let r = RestrictionMatrix::new(z.clone(), vec![0, 1]).unwrap();
            let p = r.projector();
            prop_assert!((p * p - p).amax() < 1e-10);
            prop_assert!((p * &z).amax() < 1e-10);
            let once = restrict_projection(&psi, &r);
            let twice = restrict_projection(&once, &r);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!(r.max_abs_zt(&once) < 1e-10);
        }
    }
}

use nalgebra::{DMatrix, DVector};

use crate::data::LongDataset;
use crate::error::{Error, Result};

use super::TimeTrend;

/// Fixed-effects design: intercept, the dataset covariates in order and, for
/// longitudinal models, the time trend column `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    n: usize,
    p: usize,
    /// Row-major `n x p`.
    x: Vec<f64>,
    xtx: DMatrix<f64>,
}

impl Design {
    pub fn build(data: &LongDataset, trend: Option<&TimeTrend>) -> Self {
        let n = data.len();
        let mut names = vec!["intercept".to_string()];
        names.extend(data.covariates().iter().map(|c| c.name.clone()));
        if trend.is_some() {
            names.push("time".to_string());
        }
        let p = names.len();
        let mut x = Vec::with_capacity(n * p);
        for o in 0..n {
            x.push(1.0);
            for c in data.covariates() {
                x.push(c.values[o]);
            }
            if let Some(g) = trend {
                x.push(g.eval(data.periods()[o]));
            }
        }
        Self::from_rows(names, n, x)
    }

    pub fn from_rows(names: Vec<String>, n: usize, x: Vec<f64>) -> Self {
        let p = names.len();
        assert_eq!(x.len(), n * p);
        let mut xtx = DMatrix::zeros(p, p);
        for row in x.chunks_exact(p) {
            for a in 0..p {
                for b in a..p {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
        }
        Self { names, n, p, x, xtx }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_rows(&self) -> usize {
        self.n
    }

    pub fn num_columns(&self) -> usize {
        self.p
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.x[o * self.p..(o + 1) * self.p]
    }

    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn xb(&self, beta: &[f64]) -> Vec<f64> {
        self.x
            .chunks_exact(self.p)
            .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn xt_vec(&self, r: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for (row, v) in self.x.chunks_exact(self.p).zip(r) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * v;
            }
        }
        out
    }

    /// Fails when the columns are linearly dependent (relative eigenvalue of
    /// the column-normalised cross-product below 1e-10).
    pub fn check_rank(&self) -> Result<()> {
        let d: Vec<f64> = (0..self.p).map(|a| self.xtx[(a, a)].sqrt()).collect();
        if self.n < self.p || d.iter().any(|&v| v == 0.0) {
            return Err(Error::RankDeficient);
        }
        let scaled = DMatrix::from_fn(self.p, self.p, |a, b| self.xtx[(a, b)] / (d[a] * d[b]));
        let eig = scaled.symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if !(min > 1e-10 * max) {
            return Err(Error::RankDeficient);
        }
        Ok(())
    }

    pub fn least_squares(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_rank()?;
        let chol = self.xtx.clone().cholesky().ok_or(Error::RankDeficient)?;
        Ok(chol.solve(&self.xt_vec(y)).iter().copied().collect())
    }
}

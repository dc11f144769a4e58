//! Envelope (skyline) Cholesky factorisation under a reverse Cuthill–McKee
//! ordering. Lattice-type CAR precisions have a bandwidth of roughly one
//! lattice row after reordering, so the envelope stays small.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::PrecisionMatrix;

/// Lower-triangular factor `L` with `P Q P^T = L L^T`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First stored column of each row.
    first: Vec<usize>,
    /// Offset of each row's envelope in `values`.
    start: Vec<usize>,
    values: Vec<f64>,
}

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree = |v: usize| adj[v].len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_last = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (a node in the deepest level with minimum degree, depth)
        let mut level = vec![usize::MAX; n];
        let mut queue = VecDeque::from([start]);
        level[start] = 0;
        let mut best = (start, 0);
        while let Some(v) = queue.pop_front() {
            let lv = level[v];
            if lv > best.1 || (lv == best.1 && degree(v) < degree(best.0)) {
                best = (v, lv);
            }
            for &w in &adj[v] {
                if !visited[w] && level[w] == usize::MAX {
                    level[w] = lv + 1;
                    queue.push_back(w);
                }
            }
        }
        best
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree(v), v))
            .expect("unvisited node exists");
        // pseudo-peripheral start: walk to the far end until depth stops growing
        let mut start = seed;
        let mut depth = 0;
        for _ in 0..8 {
            let (far, d) = bfs_last(start, &visited);
            if d <= depth {
                break;
            }
            start = far;
            depth = d;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree(w), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

impl CholeskyFactor {
    pub fn factor(q: &PrecisionMatrix) -> Result<Self> {
        let n = q.dim();
        let mut adj = vec![Vec::new(); n];
        for &(r, c, v) in q.upper_triplets() {
            if r != c && v != 0.0 {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        let mapped: Vec<(usize, usize, f64)> = q
            .upper_triplets()
            .iter()
            .map(|&(r, c, v)| {
                let (a, b) = (inv[r], inv[c]);
                if a >= b {
                    (a, b, v)
                } else {
                    (b, a, v)
                }
            })
            .collect();
        for &(i, j, _) in &mapped {
            first[i] = first[i].min(j);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut values = vec![0.0; total];
        for &(i, j, v) in &mapped {
            values[start[i] + j - first[i]] += v;
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_i = &values[start[i] + k0 - fi..start[i] + j - fi];
                let row_j = &values[start[j] + k0 - fj..start[j] + j - fj];
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let ljj = values[start[j] + j - fj];
                let idx = start[i] + j - fi;
                values[idx] = (values[idx] - dot) / ljj;
            }
            let row = &values[start[i]..start[i] + i - fi];
            let d = values[start[i] + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::NotPositiveDefinite { pivot: perm[i] });
            }
            values[start[i] + i - fi] = d.sqrt();
        }
        Ok(Self {
            dim: n,
            perm,
            first,
            start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Number of stored factor entries (envelope size).
    pub fn envelope_len(&self) -> usize {
        self.values.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.values[self.start[i] + i - self.first[i]]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.start[i]..self.start[i] + i - self.first[i]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// In-place `L x = b` in permuted coordinates.
    fn forward(&self, x: &mut [f64]) {
        for i in 0..self.dim {
            let fi = self.first[i];
            let dot: f64 = self.row(i).iter().zip(&x[fi..i]).map(|(l, v)| l * v).sum();
            x[i] = (x[i] - dot) / self.diag(i);
        }
    }

    /// In-place `L^T x = b` in permuted coordinates.
    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.dim).rev() {
            x[i] /= self.diag(i);
            let xi = x[i];
            let fi = self.first[i];
            for (l, v) in self.row(i).iter().zip(&mut x[fi..i]) {
                *v -= l * xi;
            }
        }
    }

    fn permute(&self, b: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&old| b[old]).collect()
    }

    fn unpermute(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = y[new];
        }
        out
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let mut y = self.permute(b);
        self.forward(&mut y);
        self.backward(&mut y);
        self.unpermute(&y)
    }

    /// Draws from `N(Q^-1 b, Q^-1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let mut mean = self.permute(b);
        self.forward(&mut mean);
        self.backward(&mut mean);
        let mut z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        self.backward(&mut z);
        let y: Vec<f64> = mean.iter().zip(&z).map(|(m, e)| m + e).collect();
        self.unpermute(&y)
    }

    /// Dense `L`, for checking.
    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (off, &v) in self.row(i).iter().enumerate() {
                l[(i, self.first[i] + off)] = v;
            }
            l[(i, i)] = self.diag(i);
        }
        l
    }

    /// Dense `P Q P^T` for a matrix in original coordinates.
    pub fn permuted_dense(&self, q: &PrecisionMatrix) -> DMatrix<f64> {
        let dense = q.to_dense();
        DMatrix::from_fn(self.dim, self.dim, |a, b| dense[(self.perm[a], self.perm[b])])
    }
}

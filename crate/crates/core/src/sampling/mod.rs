//! Random-number kernels: reproducible streams, scalar distributions,
//! Gaussian Markov random field draws and the slice sampler.

mod cholesky;

pub use cholesky::{reverse_cuthill_mckee, CholeskyFactor};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::PrecisionMatrix;

/// A reproducible random stream.
///
/// Backed by ChaCha8, a counter-based generator: `seed` selects the key and
/// `stream_id` selects one of 2^64 independent streams under that key, so the
/// draw sequence of a stream never depends on how many other streams exist or
/// in which order they run.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 finaliser, used to derive child seeds from a master seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
    if !(sd >= 0.0 && sd.is_finite() && mean.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "normal needs finite mean and sd >= 0, got ({mean}, {sd})"
        )));
    }
    if sd == 0.0 {
        return Ok(mean);
    }
    Ok(mean + sd * standard_normal(rng))
}

pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "uniform needs lo < hi, got ({lo}, {hi})"
        )));
    }
    Ok(lo + (hi - lo) * rng.random::<f64>())
}

fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    Gamma::new(shape, scale)
        .map(|g| g.sample(rng))
        .map_err(|e| Error::InvalidParameter(format!("gamma({shape}, {scale}): {e}")))
}

/// Inverse gamma with density proportional to `x^(-a-1) exp(-b/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inverse gamma needs a, b > 0, got ({a}, {b})"
        )));
    }
    let g = sample_gamma(rng, a, 1.0)?;
    let x = b / g;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numerical(format!(
            "inverse gamma draw {x} from ({a}, {b})"
        )))
    }
}

/// Inverse-Wishart draw with density proportional to
/// `|S|^(-(df + p + 1)/2) exp(-tr(scale S^-1)/2)`, via the Bartlett
/// decomposition of the matching Wishart on the precision.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    df: f64,
    scale: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(Error::InvalidParameter(format!(
            "inverse Wishart needs df > p - 1, got {df}"
        )));
    }
    let scale_inv = scale
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
    let l = scale_inv
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
        .l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = sample_gamma(rng, (df - i as f64) / 2.0, 2.0)?.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    let mut out = wishart
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Wishart draw".into()))?;
    // symmetrise rounding
    let t = out.transpose();
    out = (out + t) * 0.5;
    Ok(out)
}

/// Draws from `N(P^-1 b, P^-1)` for a small dense precision `P`.
pub fn sample_dense_canonical<R: Rng + ?Sized>(
    rng: &mut R,
    precision: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
    let mean = chol.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| standard_normal(rng));
    let lt = chol.l().transpose();
    let u = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(mean + u)
}

/// Bivariate case of [`sample_dense_canonical`] with precision
/// `[p00, p01, p11]` and linear term `[b0, b1]`.
pub fn sample_bivariate_canonical<R: Rng + ?Sized>(rng: &mut R, p: [f64; 3], b: [f64; 2]) -> Result<[f64; 2]> {
    let l00 = p[0].sqrt();
    let l10 = p[1] / l00;
    let d = p[2] - l10 * l10;
    if !(p[0] > 0.0 && d > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: usize::from(p[0] > 0.0) });
    }
    let l11 = d.sqrt();
    // L w = b, then L' x = w + z
    let w0 = b[0] / l00;
    let w1 = (b[1] - l10 * w0) / l11;
    let x1 = (w1 + standard_normal(rng)) / l11;
    let x0 = (w0 + standard_normal(rng) - l10 * x1) / l00;
    Ok([x0, x1])
}

/// Draws from `N(Q^-1 b, Q^-1)` through a sparse Cholesky factor of `Q`.
pub fn sample_gmrf<R: Rng + ?Sized>(
    rng: &mut R,
    q: &PrecisionMatrix,
    b: &[f64],
) -> Result<Vec<f64>> {
    if b.len() != q.dim() {
        return Err(Error::InvalidParameter(format!(
            "canonical mean has length {}, precision has dimension {}",
            b.len(),
            q.dim()
        )));
    }
    let factor = CholeskyFactor::factor(q)?;
    Ok(factor.sample(rng, b))
}

/// Initial bracket width of the slice sampler on the (0, 1) scale.
pub const SLICE_WIDTH: f64 = 0.1;

/// One stepping-out and shrinkage slice update (Neal 2003) on the bounded
/// interval `(lo, hi)`. The bracket is capped at the bounds, which is
/// equivalent to a target that vanishes outside them.
pub fn slice_sample<R, F>(
    rng: &mut R,
    mut log_density: F,
    current: f64,
    lo: f64,
    hi: f64,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    slice_sample_with_width(rng, &mut log_density, current, lo, hi, SLICE_WIDTH)
}

pub fn slice_sample_with_width<R, F>(
    rng: &mut R,
    mut log_density: F,
    current: f64,
    lo: f64,
    hi: f64,
    width: f64,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    if !(lo < current && current < hi) {
        return Err(Error::InvalidParameter(format!(
            "slice sampler needs lo < current < hi, got {lo} < {current} < {hi}"
        )));
    }
    let f0 = log_density(current);
    if f0.is_nan() || f0 == f64::NEG_INFINITY {
        return Err(Error::Numerical(format!(
            "log density is {f0} at the current point {current}"
        )));
    }
    let level = f0 - Distribution::<f64>::sample(&rand_distr::Exp1, rng);
    let mut left = (current - width * rng.random::<f64>()).max(lo);
    let mut right = (left + width).min(hi);
    while left > lo && log_density(left) > level {
        left = (left - width).max(lo);
    }
    while right < hi && log_density(right) > level {
        right = (right + width).min(hi);
    }
    loop {
        let x = left + (right - left) * rng.random::<f64>();
        if x > lo && x < hi && log_density(x) > level {
            return Ok(x);
        }
        if x < current {
            left = x;
        } else {
            right = x;
        }
        if right - left <= 1e-15 * (1.0 + current.abs()) {
            return Ok(current);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..5).map({
            let mut r = RngStream::new(42, 3);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..5).map({
            let mut r = RngStream::new(42, 3);
            move |_| r.next_u64()
        }).collect();
        let c: Vec<u64> = (0..5).map({
            let mut r = RngStream::new(42, 4);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sd_returns_mean() {
        let mut rng = RngStream::new(1, 0);
        assert_eq!(sample_normal(&mut rng, 3.5, 0.0).unwrap(), 3.5);
        assert!(sample_normal(&mut rng, 0.0, -1.0).is_err());
        assert!(sample_uniform(&mut rng, 1.0, 1.0).is_err());
        assert!(sample_inverse_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_inverse_gamma(&mut rng, 1.0, -1.0).is_err());
    }

    #[test]
    fn normal_and_uniform_moments() {
        let mut rng = RngStream::new(2, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| sample_normal(&mut rng, 0.0, 1.0).unwrap()).collect();
        assert!(mean_var(&xs).0.abs() < 0.005);
        let us: Vec<f64> = (0..1_000_000).map(|_| sample_uniform(&mut rng, 0.0, 1.0).unwrap()).collect();
        assert!((mean_var(&us).1 - 1.0 / 12.0).abs() < 0.002);
    }

    #[test]
    fn inverse_gamma_moments_and_reciprocal() {
        let mut rng = RngStream::new(3, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| sample_inverse_gamma(&mut rng, 3.0, 2.0).unwrap()).collect();
        let (m, _) = mean_var(&xs);
        assert!((m - 1.0).abs() < 0.02, "mean {m}");
        // 1/x ~ Gamma(shape 3, rate 2): mean 1.5, variance 0.75
        let inv: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
        let (mi, vi) = mean_var(&inv);
        assert!((mi - 1.5).abs() < 0.01);
        assert!((vi - 0.75).abs() < 0.01);
    }

    #[test]
    fn default_prior_draws_are_positive() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..100_000 {
            assert!(sample_inverse_gamma(&mut rng, 1.0, 0.01).unwrap() > 0.0);
        }
    }

    #[test]
    fn inverse_wishart_mean() {
        // E[S] = scale / (df - p - 1)
        let mut rng = RngStream::new(5, 0);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 8.0;
        let n = 200_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(&mut rng, df, &scale).unwrap();
        }
        acc /= n as f64;
        let expected = &scale / (df - 3.0);
        assert!((acc - expected).norm() < 0.01);
    }

    #[test]
    fn scalar_gmrf_is_exact() {
        let q = PrecisionMatrix::from_upper_triplets(1, vec![(0, 0, 4.0)], true).unwrap();
        let mut rng = RngStream::new(6, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| sample_gmrf(&mut rng, &q, &[8.0]).unwrap()[0]).collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 2.0).abs() < 0.005);
        assert!((v - 0.25).abs() < 0.005);
    }

    #[test]
    fn identity_gmrf_has_unit_variance() {
        let q = PrecisionMatrix::from_upper_triplets(3, (0..3).map(|i| (i, i, 1.0)).collect(), true).unwrap();
        let factor = CholeskyFactor::factor(&q).unwrap();
        let mut rng = RngStream::new(7, 0);
        let mut sums = [0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            let x = factor.sample(&mut rng, &[0.0; 3]);
            for (s, v) in sums.iter_mut().zip(x) {
                *s += v * v;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn gmrf_rejects_non_pd() {
        let q = PrecisionMatrix::from_upper_triplets(2, vec![(0, 0, 1.0), (0, 1, -1.0), (1, 1, 1.0)], false).unwrap();
        let mut rng = RngStream::new(8, 0);
        assert!(matches!(sample_gmrf(&mut rng, &q, &[0.0, 0.0]), Err(Error::NotPositiveDefinite { .. })));
        assert!(sample_gmrf(&mut rng, &q, &[0.0]).is_err());
    }

    #[test]
    fn slice_sampler_stays_in_peak_and_bounds() {
        let mut rng = RngStream::new(9, 0);
        let peaked = |x: f64| if (x - 0.5).abs() < 0.01 { 0.0 } else { f64::NEG_INFINITY };
        let mut x = 0.5;
        for _ in 0..1000 {
            x = slice_sample(&mut rng, peaked, x, 0.0, 1.0).unwrap();
            assert!((x - 0.5).abs() < 0.01);
        }
        assert!(slice_sample(&mut rng, |_| f64::NAN, 0.5, 0.0, 1.0).is_err());
        assert!(slice_sample(&mut rng, |_| 0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn slice_sampler_is_deterministic() {
        let run = || {
            let mut rng = RngStream::new(10, 2);
            let mut x = 0.3;
            (0..50)
                .map(|_| {
                    x = slice_sample(&mut rng, |r| -(r - 0.7f64).powi(2) * 20.0, x, 0.0, 1.0).unwrap();
                    x
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}

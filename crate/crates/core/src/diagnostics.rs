//! Convergence diagnostics: Geweke, Gelman–Rubin, Heidelberger–Welch and
//! effective sample size.
//!
//! Spectral densities at frequency zero come from an autoregressive fit
//! (Yule–Walker via Levinson–Durbin) of order at most 20 chosen by AIC:
//! `S(0) = sigma_p^2 / (1 - sum_k phi_k)^2`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Largest autoregressive order tried by [`spectrum0_ar`].
pub const MAX_AR_ORDER: usize = 20;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Autocovariances at lags `0..=max_lag` with divisor `n`.
fn autocovariances(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..=max_lag.min(n - 1))
        .map(|k| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Spectral density at zero of `x` from an AIC-selected AR fit.
pub fn spectrum0_ar(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 2 || is_constant(x) {
        return Err(Error::DegenerateChain);
    }
    let max_order = MAX_AR_ORDER.min((10.0 * (n as f64).log10()).floor() as usize).min(n - 1);
    let acov = autocovariances(x, max_order);
    if !(acov[0] > 0.0) {
        return Err(Error::DegenerateChain);
    }
    // Levinson-Durbin recursion, keeping the best order by AIC
    let nf = n as f64;
    let scaled = |v: f64, p: usize| v * nf / (nf - (p as f64 + 1.0));
    let mut phi: Vec<f64> = Vec::new();
    let mut v = acov[0];
    let mut best = (nf * scaled(v, 0).ln(), scaled(v, 0), 0.0);
    for p in 1..acov.len() {
        let acc: f64 = (0..p - 1).map(|j| phi[j] * acov[p - 1 - j]).sum();
        let kappa = (acov[p] - acc) / v;
        let mut next = vec![0.0; p];
        for j in 0..p - 1 {
            next[j] = phi[j] - kappa * phi[p - 2 - j];
        }
        next[p - 1] = kappa;
        phi = next;
        v *= 1.0 - kappa * kappa;
        if !(v > 0.0) {
            break;
        }
        let var = scaled(v, p);
        let aic = nf * var.ln() + 2.0 * p as f64;
        if aic < best.0 {
            best = (aic, var, phi.iter().sum());
        }
    }
    let (_, var, phi_sum) = best;
    Ok(var / (1.0 - phi_sum).powi(2))
}

/// Geweke z-score comparing the first `frac_a` and last `frac_b` of the chain.
pub fn geweke(x: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if x.len() < 100 {
        return Err(Error::InvalidParameter(format!("Geweke needs >= 100 draws, got {}", x.len())));
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Geweke windows ({frac_a}, {frac_b}) must be positive and not overlap"
        )));
    }
    let n = x.len();
    let na = (frac_a * n as f64).floor() as usize;
    let nb = (frac_b * n as f64).floor() as usize;
    let a = &x[..na];
    let b = &x[n - nb..];
    let sa = spectrum0_ar(a)?;
    let sb = spectrum0_ar(b)?;
    Ok((mean(a) - mean(b)) / (sa / na as f64 + sb / nb as f64).sqrt())
}

/// Potential scale reduction factor of two or more equal-length chains.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidParameter("R-hat needs at least 2 chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidParameter("R-hat needs chains of equal length".into()));
    }
    if n < 10 {
        return Err(Error::InvalidParameter(format!("R-hat needs >= 10 draws per chain, got {n}")));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return Err(Error::DegenerateChain);
    }
    let b = nf / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// `K_nu(x)` for `x > 0` from `int_0^inf exp(-x cosh t) cosh(nu t) dt`.
fn bessel_k(nu: f64, x: f64) -> f64 {
    // integrand is below e^-60 once x cosh t > 60
    let t_max = (60.0 / x).max(1.0).acosh() + 1.0;
    let steps = 4000;
    let h = t_max / steps as f64;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut s = 0.5 * (f(0.0) + f(t_max));
    for i in 1..steps {
        s += f(i as f64 * h);
    }
    s * h
}

/// Distribution function of the Cramér–von Mises statistic (series in
/// `K_{1/4}`, four terms).
pub fn pcramer(q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    // the truncated series decays again for large q; at q = 3 it is within
    // 1e-6 of one
    let q = q.min(3.0);
    // Gamma(k + 1/2) / Gamma(k + 1) for k = 0..3
    const RATIO: [f64; 4] = [
        1.772_453_850_905_516,
        0.886_226_925_452_758,
        0.664_670_194_089_568_5,
        0.553_891_828_407_973_8,
    ];
    let log_eps = (1e-5f64).ln();
    let mut total = 0.0;
    for (k, ratio) in RATIO.iter().enumerate() {
        let k4 = 4.0 * k as f64 + 1.0;
        let z = ratio * k4.sqrt() / (PI.powf(1.5) * q.sqrt());
        let u = k4 * k4 / (16.0 * q);
        if u <= -log_eps {
            total += z * (-u).exp() * bessel_k(0.25, u);
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeidelbergerWelch {
    pub stationarity_pass: bool,
    pub halfwidth_pass: bool,
    /// Fraction of the chain discarded before the stationarity test passed.
    pub discard_fraction: f64,
    pub mean: f64,
    pub halfwidth: f64,
}

/// Cramér–von Mises stationarity test on the chain with 0%, 10%, ... 40%
/// discarded, then the half-width test on the retained segment.
pub fn heidelberger_welch(x: &[f64], alpha: f64, halfwidth_ratio: f64) -> Result<HeidelbergerWelch> {
    let n = x.len();
    if n < 200 {
        return Err(Error::InvalidParameter(format!("Heidelberger-Welch needs >= 200 draws, got {n}")));
    }
    if is_constant(x) {
        return Err(Error::DegenerateChain);
    }
    let s0 = spectrum0_ar(&x[n / 2..])?;
    // discards of 0%, 10%, ..., 40%; starting points stay at or before n/2
    for step in 0..=4 {
        let start = step * n / 10;
        let y = &x[start..];
        let m = y.len();
        let ybar = mean(y);
        let mut cum = 0.0;
        let mut stat = 0.0;
        for (i, v) in y.iter().enumerate() {
            cum += v;
            let b = cum - ybar * (i + 1) as f64;
            stat += b * b / (m as f64 * s0);
        }
        stat /= m as f64;
        if pcramer(stat) < 1.0 - alpha {
            let s = spectrum0_ar(y)?;
            let halfwidth = 1.96 * (s / m as f64).sqrt();
            return Ok(HeidelbergerWelch {
                stationarity_pass: true,
                halfwidth_pass: (halfwidth / ybar).abs() <= halfwidth_ratio,
                discard_fraction: start as f64 / n as f64,
                mean: ybar,
                halfwidth,
            });
        }
    }
    Ok(HeidelbergerWelch {
        stationarity_pass: false,
        halfwidth_pass: false,
        discard_fraction: 1.0,
        mean: mean(x),
        halfwidth: f64::NAN,
    })
}

/// `n / tau` with `tau = -1 + 2 sum_m (rho_2m + rho_2m+1)` summed while the
/// paired sums stay positive, floored at `1 / log10(n)`.
pub fn effective_sample_size(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 100 {
        return Err(Error::InvalidParameter(format!("ESS needs >= 100 draws, got {n}")));
    }
    if is_constant(x) {
        return Err(Error::DegenerateChain);
    }
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let acov = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = acov(0);
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (acov(lag) + acov(lag + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / (n as f64).log10());
    Ok(n as f64 / tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiagnostics {
    pub name: String,
    /// Largest-magnitude Geweke z over chains.
    pub geweke_z: Option<f64>,
    pub r_hat: Option<f64>,
    /// Every chain passes.
    pub hw_stationarity_pass: bool,
    pub hw_halfwidth_pass: bool,
    pub hw_discard_fraction: Option<f64>,
    /// Summed over chains, capped at the total number of draws.
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub threshold: f64,
    pub params: Vec<ParamDiagnostics>,
    /// Every parameter with an R-hat is below `threshold`; false when R-hat
    /// could not be computed (single chain). Constant parameters are skipped.
    pub all_converged: bool,
}

/// Diagnoses every parameter. `chains[c][p]` holds the draws of parameter
/// `p` in chain `c`.
pub fn diagnose(names: &[String], chains: &[Vec<Vec<f64>>], threshold: f64) -> Result<DiagnosticsReport> {
    if chains.is_empty() {
        return Err(Error::InvalidParameter("no chains to diagnose".into()));
    }
    if chains.iter().any(|c| c.len() != names.len()) {
        return Err(Error::Mismatch("chains disagree on the parameter set".into()));
    }
    let mut params = Vec::with_capacity(names.len());
    let mut all_converged = chains.len() >= 2;
    for (p, name) in names.iter().enumerate() {
        let cols: Vec<&[f64]> = chains.iter().map(|c| c[p].as_slice()).collect();
        let total: usize = cols.iter().map(|c| c.len()).sum();
        let constant = cols.iter().all(|c| c.iter().all(|v| *v == cols[0][0]));
        let mut z: Option<f64> = None;
        let mut stat = true;
        let mut hw = true;
        let mut discard: Option<f64> = None;
        let mut ess = 0.0;
        let mut ess_ok = true;
        for c in &cols {
            match geweke(c, 0.1, 0.5) {
                Ok(v) => {
                    if z.is_none_or(|old| v.abs() > old.abs()) {
                        z = Some(v);
                    }
                }
                Err(_) => z = z.or(None),
            }
            match heidelberger_welch(c, 0.05, 0.1) {
                Ok(h) => {
                    stat &= h.stationarity_pass;
                    hw &= h.halfwidth_pass;
                    discard = Some(discard.map_or(h.discard_fraction, |d: f64| d.max(h.discard_fraction)));
                }
                Err(_) => {
                    stat = false;
                    hw = false;
                }
            }
            match effective_sample_size(c) {
                Ok(e) => ess += e,
                Err(_) => ess_ok = false,
            }
        }
        let r_hat = if cols.len() >= 2 { gelman_rubin(&cols).ok() } else { None };
        if !constant {
            match r_hat {
                Some(r) if r < threshold => {}
                _ => all_converged = false,
            }
        }
        params.push(ParamDiagnostics {
            name: name.clone(),
            geweke_z: z,
            r_hat,
            hw_stationarity_pass: stat,
            hw_halfwidth_pass: hw,
            hw_discard_fraction: discard,
            ess: ess_ok.then_some(ess.min(total as f64)),
        });
    }
    Ok(DiagnosticsReport {
        threshold,
        params,
        all_converged,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

impl DiagnosticsReport {
    pub fn max_r_hat(&self) -> Option<f64> {
        self.params.iter().filter_map(|p| p.r_hat).reduce(f64::max)
    }

    /// One row per parameter:
    /// `parameter,geweke_z,r_hat,hw_stationarity_pass,hw_halfwidth_pass,hw_discard_fraction,ess`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("parameter,geweke_z,r_hat,hw_stationarity_pass,hw_halfwidth_pass,hw_discard_fraction,ess\n");
        for p in &self.params {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.name,
                opt(p.geweke_z),
                opt(p.r_hat),
                p.hw_stationarity_pass,
                p.hw_halfwidth_pass,
                opt(p.hw_discard_fraction),
                opt(p.ess)
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, threshold: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        lines.next().ok_or_else(|| Error::parse(1, "empty diagnostics file"))?;
        let num = |s: &str, line: usize| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| Error::parse(line, e))
            }
        };
        let flag = |s: &str, line: usize| s.parse::<bool>().map_err(|e| Error::parse(line, e));
        let mut params = Vec::new();
        for (idx, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::parse(idx + 1, "expected 7 fields"));
            }
            params.push(ParamDiagnostics {
                name: f[0].to_string(),
                geweke_z: num(f[1], idx + 1)?,
                r_hat: num(f[2], idx + 1)?,
                hw_stationarity_pass: flag(f[3], idx + 1)?,
                hw_halfwidth_pass: flag(f[4], idx + 1)?,
                hw_discard_fraction: num(f[5], idx + 1)?,
                ess: num(f[6], idx + 1)?,
            });
        }
        let all_converged = !params.is_empty()
            && params.iter().all(|p| p.r_hat.is_some_and(|r| r < threshold) || p.r_hat.is_none() && p.ess.is_none());
        Ok(Self {
            threshold,
            params,
            all_converged,
        })
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let n_bad = self
            .params
            .iter()
            .filter(|p| p.r_hat.is_some_and(|r| r >= self.threshold))
            .count();
        writeln!(out, "parameters: {}", self.params.len()).unwrap();
        match self.max_r_hat() {
            Some(r) => writeln!(out, "max r_hat: {r:.4} (threshold {})", self.threshold).unwrap(),
            None => writeln!(out, "max r_hat: NA (needs 2 or more chains)").unwrap(),
        }
        writeln!(out, "parameters with r_hat >= threshold: {n_bad}").unwrap();
        let geweke_flags = self
            .params
            .iter()
            .filter(|p| p.geweke_z.is_some_and(|z| z.abs() > 1.96))
            .count();
        writeln!(out, "geweke |z| > 1.96: {geweke_flags}").unwrap();
        let hw_fail = self.params.iter().filter(|p| !p.hw_stationarity_pass).count();
        writeln!(out, "heidelberger-welch stationarity failures: {hw_fail}").unwrap();
        if let Some(e) = self.params.iter().filter_map(|p| p.ess).reduce(f64::min) {
            writeln!(out, "min ess: {e:.1}").unwrap();
        }
        writeln!(out, "all_converged={}", self.all_converged).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{standard_normal, RngStream};

    fn iid(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| standard_normal(&mut rng)).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut x = standard_normal(&mut rng) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + standard_normal(&mut rng);
                x
            })
            .collect()
    }

    #[test]
    fn ar1_spectrum_matches_analytic() {
        // S(0) = 1 / (1 - phi)^2 for unit innovations
        let x = ar1(3, 50_000, 0.5);
        let s = spectrum0_ar(&x).unwrap();
        assert!((s - 4.0).abs() / 4.0 < 0.1, "{s}");
    }

    #[test]
    fn geweke_equal_windows_and_trend() {
        let mut x = vec![0.0; 200];
        for (i, v) in x.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        assert!(geweke(&x, 0.1, 0.5).unwrap().abs() < 1e-12);
        let trend: Vec<f64> = (1..=10_000).map(|v| v as f64).collect();
        // Yule-Walker AR fits of order 1..30 on a noise-free ramp all give
        // z = -5.82 (independent numpy/scipy computation, AIC picks order 1)
        let z = geweke(&trend, 0.1, 0.5).unwrap();
        assert!((z + 5.824_016_068_93).abs() < 1e-6, "{z}");
        assert!(z.abs() > 1.96);
        assert!(matches!(geweke(&[1.0; 500], 0.1, 0.5), Err(Error::DegenerateChain)));
        assert!(geweke(&x, 0.6, 0.5).is_err());
    }

    #[test]
    fn identical_chains_give_lower_bound() {
        let x = iid(1, 500);
        let r = gelman_rubin(&[&x, &x]).unwrap();
        assert!((r - (499.0f64 / 500.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn separated_chains_flagged() {
        let a = iid(1, 1000);
        let b: Vec<f64> = iid(2, 1000).iter().map(|v| v + 10.0).collect();
        assert!(gelman_rubin(&[&a, &b]).unwrap() > 5.0);
        assert!(gelman_rubin(&[&a, &b[..999]]).is_err());
    }

    #[test]
    fn cramer_von_mises_quantile() {
        // 95% point of the Cramér–von Mises distribution
        assert!((pcramer(0.461_36) - 0.95).abs() < 1e-3, "{}", pcramer(0.461_36));
        assert!((pcramer(0.743_35) - 0.99).abs() < 1e-3);
        assert!(pcramer(50.0) > 0.999_99);
    }

    #[test]
    fn bessel_k_half_closed_form() {
        // K_{1/2}(x) = sqrt(pi / (2x)) e^-x
        for x in [0.05, 0.5, 3.0] {
            let exact = (PI / (2.0 * x)).sqrt() * (-x as f64).exp();
            assert!((bessel_k(0.5, x) - exact).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn level_shift_fails_stationarity() {
        let mut x = iid(5, 2000);
        for v in &mut x[1000..] {
            *v += 5.0;
        }
        assert!(!heidelberger_welch(&x, 0.05, 0.1).unwrap().stationarity_pass);
        assert!(matches!(heidelberger_welch(&[2.0; 300], 0.05, 0.1), Err(Error::DegenerateChain)));
    }

    #[test]
    fn ess_iid_ar1_and_alternating() {
        let x = iid(8, 10_000);
        let e = effective_sample_size(&x).unwrap();
        assert!((e - 10_000.0).abs() < 1_000.0, "{e}");
        let y = ar1(9, 20_000, 0.9);
        let target = 20_000.0 * 0.1 / 1.9;
        let e = effective_sample_size(&y).unwrap();
        assert!((e - target).abs() < 0.2 * target, "{e} vs {target}");
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(effective_sample_size(&alt).unwrap() > 1000.0);
    }

    #[test]
    fn affine_invariance() {
        let x = ar1(11, 2000, 0.3);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!((geweke(&x, 0.1, 0.5).unwrap() - geweke(&y, 0.1, 0.5).unwrap()).abs() < 1e-8);
        assert!((effective_sample_size(&x).unwrap() - effective_sample_size(&y).unwrap()).abs() < 1e-6);
        let x2 = ar1(12, 2000, 0.3);
        let y2: Vec<f64> = x2.iter().map(|v| 3.0 * v - 7.0).collect();
        let r1 = gelman_rubin(&[&x, &x2]).unwrap();
        let r2 = gelman_rubin(&[&y, &y2]).unwrap();
        assert!((r1 - r2).abs() < 1e-10);
    }

    #[test]
    fn report_round_trips() {
        let names = vec!["a".to_string(), "b".to_string()];
        let chains = vec![vec![iid(1, 400), iid(2, 400)], vec![iid(3, 400), iid(4, 400)]];
        let rep = diagnose(&names, &chains, 1.02).unwrap();
        assert!(rep.all_converged);
        let back = DiagnosticsReport::from_csv(&rep.to_csv(), 1.02).unwrap();
        assert_eq!(back.to_csv(), rep.to_csv());
        assert!(rep.summary().contains("all_converged=true"));
    }
}

//! Calibration of the convergence diagnostics on chains with known behaviour.

use carlevel_core::diagnostics::{effective_sample_size, gelman_rubin, geweke, heidelberger_welch};
use carlevel_core::sampling::{standard_normal, RngStream};
use proptest::prelude::*;

fn iid(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = RngStream::new(seed, stream);
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}

#[test]
fn geweke_false_alarm_rate_on_iid_chains() {
    let reps = 1000;
    let hits = (0..reps)
        .filter(|&r| geweke(&iid(61, r, 10_000), 0.1, 0.5).unwrap().abs() > 1.96)
        .count();
    let rate = hits as f64 / reps as f64;
    assert!((rate - 0.05).abs() <= 0.02, "rejection rate {rate}");
}

#[test]
fn heidelberger_welch_passes_iid_chains() {
    let reps = 200;
    let passes = (0..reps)
        .filter(|&r| heidelberger_welch(&iid(62, r, 10_000), 0.05, 0.1).unwrap().stationarity_pass)
        .count();
    assert!(passes as f64 >= 0.9 * reps as f64, "{passes}/{reps} passed");
}

#[test]
fn r_hat_of_iid_chains_and_ar1_ess() {
    let chains: Vec<Vec<f64>> = (0..4).map(|c| iid(63, c, 5000)).collect();
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
    assert!(gelman_rubin(&refs).unwrap() < 1.02);

    let mut rng = RngStream::new(64, 0);
    let n = 20_000;
    let mut x = vec![0.0; n];
    for t in 1..n {
        x[t] = 0.9 * x[t - 1] + standard_normal(&mut rng);
    }
    let ess = effective_sample_size(&x).unwrap();
    let exact = n as f64 * 0.1 / 1.9;
    assert!((ess / exact - 1.0).abs() < 0.2, "ess {ess} vs {exact}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn r_hat_grows_with_a_mean_offset(seed in any::<u64>(), offset in 0.0f64..3.0, extra in 0.01f64..3.0) {
        let a = iid(seed, 0, 500);
        let b = iid(seed, 1, 500);
        let shift = |d: f64| b.iter().map(|v| v + d).collect::<Vec<f64>>();
        let (b1, b2) = (shift(offset), shift(offset + extra));
        let r1 = gelman_rubin(&[&a, &b1]).unwrap();
        let r2 = gelman_rubin(&[&a, &b2]).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // larger offsets widen the gap only once b already sits above a
        prop_assume!(mean(&b1) >= mean(&a));
        prop_assert!(r2 >= r1, "{r1} -> {r2}");
    }
}

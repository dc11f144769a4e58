//! Scenario data carry the variance their parameters imply.

use carlevel_core::data::LongDataset;
use carlevel_core::simulate::{
    lattice_geography, replicate_seeds, scenario, simulate_replicate, Scenario, ScenarioParams, SimulationConfig,
    StudyKind,
};

fn cell_mean_variance(data: &LongDataset) -> f64 {
    let k = data.num_areas();
    let cells = k * data.num_periods();
    let mut sum = vec![0.0; cells];
    let mut count = vec![0.0; cells];
    for o in 0..data.len() {
        let c = data.periods()[o] * k + data.areas()[o];
        sum[c] += data.y()[o];
        count[c] += 1.0;
    }
    let means: Vec<f64> = sum.iter().zip(&count).map(|(s, n)| s / n).collect();
    let m = means.iter().sum::<f64>() / cells as f64;
    means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (cells as f64 - 1.0)
}

#[test]
fn strong_spatial_scenario_inflates_area_mean_variance() {
    let graph = lattice_geography(10, 10).unwrap();
    let cfg = SimulationConfig::longitudinal();
    let strong = scenario(StudyKind::Longitudinal, 8).unwrap();
    let baseline = Scenario {
        id: 8,
        params: ScenarioParams::Longitudinal {
            tau_s_sq: 1e-12,
            rho_s: 0.5,
            tau_t_sq: 1e-12,
            rho_t: 0.5,
        },
        label: "errors only".into(),
    };
    for replicate in 0..5 {
        let (d, e) = replicate_seeds(7, 8, replicate);
        let (with_effects, truth) = simulate_replicate(&graph, &strong, &cfg, d, e).unwrap();
        let (errors_only, _) = simulate_replicate(&graph, &baseline, &cfg, d, e).unwrap();
        assert_eq!(truth.scenario.params, strong.params);
        let (v1, v0) = (cell_mean_variance(&with_effects), cell_mean_variance(&errors_only));
        // tau_s_sq = 3 adds roughly 3 to the variance of every cell mean
        assert!(v1 > v0 + 1.0, "replicate {replicate}: {v1} vs baseline {v0}");
    }
}

//! End-to-end runs of the `carlevel` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carlevel_core::compare::parse_wide_csv;
use carlevel_core::data::LongDataset;
use carlevel_core::diagnostics::DiagnosticsReport;
use carlevel_core::kv::KvDoc;
use carlevel_core::mcmc::ChainTable;

fn carlevel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carlevel"))
        .args(args)
        .env_remove("CARLEVEL_SEED")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--kind", "cross-sectional", "--scenario", "5", "--seed", "7", "--out", path(&out)];
    args.extend_from_slice(extra);
    let o = carlevel(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Short CAR fit; the run is too short to pass the R-hat gate, so exit 4 is
/// accepted alongside success.
fn short_fit(sim: &Path, out: &Path, model: &str) -> Output {
    let o = carlevel(&[
        "fit",
        "--model",
        model,
        "--data",
        path(&sim.join("data.csv")),
        "--adjacency",
        path(&sim.join("adjacency.csv")),
        "--iters",
        "1100",
        "--burnin",
        "100",
        "--max-retries",
        "0",
        "--seed",
        "3",
        "--out",
        path(out),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", stderr(&o));
    o
}

fn without_wall_time(text: &str) -> String {
    text.lines().filter(|l| !l.contains("wall_time_s")).collect::<Vec<_>>().join("\n")
}

#[test]
fn simulate_longitudinal_scenario_records_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s8");
    let o = carlevel(&[
        "simulate", "--kind", "longitudinal", "--scenario", "8", "--rows", "10", "--cols", "10", "--n-per-area", "5",
        "--periods", "5", "--seed", "7", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = KvDoc::read(&out.join("manifest.txt")).unwrap();
    assert_eq!(manifest.get("manifest.truth.scenario.tau_s_sq"), Some("3"));
    assert_eq!(manifest.get("manifest.command"), Some("simulate"));
    let (data, meta) = LongDataset::read(&out.join("data.csv")).unwrap();
    assert_eq!((data.num_areas(), data.num_periods(), data.len()), (100, 5, 2500));
    assert!(meta.is_some());
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a"), &[]);
    let b = simulate(&dir.path().join("b"), &[]);
    for f in ["data.csv", "data.meta", "adjacency.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_scenario_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = carlevel(&["simulate", "--kind", "cross-sectional", "--scenario", "99", "--seed", "1", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown scenario"));
}

#[test]
fn growth_model_on_single_period_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &[]);
    let o = carlevel(&[
        "fit", "--model", "cl3", "--data", path(&sim.join("data.csv")), "--adjacency", path(&sim.join("adjacency.csv")),
        "--seed", "1", "--out", path(&dir.path().join("fit")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 2 periods"));
}

#[test]
fn environment_seed_and_config_file_match_flags() {
    let dir = tempfile::tempdir().unwrap();
    let flags = simulate(&dir.path().join("flags"), &[]);

    let env_out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_carlevel"))
        .args(["simulate", "--kind", "cross-sectional", "--scenario", "5", "--out", path(&env_out)])
        .env("CARLEVEL_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "kind = cross-sectional\nscenario = 5\nseed = 7\n").unwrap();
    let cfg_out = dir.path().join("cfg");
    let o = carlevel(&["simulate", "--config", path(&cfg), "--out", path(&cfg_out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    for out in [&env_out, &cfg_out] {
        assert_eq!(fs::read(flags.join("data.csv")).unwrap(), fs::read(out.join("data.csv")).unwrap());
    }
    fs::write(&cfg, "kind = cross-sectional\nscenario = 5\nseed = 7\nbogus = 1\n").unwrap();
    assert_eq!(carlevel(&["simulate", "--config", path(&cfg)]).status.code(), Some(2));
}

#[test]
fn rerun_from_manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &[]);
    let fit = dir.path().join("fit");
    short_fit(&sim, &fit, "car");
    let again = dir.path().join("again");
    let o = carlevel(&["rerun", path(&fit.join("manifest.txt")), "--out", path(&again)]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", stderr(&o));
    for f in ["chain_0.csv", "chain_1.csv", "summary.csv", "diagnostics.csv", "fit_summary.meta"] {
        assert_eq!(fs::read(fit.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let meta = |d: &Path| without_wall_time(&fs::read_to_string(d.join("chain_0.meta")).unwrap());
    assert_eq!(meta(&fit), meta(&again));
    let m1 = fs::read_to_string(fit.join("manifest.txt")).unwrap();
    let m2 = fs::read_to_string(again.join("manifest.txt")).unwrap();
    let fit_s = path(&fit).to_string();
    let again_s = path(&again).to_string();
    assert_eq!(without_wall_time(&m1), without_wall_time(&m2.replace(&again_s, &fit_s)));
}

#[test]
fn fit_outputs_parse_under_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &[]);
    let fit = dir.path().join("fit");
    short_fit(&sim, &fit, "car");

    let summary = fs::read_to_string(fit.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["beta_intercept", "beta_x1", "beta_x2", "sigma_e_sq", "sigma_e", "tau_sq", "rho"]);

    let chain = ChainTable::from_csv(&fs::read_to_string(fit.join("chain_0.csv")).unwrap()).unwrap();
    assert_eq!(chain.num_draws(), 100);
    assert_eq!(chain.to_csv(), fs::read_to_string(fit.join("chain_0.csv")).unwrap());
    let meta = KvDoc::read(&fit.join("chain_0.meta")).unwrap();
    assert_eq!(meta.get("mcmc.thin"), Some("10"));

    let diag_text = fs::read_to_string(fit.join("diagnostics.csv")).unwrap();
    let report = DiagnosticsReport::from_csv(&diag_text, 1.02).unwrap();
    assert_eq!(report.to_csv(), diag_text);

    let diag_dir = dir.path().join("diag");
    let o = carlevel(&[
        "diagnose", "--chains", &format!("{},{}", path(&fit.join("chain_0.csv")), path(&fit.join("chain_1.csv"))),
        "--out", path(&diag_dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(diag_dir.join("diagnostics.csv")).unwrap(), diag_text);
    assert!(String::from_utf8_lossy(&o.stdout).contains("all_converged="));
}

#[test]
fn compare_needs_truth_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &[]);
    fs::remove_file(sim.join("data.meta")).unwrap();
    let fit = dir.path().join("fit");
    short_fit(&sim, &fit, "cl2");
    let o = carlevel(&["compare", "--fits", path(&fit), "--out", path(&dir.path().join("cmp"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing truth metadata"), "{}", stderr(&o));
}

#[test]
fn compare_over_fits_has_one_column_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut fits = Vec::new();
    for replicate in ["0", "1"] {
        let sim = simulate(&dir.path().join(format!("r{replicate}")), &["--replicate", replicate]);
        for model in ["cl2", "car", "rcar"] {
            let fit = dir.path().join(format!("fit_{replicate}_{model}"));
            short_fit(&sim, &fit, model);
            fits.push(path(&fit).to_string());
        }
    }
    let out = dir.path().join("cmp");
    let o = carlevel(&["compare", "--fits", &fits.join(","), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rmse = fs::read_to_string(out.join("rmse_by_scenario.csv")).unwrap();
    assert_eq!(rmse.lines().next(), Some("scenario,coefficient,truth,cl2,car,rcar"));
    let rows = parse_wide_csv(&rmse).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|(sc, _, _, cells)| *sc == 5 && cells.len() == 3 && cells.iter().all(|(_, v)| v.is_some())));
}

fn tiny_study(out: &Path, kind: &str, replicates: &str) -> Output {
    carlevel(&[
        "study", "--kind", kind, "--scenarios", "8", "--replicates", replicates, "--rows", "4", "--cols", "4", "--iters",
        "1100", "--burnin", "100", "--max-retries", "0", "--seed", "5", "--out", path(out),
    ])
}

#[test]
fn longitudinal_study_reports_three_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let o = tiny_study(&out, "longitudinal", "2");
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", stderr(&o));
    let dic = fs::read_to_string(out.join("dic_by_scenario.csv")).unwrap();
    assert_eq!(dic.lines().next(), Some("scenario,cl3,car-anova,conv"));
    for f in ["rmse_scenario_8.svg", "dic_scenario_8.svg", "replicate_fits.csv", "manifest.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn single_replicate_study_degrades_to_bias_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let o = tiny_study(&out, "cross-sectional", "1");
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", stderr(&o));
    assert!(stderr(&o).contains("bias only"), "{}", stderr(&o));
    let rmse = parse_wide_csv(&fs::read_to_string(out.join("rmse_by_scenario.csv")).unwrap()).unwrap();
    assert!(rmse.iter().all(|(_, _, _, cells)| cells.iter().all(|(_, v)| v.is_none())));
}

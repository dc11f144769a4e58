use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use carlevel_core::compare::{ComparisonReport, FitSummary, TruthTable};
use carlevel_core::data::LongDataset;
use carlevel_core::diagnostics::{diagnose, DiagnosticsReport};
use carlevel_core::graph::{read_adjacency, write_edge_list};
use carlevel_core::kv::KvDoc;
use carlevel_core::mcmc::{ChainTable, McmcConfig};
use carlevel_core::models::{Model, ModelSpec};
use carlevel_core::simulate::{
    grid_scenario, lattice_geography, replicate_seeds, simulate_replicate, Scenario, ScenarioParams,
    SimulationConfig, StudyKind, Truth,
};
use carlevel_core::study::{
    fit_until_converged, replicate_coefficients_csv, replicate_fits_csv, run_study, scalar_summaries, summarize_fit,
    GatedFit, StudyConfig,
};
use carlevel_core::Error;

use crate::args::{CompareArgs, DiagnoseArgs, FitArgs, SimulateArgs, StudyArgs};
use crate::manifest::RunManifest;
use crate::svg::{grouped_bars, Bar};

/// Fits that stayed above the R-hat threshold after every retry.
#[derive(Debug)]
pub struct NotConverged(pub String);

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not converged after retries: {}", self.0)
    }
}

impl std::error::Error for NotConverged {}

/// Where a command wrote its outputs, and whether every fit converged.
pub struct Outcome {
    pub out_dir: PathBuf,
    pub not_converged: Option<NotConverged>,
}

impl Outcome {
    fn done(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            not_converged: None,
        }
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn custom_scenario(a: &SimulateArgs) -> anyhow::Result<Scenario> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| Error::Config(format!("without --scenario, --{flag} is required")))
    };
    let params = match a.kind {
        StudyKind::CrossSectional => ScenarioParams::CrossSectional {
            tau_sq: need(a.tau_sq, "tau-sq")?,
            rho: need(a.rho, "rho")?,
        },
        StudyKind::Longitudinal => ScenarioParams::Longitudinal {
            tau_s_sq: need(a.tau_s_sq, "tau-s-sq")?,
            rho_s: need(a.rho_s, "rho-s")?,
            tau_t_sq: need(a.tau_t_sq, "tau-t-sq")?,
            rho_t: need(a.rho_t, "rho-t")?,
        },
    };
    Ok(Scenario {
        id: 0,
        params,
        label: "custom".into(),
    })
}

fn simulation_config(kind: StudyKind, n_per_area: usize, periods: Option<usize>) -> SimulationConfig {
    let mut cfg = SimulationConfig::for_kind(kind);
    cfg.n_per_area = n_per_area;
    if let Some(p) = periods {
        cfg.num_periods = p;
    }
    cfg
}

pub fn simulate(a: &SimulateArgs, manifest: &mut RunManifest) -> anyhow::Result<Outcome> {
    let sc = match a.scenario {
        Some(id) => grid_scenario(a.kind, id, a.full_grid)?,
        None => custom_scenario(a)?,
    };
    let cfg = simulation_config(a.kind, a.n_per_area, a.periods);
    cfg.validate(a.kind)?;
    let graph = lattice_geography(a.rows, a.cols)?;
    let (design_seed, effect_seed) = replicate_seeds(a.seed, sc.id, a.replicate);
    let (data, truth) = simulate_replicate(&graph, &sc, &cfg, design_seed, effect_seed)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let data_path = a.out.join("data.csv");
    let mut extra = truth.to_kv();
    extra.set("replicate", a.replicate);
    data.write(&data_path, &extra)?;
    let adj_path = a.out.join("adjacency.csv");
    write_text(&adj_path, &write_edge_list(&graph))?;

    for (k, v) in truth.to_kv().iter() {
        manifest.set(k, v);
    }
    manifest.output("data", &data_path);
    manifest.output("adjacency", &adj_path);
    println!(
        "scenario {} ({}): {} observations, {} areas, {} periods -> {}",
        sc.id,
        sc.label,
        data.len(),
        data.num_areas(),
        data.num_periods(),
        a.out.display()
    );
    Ok(Outcome::done(&a.out))
}

fn chain_columns(chains: &[ChainTable]) -> Vec<Vec<Vec<f64>>> {
    chains.iter().map(|c| c.columns.clone()).collect()
}

fn summary_csv(fit: &GatedFit) -> anyhow::Result<String> {
    let mut rows = scalar_summaries(&fit.chains)?;
    if let Some(pos) = rows.iter().position(|(n, _)| n == "sigma_e_sq") {
        let col = fit.chains[0].parameter_names.iter().position(|n| n == "sigma_e_sq").unwrap();
        let draws: Vec<f64> = fit.chains.iter().flat_map(|c| c.column(col)).map(f64::sqrt).collect();
        rows.insert(pos + 1, ("sigma_e".into(), carlevel_core::compare::summarize_posterior(&draws)?));
    }
    let mut out = String::from("parameter,median,ci_2_5,ci_97_5\n");
    for (n, s) in rows {
        out.push_str(&format!("{n},{},{},{}\n", s.median, s.ci_2_5, s.ci_97_5));
    }
    Ok(out)
}

pub fn fit(a: &FitArgs, manifest: &mut RunManifest) -> anyhow::Result<Outcome> {
    let (data, meta) = LongDataset::read(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let (graph, report) = read_adjacency(&a.adjacency).with_context(|| format!("reading {}", a.adjacency.display()))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let model = Model::new(ModelSpec::new(a.model), &data, &graph)?;
    for w in model.warnings() {
        eprintln!("warning: {w}");
    }
    let mut cfg = McmcConfig::for_family(a.model, a.seed);
    if let Some(b) = a.burnin {
        cfg.burn_in = b;
        cfg.iterations = b + 20_000;
    }
    if let Some(it) = a.iters {
        cfg.iterations = it;
    }
    cfg.thin = a.thin;
    cfg.num_chains = a.chains;
    cfg.store_individual_effects = a.store_individual;
    cfg.store_area_effects = !a.no_store_area;
    cfg.validate()?;

    let fit = fit_until_converged(&model, &cfg, a.threshold, a.max_retries)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for ch in &fit.chains {
        let p = a.out.join(format!("chain_{}.csv", ch.stream_id));
        write_text(&p, &ch.to_csv())?;
        ch.metadata(&fit.config).write(&p.with_extension("meta"))?;
        manifest.output(&format!("chain_{}", ch.stream_id), &p);
    }
    let summary = summary_csv(&fit)?;
    write_text(&a.out.join("summary.csv"), &summary)?;

    let tables: Vec<ChainTable> = fit.chains.iter().map(|c| c.to_table()).collect();
    let diag = diagnose(&tables[0].names, &chain_columns(&tables), a.threshold)?;
    write_text(&a.out.join("diagnostics.csv"), &diag.to_csv())?;
    write_text(&a.out.join("diagnostics.txt"), &diag.summary())?;

    let truth = meta.as_ref().and_then(|m| Truth::from_kv(m).ok());
    let replicate = meta
        .as_ref()
        .and_then(|m| m.parse_value::<usize>("replicate").ok())
        .unwrap_or(0);
    let fs_summary = summarize_fit(&model, &fit, truth.as_ref().map_or(0, |t| t.scenario.id), replicate)?;
    let mut doc = fs_summary.to_kv();
    if let Some(t) = &truth {
        for (k, v) in t.to_kv().iter() {
            doc.set(k, v);
        }
    }
    doc.write(&a.out.join("fit_summary.meta"))?;

    manifest.input("data", &a.data);
    manifest.input("adjacency", &a.adjacency);
    manifest.set("attempts", fit.attempts);
    manifest.set("iterations", fit.config.iterations);
    manifest.set("burn_in", fit.config.burn_in);
    print!("{summary}");
    print!("{}", diag.summary());
    println!("DIC {:.2} (p_D {:.2})", fs_summary.dic.dic, fs_summary.dic.p_d);
    let mut outcome = Outcome::done(&a.out);
    if !fit.converged {
        outcome.not_converged = Some(NotConverged(format!(
            "{} max R-hat {:.4} after {} attempts",
            a.model,
            fit.max_r_hat.unwrap_or(f64::NAN),
            fit.attempts
        )));
    }
    Ok(outcome)
}

pub fn diagnose_cmd(a: &DiagnoseArgs, manifest: &mut RunManifest) -> anyhow::Result<Outcome> {
    let mut tables = Vec::new();
    for p in &a.chains {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        tables.push(ChainTable::from_csv(&text).with_context(|| format!("parsing {}", p.display()))?);
        manifest.input(&format!("chain_{}", tables.len() - 1), p);
    }
    if tables.iter().any(|t| t.names != tables[0].names) {
        bail!(Error::Mismatch("chain files have different parameters".into()));
    }
    let report: DiagnosticsReport = diagnose(&tables[0].names, &chain_columns(&tables), a.threshold)?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.chains[0].parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&out)?;
    write_text(&out.join("diagnostics.csv"), &report.to_csv())?;
    write_text(&out.join("diagnostics.txt"), &report.summary())?;
    manifest.output("diagnostics", &out.join("diagnostics.csv"));
    print!("{}", report.summary());
    Ok(Outcome::done(&out))
}

pub fn compare(a: &CompareArgs, manifest: &mut RunManifest) -> anyhow::Result<Outcome> {
    let mut fits: Vec<FitSummary> = Vec::new();
    let mut truth = TruthTable::new();
    for dir in &a.fits {
        let p = dir.join("fit_summary.meta");
        let doc = KvDoc::read(&p).with_context(|| format!("reading {}", p.display()))?;
        let t = Truth::from_kv(&doc)
            .map_err(|_| Error::Config(format!("missing truth metadata in {}", p.display())))?;
        let mut f = FitSummary::from_kv(&doc)?;
        f.replicate = fits.iter().filter(|g| g.scenario == f.scenario && g.model == f.model).count();
        truth
            .entry(f.scenario)
            .or_insert_with(|| t.coefficient_names.iter().cloned().zip(t.config.beta_true.clone()).collect());
        fits.push(f);
        manifest.input(&format!("fit_{}", fits.len() - 1), dir);
    }
    let report = ComparisonReport::build(&fits, &truth)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for p in report.write(&a.out)? {
        manifest.output(p.file_name().unwrap().to_str().unwrap_or("table"), &p);
    }
    print!("{}", report.rmse_csv());
    Ok(Outcome::done(&a.out))
}

fn write_plots(report: &ComparisonReport, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let models = report.models();
    let series: Vec<String> = models.iter().map(|m| m.to_string()).collect();
    let mut paths = Vec::new();
    for sc in report.scenarios() {
        let coefs: Vec<String> = report
            .coefficients
            .iter()
            .filter(|c| c.scenario == sc && c.model == models[0])
            .map(|c| c.coefficient.clone())
            .collect();
        let rmse: Vec<Vec<Bar>> = models
            .iter()
            .map(|m| {
                coefs
                    .iter()
                    .map(|c| Bar {
                        value: report.coefficient(sc, *m, c).and_then(|r| r.rmse),
                        whisker: None,
                    })
                    .collect()
            })
            .collect();
        let p = out.join(format!("rmse_scenario_{sc}.svg"));
        write_text(&p, &grouped_bars(&format!("RMSE, scenario {sc}"), "RMSE", &coefs, &series, &rmse))?;
        paths.push(p);
        let dic: Vec<Vec<Bar>> = models
            .iter()
            .map(|m| {
                vec![Bar {
                    value: report.fit(sc, *m).map(|f| f.dic),
                    whisker: report.fit(sc, *m).map(|f| (f.dic_q25, f.dic_q75)),
                }]
            })
            .collect();
        let p = out.join(format!("dic_scenario_{sc}.svg"));
        write_text(
            &p,
            &grouped_bars(
                &format!("DIC median and IQR, scenario {sc}"),
                "DIC",
                &[format!("scenario {sc}")],
                &series,
                &dic,
            ),
        )?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn study(a: &StudyArgs, manifest: &mut RunManifest) -> anyhow::Result<Outcome> {
    let scenarios = if a.scenarios.is_empty() {
        let grid = if a.full_grid {
            carlevel_core::simulate::full_scenario_grid(a.kind)
        } else {
            carlevel_core::simulate::scenario_grid(a.kind)
        };
        grid.iter().map(|s| s.id).collect()
    } else {
        a.scenarios.clone()
    };
    let mut cfg = StudyConfig::new(a.kind, scenarios, a.replicates, a.seed);
    cfg.full_grid = a.full_grid;
    cfg.rows = a.rows;
    cfg.cols = a.cols;
    cfg.simulation = simulation_config(a.kind, a.n_per_area, a.periods);
    if !a.models.is_empty() {
        cfg.models = a.models.clone();
    }
    cfg.iterations = a.iters;
    cfg.burn_in = a.burnin;
    cfg.thin = a.thin;
    cfg.chains = a.chains;
    cfg.jobs = a.jobs;
    cfg.max_retries = a.max_retries;
    cfg.r_hat_threshold = a.threshold;
    if a.replicates < 2 {
        eprintln!("warning: {} replicate(s): RMSE needs 2 or more, reporting bias only", a.replicates);
    }

    let out = run_study(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    let mut written = out.report.write(&a.out)?;
    let p = a.out.join("replicate_fits.csv");
    write_text(&p, &replicate_fits_csv(&out.fits))?;
    written.push(p);
    let p = a.out.join("replicate_coefficients.csv");
    write_text(&p, &replicate_coefficients_csv(&out.fits))?;
    written.push(p);
    written.extend(write_plots(&out.report, &a.out)?);
    for p in &written {
        manifest.output(p.file_name().unwrap().to_str().unwrap_or("file"), p);
    }
    for (k, v) in cfg.to_kv().iter() {
        manifest.set(k, v);
    }

    print!("{}", out.report.rmse_csv());
    print!("{}", out.report.dic_csv());
    let mut outcome = Outcome::done(&a.out);
    let bad = out.non_converged();
    if !bad.is_empty() {
        let list: Vec<String> = bad
            .iter()
            .map(|f| format!("scenario {} replicate {} {}", f.scenario, f.replicate, f.model))
            .collect();
        outcome.not_converged = Some(NotConverged(list.join("; ")));
    }
    Ok(outcome)
}

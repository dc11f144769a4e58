//! Simulation study runner: simulate replicates, fit every candidate model
//! with a convergence gate, and aggregate the comparison.
//!
//! Fits are parallel over (scenario, replicate, model) tasks; results are
//! gathered in task order so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::compare::{dic, summarize_posterior, ComparisonReport, FitSummary, PosteriorSummary, TruthTable};
use crate::data::LongDataset;
use crate::diagnostics::gelman_rubin;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::kv::{join, split, KvDoc};
use crate::mcmc::{run_chains, ChainOutput, McmcConfig};
use crate::models::{Family, Model, ModelSpec, PosteriorMeans};
use crate::sampling::mix_seed;
use crate::simulate::{grid_scenario, lattice_geography, replicate_seeds, simulate_replicate, SimulationConfig, StudyKind};

/// R-hat threshold of the convergence gate.
pub const R_HAT_THRESHOLD: f64 = 1.02;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub scenarios: Vec<usize>,
    /// Scenario ids refer to the full 3^k grid instead of the published rows.
    pub full_grid: bool,
    pub replicates: usize,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub simulation: SimulationConfig,
    pub models: Vec<Family>,
    /// Overrides of the per-family run length (defaults: burn-in of the
    /// family plus 20,000 sweeps).
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub chains: usize,
    pub r_hat_threshold: f64,
    pub max_retries: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl StudyConfig {
    /// 10 x 10 lattice, every model of the kind, 2 chains thinned by 10.
    pub fn new(kind: StudyKind, scenarios: Vec<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            kind,
            scenarios,
            full_grid: false,
            replicates,
            seed,
            rows: 10,
            cols: 10,
            simulation: SimulationConfig::for_kind(kind),
            models: Family::for_kind(kind).to_vec(),
            iterations: None,
            burn_in: None,
            thin: 10,
            chains: 2,
            r_hat_threshold: R_HAT_THRESHOLD,
            max_retries: 2,
            jobs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.replicates == 0 || self.models.is_empty() {
            return Err(Error::Config("study needs scenarios, replicates and models".into()));
        }
        for &s in &self.scenarios {
            grid_scenario(self.kind, s, self.full_grid)?;
        }
        if let Some(m) = self.models.iter().find(|m| m.kind() != self.kind) {
            return Err(Error::Config(format!("model {m} does not fit a {} study", self.kind)));
        }
        self.simulation.validate(self.kind)?;
        for &m in &self.models {
            self.mcmc_config(m, 0).validate()?;
        }
        Ok(())
    }

    /// Chain configuration of `family` for the fit seeded `seed`.
    pub fn mcmc_config(&self, family: Family, seed: u64) -> McmcConfig {
        let mut cfg = McmcConfig::for_family(family, seed);
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
            cfg.iterations = b + 20_000;
        }
        if let Some(it) = self.iterations {
            cfg.iterations = it;
        }
        cfg.thin = self.thin;
        cfg.num_chains = self.chains;
        cfg
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("study.kind", self.kind);
        doc.set("study.scenarios", join(&self.scenarios));
        doc.set("study.grid", if self.full_grid { "full" } else { "published" });
        doc.set("study.replicates", self.replicates);
        doc.set("study.seed", self.seed);
        doc.set("study.rows", self.rows);
        doc.set("study.cols", self.cols);
        doc.set("study.models", join(&self.models));
        doc.set("study.iterations", self.iterations.map_or("default".into(), |v| v.to_string()));
        doc.set("study.burn_in", self.burn_in.map_or("default".into(), |v| v.to_string()));
        doc.set("study.thin", self.thin);
        doc.set("study.chains", self.chains);
        doc.set("study.r_hat_threshold", self.r_hat_threshold);
        doc.set("study.max_retries", self.max_retries);
        for (k, v) in self.simulation.to_kv().iter() {
            doc.set(format!("study.{k}"), v);
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let opt = |k: &str| -> Result<Option<usize>> {
            match doc.require(k)? {
                "default" => Ok(None),
                _ => doc.parse_value(k).map(Some),
            }
        };
        let mut inner = KvDoc::new();
        for (k, v) in doc.with_prefix("study.") {
            inner.set(k, v);
        }
        Ok(Self {
            kind: doc.parse_value("study.kind")?,
            scenarios: split(doc.require("study.scenarios")?)?,
            full_grid: match doc.require("study.grid")? {
                "full" => true,
                "published" => false,
                other => return Err(Error::Config(format!("unknown grid `{other}`"))),
            },
            replicates: doc.parse_value("study.replicates")?,
            seed: doc.parse_value("study.seed")?,
            rows: doc.parse_value("study.rows")?,
            cols: doc.parse_value("study.cols")?,
            simulation: SimulationConfig::from_kv(&inner)?,
            models: split(doc.require("study.models")?)?,
            iterations: opt("study.iterations")?,
            burn_in: opt("study.burn_in")?,
            thin: doc.parse_value("study.thin")?,
            chains: doc.parse_value("study.chains")?,
            r_hat_threshold: doc.parse_value("study.r_hat_threshold")?,
            max_retries: doc.parse_value("study.max_retries")?,
            jobs: 0,
        })
    }
}

/// Chains of a gated fit.
#[derive(Debug, Clone)]
pub struct GatedFit {
    pub chains: Vec<ChainOutput>,
    pub config: McmcConfig,
    pub attempts: usize,
    pub max_r_hat: Option<f64>,
    pub converged: bool,
}

fn monitored(name: &str) -> bool {
    name.starts_with("beta_") || name == "sigma_e_sq"
}

/// Largest R-hat over the regression coefficients and the residual variance.
pub fn monitored_r_hat(chains: &[ChainOutput]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let names = &chains[0].parameter_names;
    let mut worst: Option<f64> = None;
    for (c, _) in names.iter().enumerate().filter(|(_, n)| monitored(n)) {
        let cols: Vec<Vec<f64>> = chains.iter().map(|ch| ch.column(c)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|v| v.as_slice()).collect();
        // constant (fixed) columns carry no convergence information
        if let Ok(r) = gelman_rubin(&refs) {
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
    }
    worst
}

/// Runs the chains, re-running with doubled burn-in and iterations while the
/// monitored R-hat is at or above `threshold`, at most `max_retries` times.
/// A single chain skips the gate.
pub fn fit_until_converged(model: &Model, config: &McmcConfig, threshold: f64, max_retries: usize) -> Result<GatedFit> {
    let mut cfg = config.clone();
    let mut attempt = 1;
    loop {
        let chains = run_chains(model, &cfg).into_iter().collect::<Result<Vec<_>>>()?;
        let r = monitored_r_hat(&chains);
        let converged = r.is_none_or(|r| r < threshold);
        if converged || attempt > max_retries {
            return Ok(GatedFit {
                chains,
                config: cfg,
                attempts: attempt,
                max_r_hat: r,
                converged,
            });
        }
        cfg.burn_in *= 2;
        cfg.iterations *= 2;
        attempt += 1;
    }
}

/// Pooled draws of column `c` over chains.
fn pooled_column(chains: &[ChainOutput], c: usize) -> Vec<f64> {
    chains.iter().flat_map(|ch| ch.column(c)).collect()
}

/// Median and 95% interval of every scalar parameter, draws pooled over
/// chains.
pub fn scalar_summaries(chains: &[ChainOutput]) -> Result<Vec<(String, PosteriorSummary)>> {
    let first = chains.first().ok_or_else(|| Error::InvalidParameter("no chains".into()))?;
    (0..first.num_scalar)
        .map(|c| Ok((first.parameter_names[c].clone(), summarize_posterior(&pooled_column(chains, c))?)))
        .collect()
}

/// DIC from the pooled deviance trace and the deviance at the pooled
/// posterior means.
pub fn chains_dic(model: &Model, chains: &[ChainOutput]) -> Result<crate::compare::Dic> {
    let deviance: Vec<f64> = chains.iter().flat_map(|c| c.deviance.iter().copied()).collect();
    let means: Vec<PosteriorMeans> = chains.iter().map(|c| c.means.clone()).collect();
    let pooled = PosteriorMeans::pooled(&means).ok_or_else(|| Error::InvalidParameter("no chains".into()))?;
    dic(&deviance, pooled.deviance(model))
}

/// Largest `|Z' psi|` over stored RCAR draws; `None` for other families or
/// when area effects were not stored.
pub fn max_abs_zt_psi(model: &Model, chains: &[ChainOutput]) -> Option<f64> {
    let r = model.restriction()?;
    let k = model.num_areas();
    let mut worst = 0.0f64;
    for ch in chains {
        let start = ch.num_scalar;
        if ch.num_params() < start + k {
            return None;
        }
        for row in 0..ch.num_draws() {
            worst = worst.max(r.max_abs_zt(&ch.row(row)[start..start + k]));
        }
    }
    Some(worst)
}

pub fn summarize_fit(model: &Model, fit: &GatedFit, scenario: usize, replicate: usize) -> Result<FitSummary> {
    let chains = &fit.chains;
    let names = &chains[0].parameter_names;
    let coefficients = model
        .design()
        .names()
        .iter()
        .map(|n| {
            let col = names
                .iter()
                .position(|p| *p == format!("beta_{n}"))
                .ok_or_else(|| Error::Mismatch(format!("no draws for beta_{n}")))?;
            Ok((n.clone(), summarize_posterior(&pooled_column(chains, col))?))
        })
        .collect::<Result<_>>()?;
    let max_ll = chains
        .iter()
        .flat_map(|c| c.log_likelihood.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(FitSummary {
        scenario,
        replicate,
        model: model.family(),
        coefficients,
        dic: chains_dic(model, chains)?,
        max_log_likelihood: max_ll,
        max_r_hat: fit.max_r_hat,
        converged: fit.converged,
        attempts: fit.attempts,
        iterations: fit.config.iterations,
        max_abs_zt_psi: max_abs_zt_psi(model, chains),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub config: StudyConfig,
    /// Ordered by scenario, replicate, then model order of the config.
    pub fits: Vec<FitSummary>,
    pub truth: TruthTable,
    pub report: ComparisonReport,
}

impl StudyOutput {
    pub fn non_converged(&self) -> Vec<&FitSummary> {
        self.fits.iter().filter(|f| !f.converged).collect()
    }

    pub fn fits_for(&self, scenario: usize, model: Family) -> Vec<&FitSummary> {
        self.fits
            .iter()
            .filter(|f| f.scenario == scenario && f.model == model)
            .collect()
    }
}

/// One row per fitted replicate.
pub fn replicate_fits_csv(fits: &[FitSummary]) -> String {
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut out = String::from(
        "scenario,replicate,model,attempts,iterations,converged,max_r_hat,dic,p_d,mean_deviance,max_log_lik,max_abs_zt_psi\n",
    );
    for f in fits {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            f.scenario,
            f.replicate,
            f.model,
            f.attempts,
            f.iterations,
            f.converged,
            na(f.max_r_hat),
            f.dic.dic,
            f.dic.p_d,
            f.dic.mean_deviance,
            f.max_log_likelihood,
            na(f.max_abs_zt_psi)
        )
        .unwrap();
    }
    out
}

/// One row per (fitted replicate, coefficient).
pub fn replicate_coefficients_csv(fits: &[FitSummary]) -> String {
    let mut out = String::from("scenario,replicate,model,coefficient,median,ci_2_5,ci_97_5\n");
    for f in fits {
        for (name, s) in &f.coefficients {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.scenario, f.replicate, f.model, name, s.median, s.ci_2_5, s.ci_97_5
            )
            .unwrap();
        }
    }
    out
}

struct Task {
    scenario: usize,
    replicate: usize,
    model: Family,
    data: usize,
}

/// Simulates and fits every (scenario, replicate, model) task. The fit seed
/// is derived from the replicate's effect seed and the model.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutput> {
    config.validate()?;
    let graph = lattice_geography(config.rows, config.cols)?;
    let mut datasets: Vec<(LongDataset, u64)> = Vec::new();
    let mut truth = TruthTable::new();
    let mut tasks = Vec::new();
    for &s in &config.scenarios {
        let sc = grid_scenario(config.kind, s, config.full_grid)?;
        for r in 0..config.replicates {
            let (design_seed, effect_seed) = replicate_seeds(config.seed, s, r);
            let (data, t) = simulate_replicate(&graph, &sc, &config.simulation, design_seed, effect_seed)?;
            truth.entry(s).or_insert_with(|| {
                t.coefficient_names
                    .iter()
                    .cloned()
                    .zip(t.config.beta_true.iter().copied())
                    .collect()
            });
            for &m in &config.models {
                tasks.push(Task {
                    scenario: s,
                    replicate: r,
                    model: m,
                    data: datasets.len(),
                });
            }
            datasets.push((data, effect_seed));
        }
    }
    let run = |task: &Task| -> Result<FitSummary> {
        let (data, effect_seed) = &datasets[task.data];
        fit_task(config, &graph, data, *effect_seed, task)
    };
    let results: Vec<Result<FitSummary>> = if config.jobs == 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    };
    let fits = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = ComparisonReport::build(&fits, &truth)?;
    Ok(StudyOutput {
        config: config.clone(),
        fits,
        truth,
        report,
    })
}

fn fit_task(config: &StudyConfig, graph: &SpatialGraph, data: &LongDataset, effect_seed: u64, task: &Task) -> Result<FitSummary> {
    let model = Model::new(ModelSpec::new(task.model), data, graph)?;
    let family_tag = Family::ALL.iter().position(|f| *f == task.model).unwrap_or(0) as u64;
    let seed = mix_seed(effect_seed, 1000 + family_tag);
    let fit = fit_until_converged(
        &model,
        &config.mcmc_config(task.model, seed),
        config.r_hat_threshold,
        config.max_retries,
    )?;
    summarize_fit(&model, &fit, task.scenario, task.replicate)
}

/// Per-scenario map of fits, for callers that group by scenario.
pub fn group_by_scenario(fits: &[FitSummary]) -> BTreeMap<usize, Vec<&FitSummary>> {
    let mut out: BTreeMap<usize, Vec<&FitSummary>> = BTreeMap::new();
    for f in fits {
        out.entry(f.scenario).or_default().push(f);
    }
    out
}

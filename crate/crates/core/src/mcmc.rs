//! Chain orchestration: burn-in, thinning, parallel chains and chain files.
//!
//! Iterations count raw sweeps before thinning. Sweep `s` (1-based) is stored
//! when `s > burn_in` and `(s - burn_in) % thin == 0`, giving exactly
//! `floor((iterations - burn_in) / thin)` rows.
//!
//! Chain CSV: header of parameter names followed by `deviance,log_lik`, one
//! row per stored draw. Metadata sidecar (`.meta`) is key=value text with the
//! model, seed, stream, the configuration and the wall time in seconds.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::models::{Family, Model, PosteriorMeans};
use crate::sampling::RngStream;

/// Stored draws needed for a configuration to be accepted by `validate`.
pub const MIN_STORED_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub num_chains: usize,
    pub seed: u64,
    pub overdispersed_init: bool,
    pub store_area_effects: bool,
    pub store_individual_effects: bool,
}

impl McmcConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thin: 10,
            num_chains: 2,
            seed,
            overdispersed_init: true,
            store_area_effects: true,
            store_individual_effects: false,
        }
    }

    /// The family's burn-in followed by 20,000 sweeps.
    pub fn for_family(family: Family, seed: u64) -> Self {
        let burn_in = family.default_burn_in();
        Self::new(burn_in + 20_000, burn_in, seed)
    }

    pub fn stored_draws(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    /// Structural checks: positive sizes and at least one stored draw.
    pub fn check(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.num_chains == 0 {
            return Err(Error::Config("iterations, thin and chains must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.stored_draws() == 0 {
            return Err(Error::Config("configuration stores no draws".into()));
        }
        Ok(())
    }

    /// `check` plus the minimum of 100 stored draws.
    pub fn validate(&self) -> Result<()> {
        self.check()?;
        if self.stored_draws() < MIN_STORED_DRAWS {
            return Err(Error::Config(format!(
                "(iterations - burn_in) / thin = {} stored draws, need at least {MIN_STORED_DRAWS}",
                self.stored_draws()
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set(format!("{prefix}iterations"), self.iterations);
        doc.set(format!("{prefix}burn_in"), self.burn_in);
        doc.set(format!("{prefix}thin"), self.thin);
        doc.set(format!("{prefix}chains"), self.num_chains);
        doc.set(format!("{prefix}seed"), self.seed);
        doc.set(format!("{prefix}overdispersed_init"), self.overdispersed_init);
        doc.set(format!("{prefix}store_area_effects"), self.store_area_effects);
        doc.set(format!("{prefix}store_individual_effects"), self.store_individual_effects);
        doc
    }

    pub fn from_kv(doc: &KvDoc, prefix: &str) -> Result<Self> {
        let get = |k: &str| doc.parse_value::<usize>(&format!("{prefix}{k}"));
        let flag = |k: &str| doc.parse_value::<bool>(&format!("{prefix}{k}"));
        Ok(Self {
            iterations: get("iterations")?,
            burn_in: get("burn_in")?,
            thin: get("thin")?,
            num_chains: get("chains")?,
            seed: doc.parse_value(&format!("{prefix}seed"))?,
            overdispersed_init: flag("overdispersed_init")?,
            store_area_effects: flag("store_area_effects")?,
            store_individual_effects: flag("store_individual_effects")?,
        })
    }
}

/// Draws of one chain, row-major: `draws[r * num_params + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub family: Family,
    pub seed: u64,
    pub stream_id: u64,
    pub parameter_names: Vec<String>,
    /// Leading columns that are scalar parameters (the rest are latents).
    pub num_scalar: usize,
    pub draws: Vec<f64>,
    pub deviance: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    /// 1-based sweep index of each stored row.
    pub sweeps: Vec<usize>,
    pub initial_beta: Vec<f64>,
    pub means: PosteriorMeans,
    pub wall_time: Duration,
}

impl ChainOutput {
    pub fn num_draws(&self) -> usize {
        self.deviance.len()
    }

    pub fn num_params(&self) -> usize {
        self.parameter_names.len()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        let p = self.num_params();
        (0..self.num_draws()).map(|r| self.draws[r * p + c]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.parameter_names.iter().position(|n| n == name).map(|c| self.column(c))
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.num_params();
        &self.draws[r * p..(r + 1) * p]
    }

    pub fn to_table(&self) -> ChainTable {
        ChainTable {
            names: self.parameter_names.clone(),
            columns: (0..self.num_params()).map(|c| self.column(c)).collect(),
            deviance: self.deviance.clone(),
            log_likelihood: self.log_likelihood.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }

    pub fn metadata(&self, config: &McmcConfig) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("model", self.family);
        doc.set("seed", self.seed);
        doc.set("stream_id", self.stream_id);
        doc.set("stored_draws", self.num_draws());
        for (k, v) in config.to_kv("mcmc.").iter() {
            doc.set(k, v);
        }
        doc.set("wall_time_s", format!("{:.3}", self.wall_time.as_secs_f64()));
        doc
    }
}

/// Column-major chain draws as read back from a chain CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub deviance: Vec<f64>,
    pub log_likelihood: Vec<f64>,
}

impl ChainTable {
    pub fn num_draws(&self) -> usize {
        self.deviance.len()
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|c| self.columns[c].as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for n in &self.names {
            out.push_str(n);
            out.push(',');
        }
        out.push_str("deviance,log_lik\n");
        for r in 0..self.num_draws() {
            for c in &self.columns {
                write!(out, "{},", c[r]).unwrap();
            }
            writeln!(out, "{},{}", self.deviance[r], self.log_likelihood[r]).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty chain file"))?;
        let mut names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if names.len() < 2 || names[names.len() - 2..] != ["deviance", "log_lik"] {
            return Err(Error::parse(1, "chain header must end with `deviance,log_lik`"));
        }
        names.truncate(names.len() - 2);
        let p = names.len();
        let mut columns = vec![Vec::new(); p];
        let mut deviance = Vec::new();
        let mut log_likelihood = Vec::new();
        for (idx, line) in lines {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(idx + 1, e))?;
            if vals.len() != p + 2 {
                return Err(Error::parse(idx + 1, format!("expected {} fields, got {}", p + 2, vals.len())));
            }
            for (c, v) in columns.iter_mut().zip(&vals) {
                c.push(*v);
            }
            deviance.push(vals[p]);
            log_likelihood.push(vals[p + 1]);
        }
        Ok(Self {
            names,
            columns,
            deviance,
            log_likelihood,
        })
    }
}

/// Runs one chain on stream `stream_id` of `config.seed`.
pub fn run_chain(model: &Model, config: &McmcConfig, stream_id: u64) -> Result<ChainOutput> {
    config.check()?;
    let start = Instant::now();
    let mut rng = RngStream::new(config.seed, stream_id);
    let mut state = model.init_state(&mut rng, config.overdispersed_init)?;
    let initial_beta = state.beta.clone();

    let mut names = model.scalar_names();
    let num_scalar = names.len();
    if config.store_area_effects {
        names.extend(model.area_effect_names());
    }
    if config.store_individual_effects {
        names.extend(model.individual_effect_names());
    }
    let rows = config.stored_draws();
    let mut draws = Vec::with_capacity(rows * names.len());
    let mut deviance = Vec::with_capacity(rows);
    let mut log_likelihood = Vec::with_capacity(rows);
    let mut sweeps = Vec::with_capacity(rows);
    let mut means = PosteriorMeans::new(model);

    for sweep in 1..=config.iterations {
        model
            .gibbs_sweep(&mut state, &mut rng)
            .map_err(|e| Error::Sweep {
                sweep,
                source: Box::new(e),
            })?;
        if sweep <= config.burn_in || (sweep - config.burn_in) % config.thin != 0 {
            continue;
        }
        model.scalar_values(&state, &mut draws);
        if config.store_area_effects {
            draws.extend(model.cell_effects(&state));
        }
        if config.store_individual_effects {
            model.individual_effect_values(&state, &mut draws);
        }
        let ll = model.log_likelihood(&state);
        if !ll.is_finite() {
            return Err(Error::Sweep {
                sweep,
                source: Box::new(Error::Numerical(format!("log-likelihood {ll}"))),
            });
        }
        log_likelihood.push(ll);
        deviance.push(-2.0 * ll);
        sweeps.push(sweep);
        means.accumulate(model, &state);
    }
    Ok(ChainOutput {
        family: model.family(),
        seed: config.seed,
        stream_id,
        parameter_names: names,
        num_scalar,
        draws,
        deviance,
        log_likelihood,
        sweeps,
        initial_beta,
        means,
        wall_time: start.elapsed(),
    })
}

/// Runs `config.num_chains` chains in parallel on streams `0..num_chains`.
/// Results are ordered by chain index; each chain succeeds or fails alone.
pub fn run_chains(model: &Model, config: &McmcConfig) -> Vec<Result<ChainOutput>> {
    (0..config.num_chains as u64)
        .into_par_iter()
        .map(|c| run_chain(model, config, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::simulate::{lattice_geography, scenario, simulate_cross_sectional, SimulationConfig, StudyKind};

    fn small_model(family: Family) -> Model {
        let g = lattice_geography(3, 3).unwrap();
        let sc = scenario(StudyKind::CrossSectional, 3).unwrap();
        let d = simulate_cross_sectional(
            &g,
            &sc,
            &SimulationConfig::cross_sectional(),
            &mut RngStream::new(1, 0),
            &mut RngStream::new(1, 1),
        )
        .unwrap();
        Model::new(ModelSpec::new(family), &d, &g).unwrap()
    }

    #[test]
    fn stored_row_count_and_sweep_audit() {
        let m = small_model(Family::Car);
        let cfg = McmcConfig::new(200, 100, 3);
        let out = run_chain(&m, &cfg, 0).unwrap();
        assert_eq!(out.num_draws(), 10);
        assert_eq!(out.sweeps, (1..=10).map(|i| 100 + 10 * i).collect::<Vec<_>>());
        assert_eq!(out.draws.len(), 10 * out.num_params());
    }

    #[test]
    fn validate_requires_one_hundred_draws() {
        assert!(McmcConfig::new(200, 100, 0).validate().is_err());
        assert!(McmcConfig::new(200, 100, 0).check().is_ok());
        assert!(McmcConfig::new(1100, 100, 0).validate().is_ok());
        assert!(McmcConfig::new(100, 100, 0).check().is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = small_model(Family::Rcar);
        let cfg = McmcConfig::new(300, 100, 9);
        let a = run_chain(&m, &cfg, 1).unwrap();
        let b = run_chain(&m, &cfg, 1).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.means, b.means);
    }

    #[test]
    fn parallel_chains_match_sequential() {
        let m = small_model(Family::Car);
        let cfg = McmcConfig::new(300, 100, 4);
        let par: Vec<ChainOutput> = run_chains(&m, &cfg).into_iter().map(|r| r.unwrap()).collect();
        let alone = run_chain(&m, &cfg, 0).unwrap();
        assert_eq!(par[0].to_csv(), alone.to_csv());
        assert_ne!(par[0].initial_beta, par[1].initial_beta);
    }

    #[test]
    fn chain_csv_round_trips() {
        let m = small_model(Family::Cl2);
        let out = run_chain(&m, &McmcConfig::new(150, 50, 2), 0).unwrap();
        let table = ChainTable::from_csv(&out.to_csv()).unwrap();
        assert_eq!(table, out.to_table());
    }

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = McmcConfig::for_family(Family::CarAnova, 77);
        assert_eq!(cfg.burn_in, 25_000);
        assert_eq!(McmcConfig::from_kv(&cfg.to_kv("m."), "m.").unwrap(), cfg);
    }
}

//! Synthetic geographies, spatial and spatio-temporal effects, outcomes and
//! the scenario grids of the simulation study.
//!
//! Each dataset uses two random streams. The design stream draws the covariates,
//! the individual effects and the observation errors. The effect stream draws
//! the area effects. Replicates of a scenario keep the design seed fixed and
//! vary only the effect seed, so X and e are held fixed.

use std::fmt;

use rand::Rng;

use crate::data::{Covariate, CovariateLevel, LongDataset};
use crate::error::{Error, Result};
use crate::graph::{build_leroux_precision, build_temporal_precision, SpatialGraph, TemporalGraph, RHO_MAX};
use crate::kv::{join, split, KvDoc};
use crate::sampling::{mix_seed, sample_gmrf, standard_normal, RngStream};

/// Rook-adjacency grid; area `r * cols + c` sits in row `r`, column `c`.
pub fn lattice_geography(rows: usize, cols: usize) -> Result<SpatialGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::Graph("lattice needs rows, cols >= 1".into()));
    }
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let a = r * cols + c;
            if c + 1 < cols {
                edges.push((a, a + 1));
            }
            if r + 1 < rows {
                edges.push((a, a + cols));
            }
        }
    }
    SpatialGraph::from_edges(rows * cols, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StudyKind {
    CrossSectional,
    Longitudinal,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::CrossSectional => "cross-sectional",
            StudyKind::Longitudinal => "longitudinal",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "cross-sectional" | "cs" => Ok(StudyKind::CrossSectional),
            "longitudinal" | "long" => Ok(StudyKind::Longitudinal),
            other => Err(Error::Config(format!("unknown study kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioParams {
    CrossSectional { tau_sq: f64, rho: f64 },
    Longitudinal { tau_s_sq: f64, rho_s: f64, tau_t_sq: f64, rho_t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// 1-based row of the grid it came from.
    pub id: usize,
    pub params: ScenarioParams,
    pub label: String,
}

impl Scenario {
    pub fn kind(&self) -> StudyKind {
        match self.params {
            ScenarioParams::CrossSectional { .. } => StudyKind::CrossSectional,
            ScenarioParams::Longitudinal { .. } => StudyKind::Longitudinal,
        }
    }

    pub fn to_kv(&self, prefix: &str) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set(format!("{prefix}kind"), self.kind());
        doc.set(format!("{prefix}id"), self.id);
        doc.set(format!("{prefix}label"), &self.label);
        match self.params {
            ScenarioParams::CrossSectional { tau_sq, rho } => {
                doc.set(format!("{prefix}tau_sq"), tau_sq);
                doc.set(format!("{prefix}rho"), rho);
            }
            ScenarioParams::Longitudinal {
                tau_s_sq,
                rho_s,
                tau_t_sq,
                rho_t,
            } => {
                doc.set(format!("{prefix}tau_s_sq"), tau_s_sq);
                doc.set(format!("{prefix}rho_s"), rho_s);
                doc.set(format!("{prefix}tau_t_sq"), tau_t_sq);
                doc.set(format!("{prefix}rho_t"), rho_t);
            }
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc, prefix: &str) -> Result<Self> {
        let kind: StudyKind = doc.require(&format!("{prefix}kind"))?.parse()?;
        let get = |k: &str| doc.parse_value::<f64>(&format!("{prefix}{k}"));
        let params = match kind {
            StudyKind::CrossSectional => ScenarioParams::CrossSectional {
                tau_sq: get("tau_sq")?,
                rho: get("rho")?,
            },
            StudyKind::Longitudinal => ScenarioParams::Longitudinal {
                tau_s_sq: get("tau_s_sq")?,
                rho_s: get("rho_s")?,
                tau_t_sq: get("tau_t_sq")?,
                rho_t: get("rho_t")?,
            },
        };
        Ok(Self {
            id: doc.parse_value(&format!("{prefix}id"))?,
            params,
            label: doc.get(&format!("{prefix}label")).unwrap_or_default().to_string(),
        })
    }
}

const LONGITUDINAL_ROWS: [(f64, f64, f64, f64, &str); 9] = [
    (0.09, 0.5, 0.8, 0.5, "weak spatial effect, medium spatial heterogeneity and autocorrelation, medium temporal effect"),
    (0.009, 0.9, 3.0, 0.9, "weak spatial effect, mainly spatial autocorrelation, strong temporal effect, mainly temporal autocorrelation"),
    (0.8, 0.5, 3.0, 0.09, "medium spatial effect, medium spatial heterogeneity and autocorrelation, strong temporal effect, mainly temporal heterogeneity"),
    (0.8, 0.5, 0.8, 0.5, "medium spatial effect, medium spatial heterogeneity and autocorrelation, medium temporal effect"),
    (0.8, 0.9, 0.8, 0.9, "medium spatial effect, mainly spatial autocorrelation, medium temporal effect, mainly temporal autocorrelation"),
    (3.0, 0.5, 3.0, 0.09, "strong spatial effect, medium spatial heterogeneity and autocorrelation, strong temporal effect, mainly temporal heterogeneity"),
    (3.0, 0.09, 3.0, 0.9, "strong spatial effect, mainly spatial heterogeneity, strong temporal effect, mainly temporal autocorrelation"),
    (3.0, 0.5, 0.8, 0.5, "strong spatial effect, medium spatial autocorrelation, medium temporal effect"),
    (3.0, 0.9, 3.0, 0.9, "strong spatial effect, mainly spatial autocorrelation, strong temporal effect, mainly temporal autocorrelation"),
];

const CROSS_SECTIONAL_ROWS: [(f64, f64, &str); 9] = [
    (1.0, 0.95, "medium spatial effect, mainly spatial autocorrelation"),
    (1.0, 0.09, "medium spatial effect, mainly spatial heterogeneity"),
    (1.0, 0.6, "medium spatial effect, spatial heterogeneity and autocorrelation"),
    (10.0, 0.09, "strong spatial effect, mainly spatial heterogeneity"),
    (10.0, 0.95, "strong spatial effect, mainly spatial autocorrelation"),
    (10.0, 0.6, "strong spatial effect, spatial heterogeneity and autocorrelation"),
    (0.01, 0.95, "weak spatial effect, mainly spatial autocorrelation"),
    (0.01, 0.09, "weak spatial effect, mainly spatial heterogeneity"),
    (0.01, 0.6, "weak spatial effect, spatial heterogeneity and autocorrelation"),
];

/// The nine published scenarios of each kind.
pub fn scenario_grid(kind: StudyKind) -> Vec<Scenario> {
    match kind {
        StudyKind::Longitudinal => LONGITUDINAL_ROWS
            .iter()
            .enumerate()
            .map(|(i, &(tau_s_sq, rho_s, tau_t_sq, rho_t, label))| Scenario {
                id: i + 1,
                params: ScenarioParams::Longitudinal {
                    tau_s_sq,
                    rho_s,
                    tau_t_sq,
                    rho_t,
                },
                label: label.to_string(),
            })
            .collect(),
        StudyKind::CrossSectional => CROSS_SECTIONAL_ROWS
            .iter()
            .enumerate()
            .map(|(i, &(tau_sq, rho, label))| Scenario {
                id: i + 1,
                params: ScenarioParams::CrossSectional { tau_sq, rho },
                label: label.to_string(),
            })
            .collect(),
    }
}

/// All 3^4 = 81 longitudinal combinations of low/medium/high variance and
/// autocorrelation (the published text counts 243), or the 3^2 = 9
/// cross-sectional combinations.
pub fn full_scenario_grid(kind: StudyKind) -> Vec<Scenario> {
    const LEVELS: [&str; 3] = ["weak", "medium", "strong"];
    const TAU: [f64; 3] = [0.009, 0.8, 3.0];
    const RHO: [f64; 3] = [0.09, 0.5, 0.9];
    const TAU_CS: [f64; 3] = [0.01, 1.0, 10.0];
    const RHO_CS: [f64; 3] = [0.09, 0.6, 0.95];
    let mut out = Vec::new();
    match kind {
        StudyKind::Longitudinal => {
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            out.push(Scenario {
                                id: out.len() + 1,
                                params: ScenarioParams::Longitudinal {
                                    tau_s_sq: TAU[a],
                                    rho_s: RHO[b],
                                    tau_t_sq: TAU[c],
                                    rho_t: RHO[d],
                                },
                                label: format!(
                                    "{} spatial effect (rho_s {}), {} temporal effect (rho_t {})",
                                    LEVELS[a], RHO[b], LEVELS[c], RHO[d]
                                ),
                            });
                        }
                    }
                }
            }
        }
        StudyKind::CrossSectional => {
            for a in 0..3 {
                for b in 0..3 {
                    out.push(Scenario {
                        id: out.len() + 1,
                        params: ScenarioParams::CrossSectional {
                            tau_sq: TAU_CS[a],
                            rho: RHO_CS[b],
                        },
                        label: format!("{} spatial effect (rho {})", LEVELS[a], RHO_CS[b]),
                    });
                }
            }
        }
    }
    out
}

pub fn scenario(kind: StudyKind, id: usize) -> Result<Scenario> {
    scenario_grid(kind)
        .into_iter()
        .find(|s| s.id == id)
        .ok_or(Error::UnknownScenario(id))
}

/// Scenario `id` of the published grid, or of the full grid when `full`.
pub fn grid_scenario(kind: StudyKind, id: usize, full: bool) -> Result<Scenario> {
    if !full {
        return scenario(kind, id);
    }
    full_scenario_grid(kind)
        .into_iter()
        .find(|s| s.id == id)
        .ok_or(Error::UnknownScenario(id))
}

/// Draws `psi_tj = Phi_t[j] + Delta[t]` with independent Leroux fields
/// `Phi_t ~ N(0, tau_s_sq Q(rho_s)^-1)` and one temporal field
/// `Delta ~ N(0, tau_t_sq Q_D(rho_t)^-1)`. Returned row-major by period.
pub fn simulate_spatiotemporal_effect<R: Rng + ?Sized>(
    graph: &SpatialGraph,
    num_periods: usize,
    tau_s_sq: f64,
    rho_s: f64,
    tau_t_sq: f64,
    rho_t: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = graph.num_areas();
    let qs = build_leroux_precision(graph, rho_s, tau_s_sq)?;
    let qt = build_temporal_precision(&TemporalGraph::new(num_periods)?, rho_t, tau_t_sq)?;
    let mut psi = Vec::with_capacity(num_periods * k);
    for _ in 0..num_periods {
        psi.extend(sample_gmrf(rng, &qs, &vec![0.0; k])?);
    }
    let delta = sample_gmrf(rng, &qt, &vec![0.0; num_periods])?;
    for (t, d) in delta.iter().enumerate() {
        for v in &mut psi[t * k..(t + 1) * k] {
            *v += d;
        }
    }
    Ok(psi)
}

/// `psi ~ N(0, tau_sq Q(rho)^-1)`.
pub fn simulate_spatial_effect<R: Rng + ?Sized>(
    graph: &SpatialGraph,
    tau_sq: f64,
    rho: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let q = build_leroux_precision(graph, rho, tau_sq)?;
    sample_gmrf(rng, &q, &vec![0.0; graph.num_areas()])
}

/// Sizes and non-published truths of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_per_area: usize,
    pub num_periods: usize,
    /// Coefficients in design order: intercept, covariates, then time for
    /// longitudinal data.
    pub beta_true: Vec<f64>,
    pub sigma_e_sq: f64,
    /// Individual random intercept variance, intercept-slope covariance and
    /// slope variance.
    pub sigma_r0: f64,
    pub sigma_r01: f64,
    pub sigma_r1: f64,
}

/// Coefficient names of simulated longitudinal data.
pub const LONGITUDINAL_COEFFICIENTS: [&str; 5] = ["intercept", "x1", "x2", "x3", "time"];
/// Coefficient names of simulated cross-sectional data.
pub const CROSS_SECTIONAL_COEFFICIENTS: [&str; 3] = ["intercept", "x1", "x2"];

impl SimulationConfig {
    /// x1 and x2 individual-level (x1 time-varying), x3 area-level and
    /// time-varying, time trend g(t) = t.
    pub fn longitudinal() -> Self {
        Self {
            n_per_area: 5,
            num_periods: 5,
            beta_true: vec![1.0, -1.72, 0.5, 0.39, -0.1],
            sigma_e_sq: 1.0,
            sigma_r0: 0.5,
            sigma_r01: 0.0,
            sigma_r1: 0.1,
        }
    }

    /// x1 individual-level, x2 area-level.
    pub fn cross_sectional() -> Self {
        Self {
            n_per_area: 5,
            num_periods: 1,
            beta_true: vec![1.0, -1.5, 0.14],
            sigma_e_sq: 1.0,
            sigma_r0: 0.0,
            sigma_r01: 0.0,
            sigma_r1: 0.0,
        }
    }

    pub fn for_kind(kind: StudyKind) -> Self {
        match kind {
            StudyKind::CrossSectional => Self::cross_sectional(),
            StudyKind::Longitudinal => Self::longitudinal(),
        }
    }

    pub fn validate(&self, kind: StudyKind) -> Result<()> {
        let expected = match kind {
            StudyKind::CrossSectional => CROSS_SECTIONAL_COEFFICIENTS.len(),
            StudyKind::Longitudinal => LONGITUDINAL_COEFFICIENTS.len(),
        };
        if self.beta_true.len() != expected {
            return Err(Error::Config(format!(
                "{kind} simulation needs {expected} coefficients, got {}",
                self.beta_true.len()
            )));
        }
        if self.n_per_area == 0 {
            return Err(Error::Config("n_per_area must be >= 1".into()));
        }
        match kind {
            StudyKind::CrossSectional if self.num_periods != 1 => {
                return Err(Error::Config("cross-sectional data has one period".into()))
            }
            StudyKind::Longitudinal if self.num_periods < 2 => {
                return Err(Error::Config("longitudinal data needs at least 2 periods".into()))
            }
            _ => {}
        }
        let ok = self.sigma_e_sq >= 0.0
            && self.sigma_r0 >= 0.0
            && self.sigma_r1 >= 0.0
            && self.sigma_r01 * self.sigma_r01 <= self.sigma_r0 * self.sigma_r1;
        if !ok {
            return Err(Error::Config("simulation variances must form a PSD covariance".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("sim.n_per_area", self.n_per_area);
        doc.set("sim.num_periods", self.num_periods);
        doc.set("sim.beta_true", join(&self.beta_true));
        doc.set("sim.sigma_e_sq", self.sigma_e_sq);
        doc.set("sim.sigma_r0", self.sigma_r0);
        doc.set("sim.sigma_r01", self.sigma_r01);
        doc.set("sim.sigma_r1", self.sigma_r1);
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        Ok(Self {
            n_per_area: doc.parse_value("sim.n_per_area")?,
            num_periods: doc.parse_value("sim.num_periods")?,
            beta_true: split(doc.require("sim.beta_true")?)?,
            sigma_e_sq: doc.parse_value("sim.sigma_e_sq")?,
            sigma_r0: doc.parse_value("sim.sigma_r0")?,
            sigma_r01: doc.parse_value("sim.sigma_r01")?,
            sigma_r1: doc.parse_value("sim.sigma_r1")?,
        })
    }
}

/// Generating truth recorded next to a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub scenario: Scenario,
    pub config: SimulationConfig,
    pub coefficient_names: Vec<String>,
    pub design_seed: u64,
    pub effect_seed: u64,
}

impl Truth {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.config.beta_true[i])
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = self.scenario.to_kv("truth.scenario.");
        for (k, v) in self.config.to_kv().iter() {
            doc.set(format!("truth.{k}"), v);
        }
        for (name, b) in self.coefficient_names.iter().zip(&self.config.beta_true) {
            doc.set(format!("truth.beta.{name}"), b);
        }
        doc.set("truth.design_seed", self.design_seed);
        doc.set("truth.effect_seed", self.effect_seed);
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        if doc.get("truth.design_seed").is_none() {
            return Err(Error::Config("no truth metadata".into()));
        }
        let mut inner = KvDoc::new();
        for (k, v) in doc.with_prefix("truth.") {
            inner.set(k, v);
        }
        let config = SimulationConfig::from_kv(&inner)?;
        let scenario = Scenario::from_kv(&inner, "scenario.")?;
        let names: Vec<String> = match scenario.kind() {
            StudyKind::CrossSectional => CROSS_SECTIONAL_COEFFICIENTS.iter().map(|s| s.to_string()).collect(),
            StudyKind::Longitudinal => LONGITUDINAL_COEFFICIENTS.iter().map(|s| s.to_string()).collect(),
        };
        Ok(Self {
            scenario,
            config,
            coefficient_names: names,
            design_seed: inner.parse_value("design_seed")?,
            effect_seed: inner.parse_value("effect_seed")?,
        })
    }
}

fn individual_effects<R: Rng + ?Sized>(rng: &mut R, cfg: &SimulationConfig) -> (f64, f64) {
    let z0 = standard_normal(rng);
    let z1 = standard_normal(rng);
    let s0 = cfg.sigma_r0.sqrt();
    let r0 = s0 * z0;
    let r1 = if s0 > 0.0 {
        let c = cfg.sigma_r01 / s0;
        c * z0 + (cfg.sigma_r1 - c * c).max(0.0).sqrt() * z1
    } else {
        cfg.sigma_r1.sqrt() * z1
    };
    (r0, r1)
}

/// Longitudinal dataset: `y_tij = X_tij beta + psi_tj + r0_ij + r1_ij t + e_tij`
/// with `t` the 1-based period. Individual `i` of area `j` gets id
/// `j * n_per_area + i`.
pub fn simulate_longitudinal<R: Rng + ?Sized, S: Rng + ?Sized>(
    graph: &SpatialGraph,
    scenario: &Scenario,
    cfg: &SimulationConfig,
    design_rng: &mut R,
    effect_rng: &mut S,
) -> Result<LongDataset> {
    cfg.validate(StudyKind::Longitudinal)?;
    let ScenarioParams::Longitudinal {
        tau_s_sq,
        rho_s,
        tau_t_sq,
        rho_t,
    } = scenario.params
    else {
        return Err(Error::Config("longitudinal simulation needs a longitudinal scenario".into()));
    };
    let k = graph.num_areas();
    let n_t = cfg.num_periods;
    let m = cfg.n_per_area;
    let n_ind = k * m;

    // design stream: fixed draw order independent of the scenario
    let x2: Vec<f64> = (0..n_ind).map(|_| standard_normal(design_rng)).collect();
    let r: Vec<(f64, f64)> = (0..n_ind).map(|_| individual_effects(design_rng, cfg)).collect();
    let x3: Vec<f64> = (0..n_t * k).map(|_| standard_normal(design_rng)).collect();
    let n_obs = n_t * n_ind;
    let x1: Vec<f64> = (0..n_obs).map(|_| standard_normal(design_rng)).collect();
    let e: Vec<f64> = (0..n_obs).map(|_| standard_normal(design_rng)).collect();

    let psi = simulate_spatiotemporal_effect(
        graph,
        n_t,
        tau_s_sq,
        rho_s.min(RHO_MAX),
        tau_t_sq,
        rho_t.min(RHO_MAX),
        effect_rng,
    )?;

    let b = &cfg.beta_true;
    let sd_e = cfg.sigma_e_sq.sqrt();
    let mut period = Vec::with_capacity(n_obs);
    let mut individual = Vec::with_capacity(n_obs);
    let mut area = Vec::with_capacity(n_obs);
    let mut y = Vec::with_capacity(n_obs);
    let mut c1 = Vec::with_capacity(n_obs);
    let mut c2 = Vec::with_capacity(n_obs);
    let mut c3 = Vec::with_capacity(n_obs);
    let mut o = 0;
    for t in 0..n_t {
        let g = (t + 1) as f64;
        for j in 0..k {
            for q in 0..m {
                let i = j * m + q;
                let (r0, r1) = r[i];
                let v3 = x3[t * k + j];
                let mean = b[0] + b[1] * x1[o] + b[2] * x2[i] + b[3] * v3 + b[4] * g;
                y.push(mean + psi[t * k + j] + r0 + r1 * g + sd_e * e[o]);
                period.push(t);
                individual.push(i);
                area.push(j);
                c1.push(x1[o]);
                c2.push(x2[i]);
                c3.push(v3);
                o += 1;
            }
        }
    }
    let covariates = vec![
        Covariate {
            name: "x1".into(),
            level: CovariateLevel::Individual,
            time_varying: true,
            values: c1,
        },
        Covariate {
            name: "x2".into(),
            level: CovariateLevel::Individual,
            time_varying: false,
            values: c2,
        },
        Covariate {
            name: "x3".into(),
            level: CovariateLevel::Area,
            time_varying: true,
            values: c3,
        },
    ];
    LongDataset::new(
        k,
        n_t,
        (0..n_ind as u64).collect(),
        period,
        individual,
        area,
        y,
        covariates,
    )
}

/// Cross-sectional dataset: `y_ij = X_ij beta + psi_j + e_ij`.
pub fn simulate_cross_sectional<R: Rng + ?Sized, S: Rng + ?Sized>(
    graph: &SpatialGraph,
    scenario: &Scenario,
    cfg: &SimulationConfig,
    design_rng: &mut R,
    effect_rng: &mut S,
) -> Result<LongDataset> {
    cfg.validate(StudyKind::CrossSectional)?;
    let ScenarioParams::CrossSectional { tau_sq, rho } = scenario.params else {
        return Err(Error::Config("cross-sectional simulation needs a cross-sectional scenario".into()));
    };
    let k = graph.num_areas();
    let m = cfg.n_per_area;
    let n = k * m;
    let x2: Vec<f64> = (0..k).map(|_| standard_normal(design_rng)).collect();
    let x1: Vec<f64> = (0..n).map(|_| standard_normal(design_rng)).collect();
    let e: Vec<f64> = (0..n).map(|_| standard_normal(design_rng)).collect();
    let psi = simulate_spatial_effect(graph, tau_sq, rho.min(RHO_MAX), effect_rng)?;

    let b = &cfg.beta_true;
    let sd_e = cfg.sigma_e_sq.sqrt();
    let mut area = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for j in 0..k {
        for q in 0..m {
            let o = j * m + q;
            y.push(b[0] + b[1] * x1[o] + b[2] * x2[j] + psi[j] + sd_e * e[o]);
            area.push(j);
            c2.push(x2[j]);
        }
    }
    let covariates = vec![
        Covariate {
            name: "x1".into(),
            level: CovariateLevel::Individual,
            time_varying: false,
            values: x1,
        },
        Covariate {
            name: "x2".into(),
            level: CovariateLevel::Area,
            time_varying: false,
            values: c2,
        },
    ];
    LongDataset::new(k, 1, (0..n as u64).collect(), vec![0; n], (0..n).collect(), area, y, covariates)
}

/// Seeds of replicate `replicate` of `scenario_id` in a study seeded `seed`:
/// `(design_seed, effect_seed)`.
pub fn replicate_seeds(seed: u64, scenario_id: usize, replicate: usize) -> (u64, u64) {
    let design = mix_seed(seed, scenario_id as u64);
    (design, mix_seed(design, 1 + replicate as u64))
}

/// Simulates one replicate: the design stream is stream 0 of `design_seed`,
/// the effect stream is stream 1 of `effect_seed`.
pub fn simulate_replicate(
    graph: &SpatialGraph,
    scenario: &Scenario,
    cfg: &SimulationConfig,
    design_seed: u64,
    effect_seed: u64,
) -> Result<(LongDataset, Truth)> {
    let mut design_rng = RngStream::new(design_seed, 0);
    let mut effect_rng = RngStream::new(effect_seed, 1);
    let (data, names): (LongDataset, &[&str]) = match scenario.kind() {
        StudyKind::CrossSectional => (
            simulate_cross_sectional(graph, scenario, cfg, &mut design_rng, &mut effect_rng)?,
            &CROSS_SECTIONAL_COEFFICIENTS,
        ),
        StudyKind::Longitudinal => (
            simulate_longitudinal(graph, scenario, cfg, &mut design_rng, &mut effect_rng)?,
            &LONGITUDINAL_COEFFICIENTS,
        ),
    };
    let truth = Truth {
        scenario: scenario.clone(),
        config: cfg.clone(),
        coefficient_names: names.iter().map(|s| s.to_string()).collect(),
        design_seed,
        effect_seed,
    };
    Ok((data, truth))
}

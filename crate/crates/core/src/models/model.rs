use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{CovariateLevel, LongDataset};
use crate::error::{Error, Result};
use crate::graph::{leroux_conditional, Neighborhood, SpatialGraph, TemporalGraph};
use crate::sampling::{
    sample_bivariate_canonical, sample_dense_canonical, sample_inverse_gamma, sample_inverse_wishart, sample_normal,
    sample_uniform, slice_sample, slice_sample_with_width,
};

use super::{
    AreaSite, AreaState, Design, Family, GaussianConditional, IndividualState,
    InverseGammaConditional, LerouxLogDet, ModelSpec, ModelState, NormalConditional,
    RestrictionMatrix, RhoParam, VarianceParam,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Scale moves and the collapsed variance draw work on `(-bound, bound)`
/// in log scale.
const SCALE_LOG_BOUND: f64 = 20.0;
const SCALE_SLICE_WIDTH: f64 = 0.2;
const COVARIANCE_SLICE_WIDTH: f64 = 0.5;

/// A model family bound to a dataset and graph: everything immutable a
/// chain needs. Shared read-only between chains.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    design: Design,
    y: Vec<f64>,
    /// `t * K + j` per observation.
    cell: Vec<usize>,
    individual: Vec<usize>,
    period: Vec<usize>,
    num_areas: usize,
    num_periods: usize,
    g: Vec<f64>,
    counts: Vec<f64>,
    /// Design column sums per period, `p x T`.
    period_xsum: DMatrix<f64>,
    individual_obs: Vec<Vec<usize>>,
    individual_ids: Vec<u64>,
    /// Individuals per area when every individual stays in one area.
    area_individuals: Option<Vec<Vec<usize>>>,
    graph: SpatialGraph,
    tgraph: TemporalGraph,
    spatial_logdet: Option<LerouxLogDet>,
    temporal_logdet: Option<LerouxLogDet>,
    restriction: Option<RestrictionMatrix>,
    /// CONV: connected components with at least two areas.
    components: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

const FIXABLE: [&str; 10] = [
    "sigma_e_sq",
    "tau_sq",
    "rho",
    "tau_s_sq",
    "tau_t_sq",
    "rho_s",
    "rho_t",
    "sigma_omega_sq",
    "sigma_u0_sq",
    "sigma_u1_sq",
];

impl Model {
    pub fn new(spec: ModelSpec, data: &LongDataset, graph: &SpatialGraph) -> Result<Self> {
        spec.priors.validate()?;
        let family = spec.family;
        if data.num_areas() != graph.num_areas() {
            return Err(Error::Mismatch(format!(
                "data has K = {} areas, graph has {}",
                data.num_areas(),
                graph.num_areas()
            )));
        }
        let n_t = data.num_periods();
        if family.is_longitudinal() && n_t < 2 {
            return Err(Error::Mismatch(format!(
                "{} needs longitudinal data with at least 2 periods, got {n_t}",
                family.label()
            )));
        }
        if !family.is_longitudinal() && n_t != 1 {
            return Err(Error::Mismatch(format!(
                "{} needs single-period data, got {n_t} periods",
                family.label()
            )));
        }
        if let super::TimeTrend::Values(v) = &spec.time_trend {
            if v.len() < n_t || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("time trend needs a finite value per period".into()));
            }
        }
        for (name, value) in &spec.fixed {
            if !FIXABLE.contains(&name.as_str()) {
                return Err(Error::Config(format!("parameter `{name}` cannot be fixed")));
            }
            let ok = if name.starts_with("rho") {
                (spec.priors.rho_bounds.0..=spec.priors.rho_bounds.1).contains(value)
            } else {
                *value > 0.0
            };
            if !ok {
                return Err(Error::Config(format!("fixed value {value} invalid for `{name}`")));
            }
        }

        let design = Design::build(data, family.is_longitudinal().then_some(&spec.time_trend));
        design.check_rank()?;
        let k = graph.num_areas();
        let cell: Vec<usize> = data
            .periods()
            .iter()
            .zip(data.areas())
            .map(|(&t, &j)| t * k + j)
            .collect();
        let mut counts = vec![0.0; n_t * k];
        for &c in &cell {
            counts[c] += 1.0;
        }
        let mut period_xsum = DMatrix::zeros(design.num_columns(), n_t);
        for (o, &c) in cell.iter().enumerate() {
            for (a, x) in design.row(o).iter().enumerate() {
                period_xsum[(a, c / k)] += x;
            }
        }
        let mut individual_obs = vec![Vec::new(); data.num_individuals()];
        for (o, &i) in data.individuals().iter().enumerate() {
            individual_obs[i].push(o);
        }
        let mut area_individuals = Some(vec![Vec::new(); k]);
        for (i, obs) in individual_obs.iter().enumerate() {
            let area = obs.first().map(|&o| cell[o] % k);
            match (area, &mut area_individuals) {
                (Some(a), Some(groups)) if obs.iter().all(|&o| cell[o] % k == a) => groups[a].push(i),
                _ => area_individuals = None,
            }
        }
        let tgraph = TemporalGraph::new(n_t)?;
        let g = (0..n_t).map(|t| spec.time_trend.eval(t)).collect();

        let spatial_logdet = matches!(family, Family::Car | Family::Rcar | Family::CarAnova)
            .then(|| LerouxLogDet::new(graph));
        let temporal_logdet = (family == Family::CarAnova).then(|| LerouxLogDet::new(&tgraph.to_spatial_graph()));

        let restriction = if family == Family::Rcar {
            Some(build_restriction(data, &design, k)?)
        } else {
            None
        };

        let mut warnings = Vec::new();
        let mut components = Vec::new();
        if family == Family::Conv {
            for j in graph.isolated_areas() {
                warnings.push(format!(
                    "area {} isolated: intrinsic CAR conditional replaced by N(0, tau_sq_t)",
                    j + 1
                ));
            }
            let labels = graph.components();
            let n_comp = labels.iter().max().map_or(0, |m| m + 1);
            let mut groups = vec![Vec::new(); n_comp];
            for (j, &c) in labels.iter().enumerate() {
                groups[c].push(j);
            }
            components = groups.into_iter().filter(|c| c.len() > 1).collect();
        }

        Ok(Self {
            spec,
            design,
            y: data.y().to_vec(),
            cell,
            individual: data.individuals().to_vec(),
            period: data.periods().to_vec(),
            num_areas: k,
            num_periods: n_t,
            g,
            counts,
            period_xsum,
            individual_obs,
            individual_ids: data.individual_ids().to_vec(),
            area_individuals,
            graph: graph.clone(),
            tgraph,
            spatial_logdet,
            temporal_logdet,
            restriction,
            components,
            warnings,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    pub fn num_observations(&self) -> usize {
        self.y.len()
    }

    pub fn num_individuals(&self) -> usize {
        self.individual_obs.len()
    }

    pub fn restriction(&self) -> Option<&RestrictionMatrix> {
        self.restriction.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn has_individual_effects(&self) -> bool {
        self.spec.family.is_longitudinal()
    }

    fn fixed(&self, name: &str) -> Option<f64> {
        self.spec.fixed_value(name)
    }

    // ---------------------------------------------------------------- state

    /// Least-squares coefficients, zero effects, unit variances and
    /// autocorrelations of 0.5. `overdispersed` jitters each coefficient
    /// uniformly within two prior standard deviations.
    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R, overdispersed: bool) -> Result<ModelState> {
        let mut beta = self.design.least_squares(&self.y)?;
        if overdispersed {
            let sd = self.spec.priors.beta_prior_sd;
            for b in &mut beta {
                *b += sample_uniform(rng, -2.0 * sd, 2.0 * sd)?;
            }
        }
        let k = self.num_areas;
        let nk = self.num_periods * k;
        let n_t = self.num_periods;
        let f = |name: &str, default: f64| self.fixed(name).unwrap_or(default);
        let area = match self.spec.family {
            Family::Cl2 => AreaState::Leroux {
                psi: vec![0.0; k],
                tau_sq: f("tau_sq", 1.0),
                rho: 0.0,
            },
            Family::Car | Family::Rcar => AreaState::Leroux {
                psi: vec![0.0; k],
                tau_sq: f("tau_sq", 1.0),
                rho: f("rho", 0.5),
            },
            Family::CarAnova => AreaState::CarAnova {
                phi: vec![0.0; k],
                delta: vec![0.0; n_t],
                omega: vec![0.0; nk],
                tau_s_sq: f("tau_s_sq", 1.0),
                tau_t_sq: f("tau_t_sq", 1.0),
                sigma_omega_sq: f("sigma_omega_sq", 1.0),
                rho_s: f("rho_s", 0.5),
                rho_t: f("rho_t", 0.5),
            },
            Family::Conv => AreaState::Conv {
                phi: vec![0.0; nk],
                omega: vec![0.0; nk],
                tau_sq_t: vec![1.0; n_t],
                sigma_omega_sq_t: vec![1.0; n_t],
            },
            Family::Cl3 => AreaState::Growth {
                u0: vec![0.0; k],
                u1: vec![0.0; k],
                sigma_u0_sq: f("sigma_u0_sq", 1.0),
                sigma_u1_sq: f("sigma_u1_sq", 1.0),
            },
        };
        let individual = self.has_individual_effects().then(|| IndividualState {
            r0: vec![0.0; self.num_individuals()],
            r1: vec![0.0; self.num_individuals()],
            cov: [1.0, 0.0, 1.0],
        });
        Ok(ModelState {
            beta,
            sigma_e_sq: f("sigma_e_sq", 1.0),
            area,
            individual,
        })
    }

    /// Checks dimensions, positivity, bounds and the centering and
    /// orthogonality constraints, with absolute tolerance `tol`.
    pub fn check_state(&self, state: &ModelState, tol: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Numerical(m));
        let k = self.num_areas;
        let nk = self.num_periods * k;
        if state.beta.len() != self.design.num_columns() {
            return bad("beta has the wrong length".into());
        }
        if !(state.sigma_e_sq > 0.0) {
            return bad("sigma_e_sq not positive".into());
        }
        let (lo, hi) = self.spec.priors.rho_bounds;
        let rho_ok = |r: f64| (lo..=hi).contains(&r);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        match &state.area {
            AreaState::Leroux { psi, tau_sq, rho } => {
                if psi.len() != k || !(*tau_sq > 0.0) || !rho_ok(*rho) {
                    return bad("Leroux state invalid".into());
                }
                if let Some(r) = &self.restriction {
                    let m = r.max_abs_zt(psi);
                    if m > tol {
                        return bad(format!("RCAR effects not orthogonal to Z: {m}"));
                    }
                }
            }
            AreaState::CarAnova {
                phi,
                delta,
                omega,
                tau_s_sq,
                tau_t_sq,
                sigma_omega_sq,
                rho_s,
                rho_t,
            } => {
                if phi.len() != k || delta.len() != self.num_periods || omega.len() != nk {
                    return bad("CAR ANOVA dimensions".into());
                }
                if !(*tau_s_sq > 0.0 && *tau_t_sq > 0.0 && *sigma_omega_sq > 0.0) {
                    return bad("CAR ANOVA variance not positive".into());
                }
                if !rho_ok(*rho_s) || !rho_ok(*rho_t) {
                    return bad("CAR ANOVA rho out of bounds".into());
                }
                if mean(phi).abs() > tol || mean(delta).abs() > tol {
                    return bad("CAR ANOVA phi/delta not centred".into());
                }
                if omega.chunks(k).any(|row| mean(row).abs() > tol) {
                    return bad("CAR ANOVA omega rows not centred".into());
                }
            }
            AreaState::Conv {
                phi,
                omega,
                tau_sq_t,
                sigma_omega_sq_t,
            } => {
                if phi.len() != nk || omega.len() != nk {
                    return bad("CONV dimensions".into());
                }
                if tau_sq_t.iter().chain(sigma_omega_sq_t).any(|v| !(*v > 0.0)) {
                    return bad("CONV variance not positive".into());
                }
                for t in 0..self.num_periods {
                    for comp in &self.components {
                        let m = comp.iter().map(|&j| phi[t * k + j]).sum::<f64>() / comp.len() as f64;
                        if m.abs() > tol {
                            return bad(format!("CONV phi not centred in period {}", t + 1));
                        }
                    }
                }
            }
            AreaState::Growth {
                u0,
                u1,
                sigma_u0_sq,
                sigma_u1_sq,
            } => {
                if u0.len() != k || u1.len() != k || !(*sigma_u0_sq > 0.0 && *sigma_u1_sq > 0.0) {
                    return bad("growth state invalid".into());
                }
            }
        }
        match (&state.individual, self.has_individual_effects()) {
            (Some(ind), true) => {
                let [a, b, c] = ind.cov;
                if !(a > 0.0 && c > 0.0 && a * c - b * b > 0.0) {
                    return bad("individual covariance not positive definite".into());
                }
                if ind.r0.len() != self.num_individuals() || ind.r1.len() != self.num_individuals() {
                    return bad("individual effects dimensions".into());
                }
            }
            (None, false) => {}
            _ => return bad("individual effects present for the wrong family".into()),
        }
        Ok(())
    }

    /// Total area effect per `(t, j)` cell, row-major by period.
    pub fn cell_effects(&self, state: &ModelState) -> Vec<f64> {
        let k = self.num_areas;
        let n_t = self.num_periods;
        match &state.area {
            AreaState::Leroux { psi, .. } => psi.clone(),
            AreaState::CarAnova {
                phi, delta, omega, ..
            } => (0..n_t * k)
                .map(|c| phi[c % k] + delta[c / k] + omega[c])
                .collect(),
            AreaState::Conv { phi, omega, .. } => phi.iter().zip(omega).map(|(a, b)| a + b).collect(),
            AreaState::Growth { u0, u1, .. } => (0..n_t * k)
                .map(|c| u0[c % k] + self.g[c / k] * u1[c % k])
                .collect(),
        }
    }

    fn individual_part(&self, state: &ModelState, o: usize) -> f64 {
        match &state.individual {
            Some(ind) => {
                let i = self.individual[o];
                ind.r0[i] + self.g[self.period[o]] * ind.r1[i]
            }
            None => 0.0,
        }
    }

    /// `y - X beta - individual part`, per observation.
    fn base_residuals(&self, state: &ModelState) -> Vec<f64> {
        let xb = self.design.xb(&state.beta);
        (0..self.y.len())
            .map(|o| self.y[o] - xb[o] - self.individual_part(state, o))
            .collect()
    }

    fn cell_sums(&self, base: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.num_periods * self.num_areas];
        for (o, r) in base.iter().enumerate() {
            s[self.cell[o]] += r;
        }
        s
    }

    /// Full residuals `y - fitted`.
    pub fn residuals(&self, state: &ModelState) -> Vec<f64> {
        let cells = self.cell_effects(state);
        let mut r = self.base_residuals(state);
        for (o, v) in r.iter_mut().enumerate() {
            *v -= cells[self.cell[o]];
        }
        r
    }

    pub fn log_likelihood(&self, state: &ModelState) -> f64 {
        gaussian_log_likelihood(&self.residuals(state), state.sigma_e_sq)
    }

    pub fn deviance(&self, state: &ModelState) -> f64 {
        -2.0 * self.log_likelihood(state)
    }

    // --------------------------------------------------------- conditionals

    pub fn fixed_effects_conditional(&self, state: &ModelState) -> GaussianConditional {
        let cells = self.cell_effects(state);
        let r: Vec<f64> = (0..self.y.len())
            .map(|o| self.y[o] - cells[self.cell[o]] - self.individual_part(state, o))
            .collect();
        let s2 = state.sigma_e_sq;
        let prior_prec = 1.0 / self.spec.priors.beta_prior_sd.powi(2);
        let p = self.design.num_columns();
        let precision = self.design.xtx() / s2 + DMatrix::identity(p, p) * prior_prec;
        GaussianConditional {
            precision,
            linear: self.design.xt_vec(&r) / s2,
        }
    }

    /// Full conditional of one scalar area-level site.
    pub fn area_site_conditional(&self, state: &ModelState, site: AreaSite) -> Result<NormalConditional> {
        let sums = self.cell_sums(&self.base_residuals(state));
        self.site_conditional(state, &sums, site)
    }

    fn site_conditional(&self, state: &ModelState, sums: &[f64], site: AreaSite) -> Result<NormalConditional> {
        let k = self.num_areas;
        let n_t = self.num_periods;
        let s2 = state.sigma_e_sq;
        let wrong = || Error::InvalidParameter(format!("site {site:?} does not belong to {}", self.spec.family.label()));
        match (&state.area, site) {
            (AreaState::Leroux { psi, tau_sq, rho }, AreaSite::Psi(j)) => {
                let (m, v) = leroux_conditional(&self.graph, psi, j, *rho, *tau_sq);
                Ok(NormalConditional::posterior(m, v, sums[j], self.counts[j], s2))
            }
            (
                AreaState::CarAnova {
                    phi,
                    delta,
                    omega,
                    tau_s_sq,
                    rho_s,
                    ..
                },
                AreaSite::Phi(j),
            ) => {
                let (m, v) = leroux_conditional(&self.graph, phi, j, *rho_s, *tau_s_sq);
                let (mut s, mut c) = (0.0, 0.0);
                for t in 0..n_t {
                    let cell = t * k + j;
                    s += sums[cell] - self.counts[cell] * (delta[t] + omega[cell]);
                    c += self.counts[cell];
                }
                Ok(NormalConditional::posterior(m, v, s, c, s2))
            }
            (
                AreaState::CarAnova {
                    phi,
                    delta,
                    omega,
                    tau_t_sq,
                    rho_t,
                    ..
                },
                AreaSite::Delta(t),
            ) => {
                let (m, v) = leroux_conditional(&self.tgraph, delta, t, *rho_t, *tau_t_sq);
                let (mut s, mut c) = (0.0, 0.0);
                for j in 0..k {
                    let cell = t * k + j;
                    s += sums[cell] - self.counts[cell] * (phi[j] + omega[cell]);
                    c += self.counts[cell];
                }
                Ok(NormalConditional::posterior(m, v, s, c, s2))
            }
            (
                AreaState::CarAnova {
                    phi,
                    delta,
                    sigma_omega_sq,
                    ..
                },
                AreaSite::Omega { t, j },
            ) => {
                let cell = t * k + j;
                let s = sums[cell] - self.counts[cell] * (phi[j] + delta[t]);
                Ok(NormalConditional::posterior(0.0, *sigma_omega_sq, s, self.counts[cell], s2))
            }
            (
                AreaState::Conv {
                    phi, omega, tau_sq_t, ..
                },
                AreaSite::PhiT { t, j },
            ) => {
                let cell = t * k + j;
                let deg = self.graph.degree(j);
                let (m, v) = if deg == 0 {
                    (0.0, tau_sq_t[t])
                } else {
                    let row = &phi[t * k..(t + 1) * k];
                    (self.graph.neighbor_sum(j, row) / deg as f64, tau_sq_t[t] / deg as f64)
                };
                let s = sums[cell] - self.counts[cell] * omega[cell];
                Ok(NormalConditional::posterior(m, v, s, self.counts[cell], s2))
            }
            (
                AreaState::Conv {
                    phi,
                    sigma_omega_sq_t,
                    ..
                },
                AreaSite::OmegaT { t, j },
            ) => {
                let cell = t * k + j;
                let s = sums[cell] - self.counts[cell] * phi[cell];
                Ok(NormalConditional::posterior(0.0, sigma_omega_sq_t[t], s, self.counts[cell], s2))
            }
            _ => Err(wrong()),
        }
    }

    /// CAR ANOVA: joint full conditional of `(beta, delta)`, fixed effects
    /// first. The temporal field can absorb the time trend and intercept, so
    /// the sweep draws both as one block.
    pub fn fixed_temporal_conditional(&self, state: &ModelState) -> Result<GaussianConditional> {
        let AreaState::CarAnova {
            phi,
            omega,
            tau_t_sq,
            rho_t,
            ..
        } = &state.area
        else {
            return Err(Error::InvalidParameter("fixed-temporal block needs a CAR ANOVA state".into()));
        };
        let k = self.num_areas;
        let n_t = self.num_periods;
        let p = self.design.num_columns();
        let s2 = state.sigma_e_sq;
        let r: Vec<f64> = (0..self.y.len())
            .map(|o| {
                let c = self.cell[o];
                self.y[o] - phi[c % k] - omega[c] - self.individual_part(state, o)
            })
            .collect();
        let prior_prec = 1.0 / self.spec.priors.beta_prior_sd.powi(2);
        let mut precision = DMatrix::zeros(p + n_t, p + n_t);
        precision
            .view_mut((0, 0), (p, p))
            .copy_from(&(self.design.xtx() / s2 + DMatrix::identity(p, p) * prior_prec));
        let mut linear = DVector::zeros(p + n_t);
        linear.rows_mut(0, p).copy_from(&(self.design.xt_vec(&r) / s2));
        for (o, v) in r.iter().enumerate() {
            linear[p + self.cell[o] / k] += v / s2;
        }
        for t in 0..n_t {
            for a in 0..p {
                let v = self.period_xsum[(a, t)] / s2;
                precision[(a, p + t)] = v;
                precision[(p + t, a)] = v;
            }
            let n: f64 = self.counts[t * k..(t + 1) * k].iter().sum();
            let q = rho_t * self.tgraph.degree(t) as f64 + 1.0 - rho_t;
            precision[(p + t, p + t)] = n / s2 + q / tau_t_sq;
        }
        self.tgraph.for_each_edge(|a, b| {
            precision[(p + a, p + b)] -= rho_t / tau_t_sq;
            precision[(p + b, p + a)] -= rho_t / tau_t_sq;
        });
        Ok(GaussianConditional { precision, linear })
    }

    /// CONV: joint full conditional of `(phi_tj, omega_tj)`, which enter the
    /// likelihood only through their sum.
    pub fn cell_pair_conditional(&self, state: &ModelState, t: usize, j: usize) -> Result<GaussianConditional> {
        let sums = self.cell_sums(&self.base_residuals(state));
        Ok(self.cell_pair_conditional_with(state, &sums, t, j)?.conditional())
    }

    fn cell_pair_conditional_with(
        &self,
        state: &ModelState,
        sums: &[f64],
        t: usize,
        j: usize,
    ) -> Result<Pair> {
        let AreaState::Conv {
            phi,
            tau_sq_t,
            sigma_omega_sq_t,
            ..
        } = &state.area
        else {
            return Err(Error::InvalidParameter("cell pair needs a CONV state".into()));
        };
        let k = self.num_areas;
        let cell = t * k + j;
        let deg = self.graph.degree(j);
        let (m, v) = if deg == 0 {
            (0.0, tau_sq_t[t])
        } else {
            let row = &phi[t * k..(t + 1) * k];
            (self.graph.neighbor_sum(j, row) / deg as f64, tau_sq_t[t] / deg as f64)
        };
        let s2 = state.sigma_e_sq;
        let n = self.counts[cell] / s2;
        let b = sums[cell] / s2;
        Ok(Pair {
            p: [1.0 / v + n, n, 1.0 / sigma_omega_sq_t[t] + n],
            b: [m / v + b, b],
        })
    }

    /// Full conditional of the growth pair `(u0_j, u1_j)`.
    pub fn growth_conditional(&self, state: &ModelState, j: usize) -> Result<GaussianConditional> {
        let sums = self.cell_sums(&self.base_residuals(state));
        Ok(self.growth_conditional_with(state, &sums, j)?.conditional())
    }

    fn growth_conditional_with(&self, state: &ModelState, sums: &[f64], j: usize) -> Result<Pair> {
        let AreaState::Growth {
            sigma_u0_sq,
            sigma_u1_sq,
            ..
        } = &state.area
        else {
            return Err(Error::InvalidParameter("growth conditional needs a CL3 state".into()));
        };
        let s2 = state.sigma_e_sq;
        let mut p = [1.0 / sigma_u0_sq, 0.0, 1.0 / sigma_u1_sq];
        let mut b = [0.0, 0.0];
        for t in 0..self.num_periods {
            let cell = t * self.num_areas + j;
            let (c, g) = (self.counts[cell], self.g[t]);
            p[0] += c / s2;
            p[1] += c * g / s2;
            p[2] += c * g * g / s2;
            b[0] += sums[cell] / s2;
            b[1] += g * sums[cell] / s2;
        }
        Ok(Pair { p, b })
    }

    /// Full conditional of `(r0_i, r1_i)` for dense individual index `i`.
    pub fn individual_conditional(&self, state: &ModelState, i: usize) -> Result<GaussianConditional> {
        let ind = state
            .individual
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has no individual effects".into()))?;
        let prior = inverse_2x2(ind.cov)?;
        Ok(individual_pair(prior, state.sigma_e_sq, &self.individual_sums(state)[i]).conditional())
    }

    /// Per individual `[n, sum g, sum g^2, sum e, sum g e, sum e^2]` of the
    /// residuals `e = y - X beta - area effects`.
    fn individual_sums(&self, state: &ModelState) -> Vec<[f64; 6]> {
        let cells = self.cell_effects(state);
        let xb = self.design.xb(&state.beta);
        let mut per = vec![[0.0; 6]; self.num_individuals()];
        for o in 0..self.y.len() {
            let g = self.g[self.period[o]];
            let e = self.y[o] - xb[o] - cells[self.cell[o]];
            let st = &mut per[self.individual[o]];
            st[0] += 1.0;
            st[1] += g;
            st[2] += g * g;
            st[3] += e;
            st[4] += g * e;
            st[5] += e * e;
        }
        per
    }

    /// Inverse-Wishart full conditional `(df, scale)` of the individual
    /// covariance.
    pub fn individual_covariance_conditional(&self, state: &ModelState) -> Result<(f64, DMatrix<f64>)> {
        let ind = state
            .individual
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has no individual effects".into()))?;
        let pr = &self.spec.priors;
        let mut s = DMatrix::identity(2, 2) * pr.wishart_scale;
        for (a, b) in ind.r0.iter().zip(&ind.r1) {
            s[(0, 0)] += a * a;
            s[(0, 1)] += a * b;
            s[(1, 1)] += b * b;
        }
        s[(1, 0)] = s[(0, 1)];
        Ok((pr.wishart_df + ind.r0.len() as f64, s))
    }

    /// Log target of the scale move on individual component `comp` (0
    /// intercepts, 1 slopes) at `log_c`, up to a constant. The move maps
    /// `r_comp -> c r_comp` and scales row and column `comp` of the covariance
    /// by `c`; the Jacobian and the effects' prior cancel except for the
    /// inverse-Wishart terms.
    pub fn individual_scale_log_density(&self, state: &ModelState, comp: usize, log_c: f64) -> Result<f64> {
        let (a, b) = self.individual_scale_parts(state, &self.individual_sums(state), comp)?;
        Ok(self.scale_target(state, comp, a, b, log_c))
    }

    /// `(sum z^2, sum rest z)` with `z` the component's contribution per
    /// observation and `rest` the residual without it.
    fn individual_scale_parts(&self, state: &ModelState, sums: &[[f64; 6]], comp: usize) -> Result<(f64, f64)> {
        let ind = state
            .individual
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has no individual effects".into()))?;
        let (mut a, mut b) = (0.0, 0.0);
        for ((st, r0), r1) in sums.iter().zip(&ind.r0).zip(&ind.r1) {
            if comp == 0 {
                a += st[0] * r0 * r0;
                b += r0 * (st[3] - r1 * st[1]);
            } else {
                a += st[2] * r1 * r1;
                b += r1 * (st[4] - r0 * st[1]);
            }
        }
        Ok((a, b))
    }

    fn scale_target(&self, state: &ModelState, comp: usize, a: f64, b: f64, log_c: f64) -> f64 {
        let c = log_c.exp();
        let cov = state.individual.as_ref().map_or([1.0, 0.0, 1.0], |ind| ind.cov);
        let inv_kk = (if comp == 0 { cov[2] } else { cov[0] }) / (cov[0] * cov[2] - cov[1] * cov[1]);
        let pr = &self.spec.priors;
        -(a * c * c - 2.0 * b * c) / (2.0 * state.sigma_e_sq) - pr.wishart_df * log_c
            - pr.wishart_scale * inv_kk / (2.0 * c * c)
    }

    /// Log density of `(sigma_e_sq, individual covariance) = (v, cov)` given
    /// everything except the individual effects, which are integrated out,
    /// up to a constant. `cov` is `[s00, s01, s11]`.
    pub fn collapsed_individual_log_density(&self, state: &ModelState, v: f64, cov: [f64; 3]) -> Result<f64> {
        self.collapsed_target(&pool_individual_sums(&self.individual_sums(state)), v, cov)
    }

    fn collapsed_target(&self, stats: &[[f64; 8]], v: f64, cov: [f64; 3]) -> Result<f64> {
        let det_cov = cov[0] * cov[2] - cov[1] * cov[1];
        if !(v > 0.0 && cov[0] > 0.0 && det_cov > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let inv = inverse_2x2(cov)?;
        let log_det_cov = det_cov.ln();
        let mut total = 0.0;
        for st in stats {
            // Woodbury with P = S^-1 + Z'Z / v
            let p = [inv[0] + st[1] / v, inv[1] + st[2] / v, inv[2] + st[3] / v];
            let det = p[0] * p[2] - p[1] * p[1];
            let quad = st[4] / v - (p[2] * st[5] - 2.0 * p[1] * st[6] + p[0] * st[7]) / (det * v * v);
            total -= 0.5 * (st[0] * (st[1] * v.ln() + log_det_cov + det.ln()) + quad);
        }
        let pr = &self.spec.priors;
        let sigma_prior = -(pr.a + 1.0) * v.ln() - pr.b / v;
        let iw_prior = -(pr.wishart_df + 3.0) / 2.0 * log_det_cov - pr.wishart_scale / 2.0 * (inv[0] + inv[2]);
        Ok(total + sigma_prior + iw_prior)
    }

    /// Draws `sigma_e_sq` and the individual covariance with the effects
    /// integrated out: slice updates of `log sigma_e_sq`, `log s00`, `log s11`
    /// and the correlation. Followed by the effects' block draws, this
    /// samples variances and effects jointly.
    fn update_individual_collapsed<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        sums: &[[f64; 6]],
        rng: &mut R,
    ) -> Result<()> {
        let stats = pool_individual_sums(sums);
        let cov = state.individual.as_ref().map_or([1.0, 0.0, 1.0], |ind| ind.cov);
        let target = |v: f64, cov: [f64; 3]| self.collapsed_target(&stats, v, cov).unwrap_or(f64::NEG_INFINITY);
        let mut v = state.sigma_e_sq;
        if self.fixed("sigma_e_sq").is_none() {
            let u = slice_sample(rng, |u| target(u.exp(), cov) + u, v.ln(), -SCALE_LOG_BOUND, SCALE_LOG_BOUND)?;
            v = u.exp();
        }
        // (log s00, correlation, log s11) with log Jacobian 1.5 (l0 + l1)
        let mut x = [cov[0].ln(), cov[1] / (cov[0] * cov[2]).sqrt(), cov[2].ln()];
        let entries = |x: &[f64; 3]| {
            let (s00, s11) = (x[0].exp(), x[2].exp());
            [s00, x[1] * (s00 * s11).sqrt(), s11]
        };
        let bounds = [
            (-SCALE_LOG_BOUND, SCALE_LOG_BOUND, COVARIANCE_SLICE_WIDTH),
            (-1.0, 1.0, COVARIANCE_SLICE_WIDTH),
            (-SCALE_LOG_BOUND, SCALE_LOG_BOUND, COVARIANCE_SLICE_WIDTH),
        ];
        for (c, &(lo, hi, width)) in bounds.iter().enumerate() {
            let f = |z: f64| {
                let mut y = x;
                y[c] = z;
                target(v, entries(&y)) + 1.5 * (y[0] + y[2])
            };
            x[c] = slice_sample_with_width(rng, f, x[c], lo, hi, width)?;
        }
        state.sigma_e_sq = v;
        if let Some(ind) = &mut state.individual {
            ind.cov = entries(&x);
        }
        Ok(())
    }

    /// Conditional of the shear `a` that adds `a r_other` to component `comp`
    /// of every individual (0 intercepts, 1 slopes) and maps the covariance
    /// to `L S L'`. The map has unit Jacobian and leaves the effects' prior
    /// invariant, so the likelihood and the inverse-Wishart trace term remain.
    pub fn individual_shear_conditional(&self, state: &ModelState, comp: usize) -> Result<NormalConditional> {
        self.individual_shear_from(state, &self.individual_sums(state), comp)
    }

    fn individual_shear_from(&self, state: &ModelState, sums: &[[f64; 6]], comp: usize) -> Result<NormalConditional> {
        let ind = state
            .individual
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has no individual effects".into()))?;
        let (mut a, mut b) = (0.0, 0.0);
        for ((st, r0), r1) in sums.iter().zip(&ind.r0).zip(&ind.r1) {
            // residual sums with the individual effects removed
            let (res, res_g) = (st[3] - st[0] * r0 - st[1] * r1, st[4] - st[1] * r0 - st[2] * r1);
            if comp == 0 {
                a += st[0] * r1 * r1;
                b += r1 * res;
            } else {
                a += st[2] * r0 * r0;
                b += r0 * res_g;
            }
        }
        let inv = inverse_2x2(ind.cov)?;
        let ws = self.spec.priors.wishart_scale;
        let s2 = state.sigma_e_sq;
        let precision = a / s2 + ws * if comp == 0 { inv[0] } else { inv[2] };
        let linear = b / s2 + ws * inv[1];
        Ok(NormalConditional {
            mean: linear / precision,
            variance: 1.0 / precision,
        })
    }

    /// Applies a shear (see [`Model::individual_shear_conditional`]).
    pub fn apply_individual_shear(&self, state: &mut ModelState, comp: usize, a: f64) {
        let Some(ind) = &mut state.individual else {
            return;
        };
        let [s00, s01, s11] = ind.cov;
        if comp == 0 {
            for (r0, r1) in ind.r0.iter_mut().zip(&ind.r1) {
                *r0 += a * r1;
            }
            ind.cov = [s00 + 2.0 * a * s01 + a * a * s11, s01 + a * s11, s11];
        } else {
            for (r1, r0) in ind.r1.iter_mut().zip(&ind.r0) {
                *r1 += a * r0;
            }
            ind.cov = [s00, s01 + a * s00, s11 + 2.0 * a * s01 + a * a * s00];
        }
    }

    /// Dimension of the area shift move: 2 (intercept and slope) when the
    /// family has a per-period term to absorb the slope shift, 1 without, 0
    /// when individuals are not nested in areas.
    pub fn area_shift_dim(&self) -> usize {
        match (self.spec.family, &self.area_individuals) {
            (_, None) => 0,
            (Family::CarAnova, _) if !self.spec.include_interaction => 1,
            (Family::CarAnova | Family::Conv | Family::Cl3, _) => 2,
            _ => 0,
        }
    }

    /// Conditional of the area shift `s` that adds `s` to `(r0, r1)` of every
    /// individual in area `j` and subtracts `s0 + s1 g_t` from the area's
    /// effects (CL3 `u0_j, u1_j`; CAR ANOVA `phi_j` and `omega_tj`; CONV
    /// `omega_tj`). The likelihood is invariant, so only priors enter.
    pub fn area_shift_conditional(&self, state: &ModelState, j: usize) -> Result<GaussianConditional> {
        let dim = self.area_shift_dim();
        let (Some(groups), Some(ind)) = (&self.area_individuals, &state.individual) else {
            return Err(Error::InvalidParameter("area shift needs individuals nested in areas".into()));
        };
        let k = self.num_areas;
        let inv = inverse_2x2(ind.cov)?;
        let n = groups[j].len() as f64;
        let mut p = [n * inv[0], n * inv[1], n * inv[2]];
        let (s0, s1) = groups[j].iter().fold((0.0, 0.0), |(a, b), &i| (a + ind.r0[i], b + ind.r1[i]));
        let mut b = [-(inv[0] * s0 + inv[1] * s1), -(inv[1] * s0 + inv[2] * s1)];
        match &state.area {
            AreaState::Growth {
                u0,
                u1,
                sigma_u0_sq,
                sigma_u1_sq,
            } => {
                p[0] += 1.0 / sigma_u0_sq;
                p[2] += 1.0 / sigma_u1_sq;
                b[0] += u0[j] / sigma_u0_sq;
                b[1] += u1[j] / sigma_u1_sq;
            }
            AreaState::CarAnova {
                phi,
                omega,
                tau_s_sq,
                rho_s,
                sigma_omega_sq,
                ..
            } => {
                let (m, v) = leroux_conditional(&self.graph, phi, j, *rho_s, *tau_s_sq);
                p[0] += 1.0 / v;
                b[0] += (phi[j] - m) / v;
                if dim == 2 {
                    for t in 0..self.num_periods {
                        let g = self.g[t];
                        p[2] += g * g / sigma_omega_sq;
                        b[1] += g * omega[t * k + j] / sigma_omega_sq;
                    }
                }
            }
            AreaState::Conv {
                omega,
                sigma_omega_sq_t,
                ..
            } => {
                for t in 0..self.num_periods {
                    let (g, w, v) = (self.g[t], omega[t * k + j], sigma_omega_sq_t[t]);
                    p[0] += 1.0 / v;
                    p[1] += g / v;
                    p[2] += g * g / v;
                    b[0] += w / v;
                    b[1] += g * w / v;
                }
            }
            AreaState::Leroux { .. } => {
                return Err(Error::InvalidParameter("area shift needs a longitudinal family".into()));
            }
        }
        Ok(if dim == 2 {
            GaussianConditional {
                precision: DMatrix::from_row_slice(2, 2, &[p[0], p[1], p[1], p[2]]),
                linear: DVector::from_row_slice(&b),
            }
        } else {
            GaussianConditional {
                precision: DMatrix::from_element(1, 1, p[0]),
                linear: DVector::from_element(1, b[0]),
            }
        })
    }

    /// Applies an area shift (see [`Model::area_shift_conditional`]).
    pub fn apply_area_shift(&self, state: &mut ModelState, j: usize, shift: &[f64]) {
        let (Some(groups), Some(ind)) = (&self.area_individuals, &mut state.individual) else {
            return;
        };
        let k = self.num_areas;
        let d = shift[0];
        let e = shift.get(1).copied().unwrap_or(0.0);
        for &i in &groups[j] {
            ind.r0[i] += d;
            ind.r1[i] += e;
        }
        match &mut state.area {
            AreaState::Growth { u0, u1, .. } => {
                u0[j] -= d;
                u1[j] -= e;
            }
            AreaState::CarAnova { phi, omega, .. } => {
                phi[j] -= d;
                if shift.len() == 2 {
                    for t in 0..self.num_periods {
                        omega[t * k + j] -= e * self.g[t];
                    }
                }
            }
            AreaState::Conv { omega, .. } => {
                for t in 0..self.num_periods {
                    omega[t * k + j] -= d + e * self.g[t];
                }
            }
            AreaState::Leroux { .. } => {}
        }
    }

    /// Variance components the sweep samples, in update order.
    pub fn variance_params(&self) -> Vec<VarianceParam> {
        let mut out = vec![VarianceParam::SigmaE];
        match self.spec.family {
            Family::Cl2 | Family::Car | Family::Rcar => out.push(VarianceParam::TauSq),
            Family::CarAnova => {
                out.push(VarianceParam::TauSSq);
                out.push(VarianceParam::TauTSq);
                if self.spec.include_interaction {
                    out.push(VarianceParam::SigmaOmegaSq);
                }
            }
            Family::Conv => {
                out.extend((0..self.num_periods).map(VarianceParam::TauSqT));
                out.extend((0..self.num_periods).map(VarianceParam::SigmaOmegaSqT));
            }
            Family::Cl3 => {
                out.push(VarianceParam::SigmaU0Sq);
                out.push(VarianceParam::SigmaU1Sq);
            }
        }
        out.retain(|v| self.fixed(&v.name()).is_none());
        out
    }

    pub fn variance_conditional(&self, state: &ModelState, which: VarianceParam) -> Result<InverseGammaConditional> {
        let (a, b) = (self.spec.priors.a, self.spec.priors.b);
        let k = self.num_areas;
        let (m, ss) = match (&state.area, which) {
            (_, VarianceParam::SigmaE) => {
                let r = self.residuals(state);
                (r.len() as f64, r.iter().map(|v| v * v).sum())
            }
            (AreaState::Leroux { psi, rho, .. }, VarianceParam::TauSq) => {
                let m = k - self.restriction.as_ref().map_or(0, |r| r.num_columns());
                (m as f64, leroux_quad(&self.graph, psi, *rho))
            }
            (AreaState::CarAnova { phi, rho_s, .. }, VarianceParam::TauSSq) => (k as f64, leroux_quad(&self.graph, phi, *rho_s)),
            (AreaState::CarAnova { delta, rho_t, .. }, VarianceParam::TauTSq) => {
                (self.num_periods as f64, leroux_quad(&self.tgraph, delta, *rho_t))
            }
            (AreaState::CarAnova { omega, .. }, VarianceParam::SigmaOmegaSq) => {
                (omega.len() as f64, omega.iter().map(|v| v * v).sum())
            }
            (AreaState::Conv { phi, .. }, VarianceParam::TauSqT(t)) => {
                let row = &phi[t * k..(t + 1) * k];
                let mut ss = 0.0;
                self.graph.for_each_edge(|a, b| ss += (row[a] - row[b]).powi(2));
                for j in 0..k {
                    if self.graph.degree(j) == 0 {
                        ss += row[j] * row[j];
                    }
                }
                ((k - self.components.len()) as f64, ss)
            }
            (AreaState::Conv { omega, .. }, VarianceParam::SigmaOmegaSqT(t)) => {
                (k as f64, omega[t * k..(t + 1) * k].iter().map(|v| v * v).sum())
            }
            (AreaState::Growth { u0, .. }, VarianceParam::SigmaU0Sq) => (k as f64, u0.iter().map(|v| v * v).sum()),
            (AreaState::Growth { u1, .. }, VarianceParam::SigmaU1Sq) => (k as f64, u1.iter().map(|v| v * v).sum()),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "{} has no variance {}",
                    self.spec.family.label(),
                    which.name()
                )))
            }
        };
        Ok(InverseGammaConditional {
            shape: a + m / 2.0,
            scale: b + ss / 2.0,
        })
    }

    pub fn rho_params(&self) -> Vec<RhoParam> {
        let mut out = match self.spec.family {
            Family::Car | Family::Rcar => vec![RhoParam::Rho],
            Family::CarAnova => vec![RhoParam::RhoS, RhoParam::RhoT],
            _ => vec![],
        };
        out.retain(|r| self.fixed(r.name()).is_none());
        out
    }

    /// Log full conditional of an autocorrelation parameter up to a
    /// constant: `log det Q(rho) / 2 - x' Q(rho) x / (2 tau_sq)` under the
    /// uniform prior.
    pub fn rho_log_density(&self, state: &ModelState, which: RhoParam, rho: f64) -> Result<f64> {
        let (lo, hi) = self.spec.priors.rho_bounds;
        if !(lo..=hi).contains(&rho) {
            return Ok(f64::NEG_INFINITY);
        }
        let (edge_sq, sum_sq, tau_sq, logdet) = self.rho_parts(state, which)?;
        Ok(0.5 * logdet.log_det(rho)? - (rho * edge_sq + (1.0 - rho) * sum_sq) / (2.0 * tau_sq))
    }

    fn rho_parts(&self, state: &ModelState, which: RhoParam) -> Result<(f64, f64, f64, &LerouxLogDet)> {
        let missing = || Error::InvalidParameter(format!("{} has no {}", self.spec.family.label(), which.name()));
        let (x, tau_sq, spatial) = match (&state.area, which) {
            (AreaState::Leroux { psi, tau_sq, .. }, RhoParam::Rho) if self.spec.family != Family::Cl2 => {
                (psi.as_slice(), *tau_sq, true)
            }
            (AreaState::CarAnova { phi, tau_s_sq, .. }, RhoParam::RhoS) => (phi.as_slice(), *tau_s_sq, true),
            (AreaState::CarAnova { delta, tau_t_sq, .. }, RhoParam::RhoT) => (delta.as_slice(), *tau_t_sq, false),
            _ => return Err(missing()),
        };
        let mut edge_sq = 0.0;
        let logdet = if spatial {
            self.graph.for_each_edge(|a, b| edge_sq += (x[a] - x[b]).powi(2));
            self.spatial_logdet.as_ref()
        } else {
            self.tgraph.for_each_edge(|a, b| edge_sq += (x[a] - x[b]).powi(2));
            self.temporal_logdet.as_ref()
        };
        let sum_sq = x.iter().map(|v| v * v).sum();
        Ok((edge_sq, sum_sq, tau_sq, logdet.ok_or_else(missing)?))
    }

    // -------------------------------------------------------------- updates

    /// Draws the fixed effects; for CAR ANOVA jointly with the temporal field.
    pub fn update_fixed_effects<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        if self.spec.family == Family::CarAnova {
            let c = self.fixed_temporal_conditional(state)?;
            let draw = sample_dense_canonical(rng, &c.precision, &c.linear)?;
            let p = self.design.num_columns();
            state.beta = draw.rows(0, p).iter().copied().collect();
            if let AreaState::CarAnova { delta, .. } = &mut state.area {
                delta.copy_from_slice(draw.rows(p, self.num_periods).as_slice());
            }
            return Ok(());
        }
        let c = self.fixed_effects_conditional(state);
        let draw = sample_dense_canonical(rng, &c.precision, &c.linear)?;
        state.beta = draw.iter().copied().collect();
        Ok(())
    }

    /// Gibbs pass over the area-level effects (CAR ANOVA delta is drawn with
    /// the fixed effects, CONV cells as `(phi, omega)` pairs) followed by the
    /// family's centering or projection.
    pub fn update_area_effects<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let sums = self.cell_sums(&self.base_residuals(state));
        let k = self.num_areas;
        let n_t = self.num_periods;
        let draw = |state: &mut ModelState, site: AreaSite, rng: &mut R| -> Result<f64> {
            let c = self.site_conditional(state, &sums, site)?;
            sample_normal(rng, c.mean, c.variance.sqrt())
        };
        match self.spec.family {
            Family::Cl2 | Family::Car | Family::Rcar => {
                for j in 0..k {
                    let v = draw(state, AreaSite::Psi(j), rng)?;
                    if let AreaState::Leroux { psi, .. } = &mut state.area {
                        psi[j] = v;
                    }
                }
            }
            Family::CarAnova => {
                for j in 0..k {
                    let v = draw(state, AreaSite::Phi(j), rng)?;
                    if let AreaState::CarAnova { phi, .. } = &mut state.area {
                        phi[j] = v;
                    }
                }
                if self.spec.include_interaction {
                    for t in 0..n_t {
                        for j in 0..k {
                            let v = draw(state, AreaSite::Omega { t, j }, rng)?;
                            if let AreaState::CarAnova { omega, .. } = &mut state.area {
                                omega[t * k + j] = v;
                            }
                        }
                    }
                }
            }
            Family::Conv => {
                for t in 0..n_t {
                    for j in 0..k {
                        let c = self.cell_pair_conditional_with(state, &sums, t, j)?;
                        let d = sample_bivariate_canonical(rng, c.p, c.b)?;
                        if let AreaState::Conv { phi, omega, .. } = &mut state.area {
                            phi[t * k + j] = d[0];
                            omega[t * k + j] = d[1];
                        }
                    }
                }
            }
            Family::Cl3 => {
                for j in 0..k {
                    let c = self.growth_conditional_with(state, &sums, j)?;
                    let d = sample_bivariate_canonical(rng, c.p, c.b)?;
                    if let AreaState::Growth { u0, u1, .. } = &mut state.area {
                        u0[j] = d[0];
                        u1[j] = d[1];
                    }
                }
            }
        }
        self.apply_constraints(state);
        Ok(())
    }

    /// Re-imposes identifiability without changing the likelihood: RCAR
    /// projection with the removed component moved into the area-level
    /// coefficients; CAR ANOVA sum-to-zero on phi, delta and each omega row
    /// (omega row means go to delta, phi and delta means to the intercept);
    /// CONV sum-to-zero of phi_t on every connected component, with the
    /// removed mean moved into omega_t.
    pub fn apply_constraints(&self, state: &mut ModelState) {
        let k = self.num_areas;
        let intercept = 0;
        match &mut state.area {
            AreaState::Leroux { psi, .. } => {
                if let Some(r) = &self.restriction {
                    let c = r.coefficients(psi);
                    let z = r.z();
                    for (j, p) in psi.iter_mut().enumerate() {
                        *p -= (0..c.len()).map(|q| z[(j, q)] * c[q]).sum::<f64>();
                    }
                    for (q, &col) in r.beta_columns().iter().enumerate() {
                        state.beta[col] += c[q];
                    }
                }
            }
            AreaState::CarAnova { phi, delta, omega, .. } => {
                for (t, row) in omega.chunks_mut(k).enumerate() {
                    let m = row.iter().sum::<f64>() / k as f64;
                    row.iter_mut().for_each(|v| *v -= m);
                    delta[t] += m;
                }
                let md = delta.iter().sum::<f64>() / delta.len() as f64;
                delta.iter_mut().for_each(|v| *v -= md);
                let mp = phi.iter().sum::<f64>() / k as f64;
                phi.iter_mut().for_each(|v| *v -= mp);
                state.beta[intercept] += md + mp;
            }
            AreaState::Conv { phi, omega, .. } => {
                for t in 0..self.num_periods {
                    for comp in &self.components {
                        let m = comp.iter().map(|&j| phi[t * k + j]).sum::<f64>() / comp.len() as f64;
                        for &j in comp {
                            phi[t * k + j] -= m;
                            omega[t * k + j] += m;
                        }
                    }
                }
            }
            AreaState::Growth { .. } => {}
        }
    }

    /// Collapsed draw of `sigma_e_sq` and the covariance, block draws of
    /// each individual's `(r0, r1)`, the inverse-Wishart covariance draw,
    /// Liu-Sabatti group moves that transform the effects together with their
    /// covariance (one scale and one shear per component), then one shift
    /// move per area that trades the area's mean individual effect against
    /// its area effects.
    pub fn update_individual_effects<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        if state.individual.is_none() {
            return Ok(());
        }
        // beta and the area effects stay fixed until the area shifts
        let sums = self.individual_sums(state);
        self.update_individual_collapsed(state, &sums, rng)?;
        let prior = inverse_2x2(state.individual.as_ref().expect("checked above").cov)?;
        for (i, st) in sums.iter().enumerate() {
            let c = individual_pair(prior, state.sigma_e_sq, st);
            let d = sample_bivariate_canonical(rng, c.p, c.b)?;
            let ind = state.individual.as_mut().expect("checked above");
            ind.r0[i] = d[0];
            ind.r1[i] = d[1];
        }
        let (df, scale) = self.individual_covariance_conditional(state)?;
        let s = sample_inverse_wishart(rng, df, &scale)?;
        state.individual.as_mut().expect("checked above").cov = [s[(0, 0)], s[(0, 1)], s[(1, 1)]];
        for comp in 0..2 {
            let (a, b) = self.individual_scale_parts(state, &sums, comp)?;
            let u = slice_sample_with_width(
                rng,
                |u| self.scale_target(state, comp, a, b, u),
                0.0,
                -SCALE_LOG_BOUND,
                SCALE_LOG_BOUND,
                SCALE_SLICE_WIDTH,
            )?;
            let c = u.exp();
            let ind = state.individual.as_mut().expect("checked above");
            let r = if comp == 0 { &mut ind.r0 } else { &mut ind.r1 };
            r.iter_mut().for_each(|v| *v *= c);
            ind.cov[1] *= c;
            ind.cov[if comp == 0 { 0 } else { 2 }] *= c * c;
        }
        for comp in 0..2 {
            let c = self.individual_shear_from(state, &sums, comp)?;
            let a = sample_normal(rng, c.mean, c.variance.sqrt())?;
            self.apply_individual_shear(state, comp, a);
        }
        if self.area_shift_dim() > 0 {
            for j in 0..self.num_areas {
                let c = self.area_shift_conditional(state, j)?;
                if c.linear.len() == 2 {
                    self.apply_area_shift(state, j, &draw_pair(rng, &c)?);
                } else {
                    let d = sample_dense_canonical(rng, &c.precision, &c.linear)?;
                    self.apply_area_shift(state, j, d.as_slice());
                }
            }
            self.apply_constraints(state);
        }
        Ok(())
    }

    pub fn update_variances<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        for which in self.variance_params() {
            let c = self.variance_conditional(state, which)?;
            let v = sample_inverse_gamma(rng, c.shape, c.scale)?;
            self.set_variance(state, which, v);
        }
        Ok(())
    }

    fn set_variance(&self, state: &mut ModelState, which: VarianceParam, v: f64) {
        match (&mut state.area, which) {
            (_, VarianceParam::SigmaE) => state.sigma_e_sq = v,
            (AreaState::Leroux { tau_sq, .. }, VarianceParam::TauSq) => *tau_sq = v,
            (AreaState::CarAnova { tau_s_sq, .. }, VarianceParam::TauSSq) => *tau_s_sq = v,
            (AreaState::CarAnova { tau_t_sq, .. }, VarianceParam::TauTSq) => *tau_t_sq = v,
            (AreaState::CarAnova { sigma_omega_sq, .. }, VarianceParam::SigmaOmegaSq) => *sigma_omega_sq = v,
            (AreaState::Conv { tau_sq_t, .. }, VarianceParam::TauSqT(t)) => tau_sq_t[t] = v,
            (AreaState::Conv { sigma_omega_sq_t, .. }, VarianceParam::SigmaOmegaSqT(t)) => sigma_omega_sq_t[t] = v,
            (AreaState::Growth { sigma_u0_sq, .. }, VarianceParam::SigmaU0Sq) => *sigma_u0_sq = v,
            (AreaState::Growth { sigma_u1_sq, .. }, VarianceParam::SigmaU1Sq) => *sigma_u1_sq = v,
            _ => unreachable!("variance_params only lists the family's own components"),
        }
    }

    pub fn update_autocorrelation<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let (lo, hi) = self.spec.priors.rho_bounds;
        for which in self.rho_params() {
            let (edge_sq, sum_sq, tau_sq, logdet) = self.rho_parts(state, which)?;
            let target = |rho: f64| {
                logdet.log_det(rho).map_or(f64::NEG_INFINITY, |ld| {
                    0.5 * ld - (rho * edge_sq + (1.0 - rho) * sum_sq) / (2.0 * tau_sq)
                })
            };
            let current = match (&state.area, which) {
                (AreaState::Leroux { rho, .. }, _) => *rho,
                (AreaState::CarAnova { rho_s, .. }, RhoParam::RhoS) => *rho_s,
                (AreaState::CarAnova { rho_t, .. }, _) => *rho_t,
                _ => unreachable!(),
            };
            let next = slice_sample(rng, target, current, lo, hi)?;
            match (&mut state.area, which) {
                (AreaState::Leroux { rho, .. }, _) => *rho = next,
                (AreaState::CarAnova { rho_s, .. }, RhoParam::RhoS) => *rho_s = next,
                (AreaState::CarAnova { rho_t, .. }, _) => *rho_t = next,
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    /// One full pass: fixed effects (with delta for CAR ANOVA), area effects
    /// (with constraints), individual effects and their covariance,
    /// variances, autocorrelations.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        self.update_fixed_effects(state, rng)?;
        self.update_area_effects(state, rng)?;
        self.update_individual_effects(state, rng)?;
        self.update_variances(state, rng)?;
        self.update_autocorrelation(state, rng)?;
        Ok(())
    }

    // ------------------------------------------------------------ reporting

    /// Names of the scalar parameters, in storage order.
    pub fn scalar_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.design.names().iter().map(|n| format!("beta_{n}")).collect();
        out.push("sigma_e_sq".into());
        match self.spec.family {
            Family::Cl2 => out.push("tau_sq".into()),
            Family::Car | Family::Rcar => out.extend(["tau_sq".into(), "rho".into()]),
            Family::CarAnova => {
                out.extend(["tau_s_sq", "tau_t_sq", "rho_s", "rho_t"].map(String::from));
                if self.spec.include_interaction {
                    out.push("sigma_omega_sq".into());
                }
            }
            Family::Conv => {
                out.extend((0..self.num_periods).map(|t| format!("tau_sq_t{}", t + 1)));
                out.extend((0..self.num_periods).map(|t| format!("sigma_omega_sq_t{}", t + 1)));
            }
            Family::Cl3 => out.extend(["sigma_u0_sq".into(), "sigma_u1_sq".into()]),
        }
        if self.has_individual_effects() {
            out.extend(["sigma_r0", "sigma_r01", "sigma_r1"].map(String::from));
        }
        out
    }

    pub fn scalar_values(&self, state: &ModelState, out: &mut Vec<f64>) {
        out.extend_from_slice(&state.beta);
        out.push(state.sigma_e_sq);
        match &state.area {
            AreaState::Leroux { tau_sq, rho, .. } => {
                out.push(*tau_sq);
                if self.spec.family != Family::Cl2 {
                    out.push(*rho);
                }
            }
            AreaState::CarAnova {
                tau_s_sq,
                tau_t_sq,
                sigma_omega_sq,
                rho_s,
                rho_t,
                ..
            } => {
                out.extend([*tau_s_sq, *tau_t_sq, *rho_s, *rho_t]);
                if self.spec.include_interaction {
                    out.push(*sigma_omega_sq);
                }
            }
            AreaState::Conv {
                tau_sq_t,
                sigma_omega_sq_t,
                ..
            } => {
                out.extend_from_slice(tau_sq_t);
                out.extend_from_slice(sigma_omega_sq_t);
            }
            AreaState::Growth {
                sigma_u0_sq,
                sigma_u1_sq,
                ..
            } => out.extend([*sigma_u0_sq, *sigma_u1_sq]),
        }
        if let Some(ind) = &state.individual {
            out.extend(ind.cov);
        }
    }

    /// Names of the per-cell total area effects.
    pub fn area_effect_names(&self) -> Vec<String> {
        if self.spec.family.is_longitudinal() {
            (0..self.num_periods)
                .flat_map(|t| (0..self.num_areas).map(move |j| format!("psi_t{}_j{}", t + 1, j + 1)))
                .collect()
        } else {
            (0..self.num_areas).map(|j| format!("psi_j{}", j + 1)).collect()
        }
    }

    pub fn individual_effect_names(&self) -> Vec<String> {
        if !self.has_individual_effects() {
            return Vec::new();
        }
        let ids = &self.individual_ids;
        ids.iter()
            .map(|id| format!("r0_i{id}"))
            .chain(ids.iter().map(|id| format!("r1_i{id}")))
            .collect()
    }

    pub fn individual_effect_values(&self, state: &ModelState, out: &mut Vec<f64>) {
        if let Some(ind) = &state.individual {
            out.extend_from_slice(&ind.r0);
            out.extend_from_slice(&ind.r1);
        }
    }
}

/// `x' (rho R + (1 - rho) I) x`.
/// Pools per-individual sums over individuals with the same
/// `(n, sum g, sum g^2)`: `[count, n, sum g, sum g^2, sum e^2, sum b0^2,
/// sum b0 b1, sum b1^2]` with `b0 = sum e` and `b1 = sum g e`.
fn pool_individual_sums(per: &[[f64; 6]]) -> Vec<[f64; 8]> {
    let mut groups: BTreeMap<[u64; 3], [f64; 8]> = BTreeMap::new();
    for st in per {
        let key = [st[0].to_bits(), st[1].to_bits(), st[2].to_bits()];
        let g = groups.entry(key).or_insert([0.0, st[0], st[1], st[2], 0.0, 0.0, 0.0, 0.0]);
        g[0] += 1.0;
        g[4] += st[5];
        g[5] += st[3] * st[3];
        g[6] += st[3] * st[4];
        g[7] += st[4] * st[4];
    }
    groups.into_values().collect()
}

/// Bivariate canonical form: precision `[p00, p01, p11]`, linear `b`.
struct Pair {
    p: [f64; 3],
    b: [f64; 2],
}

impl Pair {
    fn conditional(&self) -> GaussianConditional {
        GaussianConditional {
            precision: DMatrix::from_row_slice(2, 2, &[self.p[0], self.p[1], self.p[1], self.p[2]]),
            linear: DVector::from_row_slice(&self.b),
        }
    }
}

/// Conditional of `(r0_i, r1_i)` from the prior precision and the
/// individual's residual sums.
fn individual_pair(prior: [f64; 3], s2: f64, st: &[f64; 6]) -> Pair {
    Pair {
        p: [prior[0] + st[0] / s2, prior[1] + st[1] / s2, prior[2] + st[2] / s2],
        b: [st[3] / s2, st[4] / s2],
    }
}

fn draw_pair<R: Rng + ?Sized>(rng: &mut R, c: &GaussianConditional) -> Result<[f64; 2]> {
    let p = &c.precision;
    sample_bivariate_canonical(rng, [p[(0, 0)], p[(0, 1)], p[(1, 1)]], [c.linear[0], c.linear[1]])
}

fn leroux_quad<G: Neighborhood>(graph: &G, x: &[f64], rho: f64) -> f64 {
    let mut edge_sq = 0.0;
    graph.for_each_edge(|a, b| edge_sq += (x[a] - x[b]).powi(2));
    rho * edge_sq + (1.0 - rho) * x.iter().map(|v| v * v).sum::<f64>()
}

fn inverse_2x2([a, b, c]: [f64; 3]) -> Result<[f64; 3]> {
    let det = a * c - b * b;
    if !(det > 0.0 && a > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    Ok([c / det, -b / det, a / det])
}

pub(crate) fn gaussian_log_likelihood(residuals: &[f64], sigma_sq: f64) -> f64 {
    let n = residuals.len() as f64;
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    -0.5 * n * (LN_2PI + sigma_sq.ln()) - ss / (2.0 * sigma_sq)
}

fn build_restriction(data: &LongDataset, design: &Design, k: usize) -> Result<RestrictionMatrix> {
    let mut columns = vec![0usize];
    for (c, cov) in data.covariates().iter().enumerate() {
        if cov.level == CovariateLevel::Area {
            columns.push(c + 1);
        }
    }
    let mut z = DMatrix::from_element(k, columns.len(), f64::NAN);
    for o in 0..data.len() {
        let j = data.areas()[o];
        let row = design.row(o);
        for (q, &col) in columns.iter().enumerate() {
            let v = row[col];
            if z[(j, q)].is_nan() {
                z[(j, q)] = v;
            } else if z[(j, q)] != v {
                return Err(Error::Mismatch(format!(
                    "area-level covariate `{}` varies within area {}",
                    design.names()[col],
                    j + 1
                )));
            }
        }
    }
    if let Some(j) = (0..k).find(|&j| z[(j, 0)].is_nan()) {
        return Err(Error::Mismatch(format!("RCAR needs observations in every area; area {} has none", j + 1)));
    }
    RestrictionMatrix::new(z, columns)
}

/// Running posterior means of everything the likelihood depends on, for the
/// deviance at the posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMeans {
    pub count: usize,
    pub beta: Vec<f64>,
    pub sigma_e_sq: f64,
    pub cell_effects: Vec<f64>,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
}

impl PosteriorMeans {
    pub fn new(model: &Model) -> Self {
        let n_ind = if model.has_individual_effects() {
            model.num_individuals()
        } else {
            0
        };
        Self {
            count: 0,
            beta: vec![0.0; model.design.num_columns()],
            sigma_e_sq: 0.0,
            cell_effects: vec![0.0; model.num_periods * model.num_areas],
            r0: vec![0.0; n_ind],
            r1: vec![0.0; n_ind],
        }
    }

    /// Adds one draw (incremental mean update).
    pub fn accumulate(&mut self, model: &Model, state: &ModelState) {
        self.count += 1;
        let w = 1.0 / self.count as f64;
        let upd = |acc: &mut [f64], x: &[f64]| {
            for (a, v) in acc.iter_mut().zip(x) {
                *a += (v - *a) * w;
            }
        };
        upd(&mut self.beta, &state.beta);
        self.sigma_e_sq += (state.sigma_e_sq - self.sigma_e_sq) * w;
        upd(&mut self.cell_effects, &model.cell_effects(state));
        if let Some(ind) = &state.individual {
            upd(&mut self.r0, &ind.r0);
            upd(&mut self.r1, &ind.r1);
        }
    }

    /// Equal-weight average over chains with equal draw counts.
    pub fn pooled(parts: &[PosteriorMeans]) -> Option<PosteriorMeans> {
        let first = parts.first()?;
        let m = parts.len() as f64;
        let avg = |f: &dyn Fn(&PosteriorMeans) -> &Vec<f64>| -> Vec<f64> {
            let mut out = vec![0.0; f(first).len()];
            for p in parts {
                for (o, v) in out.iter_mut().zip(f(p)) {
                    *o += v / m;
                }
            }
            out
        };
        Some(PosteriorMeans {
            count: parts.iter().map(|p| p.count).sum(),
            beta: avg(&|p| &p.beta),
            sigma_e_sq: parts.iter().map(|p| p.sigma_e_sq).sum::<f64>() / m,
            cell_effects: avg(&|p| &p.cell_effects),
            r0: avg(&|p| &p.r0),
            r1: avg(&|p| &p.r1),
        })
    }

    pub fn deviance(&self, model: &Model) -> f64 {
        let xb = model.design.xb(&self.beta);
        let r: Vec<f64> = (0..model.y.len())
            .map(|o| {
                let ind = if self.r0.is_empty() {
                    0.0
                } else {
                    let i = model.individual[o];
                    self.r0[i] + model.g[model.period[o]] * self.r1[i]
                };
                model.y[o] - xb[o] - self.cell_effects[model.cell[o]] - ind
            })
            .collect();
        -2.0 * gaussian_log_likelihood(&r, self.sigma_e_sq)
    }
}

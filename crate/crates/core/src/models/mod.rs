//! The six model families, their state, full conditionals and Gibbs sweep.
//!
//! Cross-sectional: `y_ij = X_ij beta + psi_j + e_ij` with psi independent
//! (CL2), Leroux CAR (CAR) or Leroux CAR projected onto the orthogonal
//! complement of the area-level design columns (RCAR).
//!
//! Longitudinal: `y_tij = X_tij beta + psi_tj + r0_ij + r1_ij g(t) + e_tij`
//! with psi a linear growth term `u0_j + g(t) u1_j` (CL3), a CAR ANOVA
//! decomposition `phi_j + delta_t + omega_tj` or a convolution
//! `phi_tj + omega_tj` with per-period intrinsic CAR fields (CONV).

mod design;
mod logdet;
mod model;
mod restriction;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

pub use design::Design;
pub use logdet::{LerouxLogDet, SPECTRAL_LIMIT};
pub use model::{Model, PosteriorMeans};
pub use restriction::{restrict_projection, RestrictionMatrix};

use crate::error::{Error, Result};
use crate::graph::RHO_MAX;
use crate::simulate::StudyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cl2,
    Car,
    Rcar,
    Cl3,
    CarAnova,
    Conv,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Cl2,
        Family::Car,
        Family::Rcar,
        Family::Cl3,
        Family::CarAnova,
        Family::Conv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Cl2 => "cl2",
            Family::Car => "car",
            Family::Rcar => "rcar",
            Family::Cl3 => "cl3",
            Family::CarAnova => "car-anova",
            Family::Conv => "conv",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::Cl2 => "MLM CL2",
            Family::Car => "MLM CAR",
            Family::Rcar => "MLM RCAR",
            Family::Cl3 => "MLM CL3",
            Family::CarAnova => "MLM CAR ANOVA",
            Family::Conv => "MLM CONV",
        }
    }

    pub fn is_longitudinal(self) -> bool {
        matches!(self, Family::Cl3 | Family::CarAnova | Family::Conv)
    }

    pub fn kind(self) -> StudyKind {
        if self.is_longitudinal() {
            StudyKind::Longitudinal
        } else {
            StudyKind::CrossSectional
        }
    }

    /// Default burn-in in sweeps. CAR ANOVA may need far longer on real data.
    pub fn default_burn_in(self) -> usize {
        match self {
            Family::Cl2 => 5_000,
            Family::Car | Family::Rcar => 15_000,
            Family::Cl3 | Family::Conv => 8_000,
            Family::CarAnova => 25_000,
        }
    }

    pub fn for_kind(kind: StudyKind) -> [Family; 3] {
        match kind {
            StudyKind::CrossSectional => [Family::Cl2, Family::Car, Family::Rcar],
            StudyKind::Longitudinal => [Family::Cl3, Family::CarAnova, Family::Conv],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Deterministic time trend `g` evaluated at 0-based period indices.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeTrend {
    /// `g(t) = t` on 1-based periods.
    Linear,
    /// Explicit value per period.
    Values(Vec<f64>),
}

impl TimeTrend {
    pub fn eval(&self, period: usize) -> f64 {
        match self {
            TimeTrend::Linear => (period + 1) as f64,
            TimeTrend::Values(v) => v[period],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Inverse-gamma shape for every variance component.
    pub a: f64,
    /// Inverse-gamma scale for every variance component.
    pub b: f64,
    pub beta_prior_sd: f64,
    pub rho_bounds: (f64, f64),
    /// Inverse-Wishart degrees of freedom for the individual-effects covariance.
    pub wishart_df: f64,
    /// Inverse-Wishart scale multiple of the identity.
    pub wishart_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.01,
            beta_prior_sd: 1000f64.sqrt(),
            rho_bounds: (0.0, RHO_MAX),
            wishart_df: 3.0,
            wishart_scale: 0.01,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rho_bounds;
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::Config("inverse-gamma a and b must be positive".into()));
        }
        if !(self.beta_prior_sd > 0.0) {
            return Err(Error::Config("beta_prior_sd must be positive".into()));
        }
        if !(0.0 <= lo && lo < hi && hi <= RHO_MAX) {
            return Err(Error::Config(format!("rho bounds ({lo}, {hi}) must lie in [0, 1 - 1e-8]")));
        }
        if !(self.wishart_df > 1.0 && self.wishart_scale > 0.0) {
            return Err(Error::Config("inverse-Wishart needs df > 1 and a positive scale".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub time_trend: TimeTrend,
    pub priors: PriorConfig,
    /// CAR ANOVA space-time interaction term.
    pub include_interaction: bool,
    /// Scalar parameters held at a fixed value instead of being sampled,
    /// keyed by parameter name (e.g. `rho`, `tau_s_sq`).
    pub fixed: Vec<(String, f64)>,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            time_trend: TimeTrend::Linear,
            priors: PriorConfig::default(),
            include_interaction: true,
            fixed: Vec::new(),
        }
    }

    pub fn with_fixed(mut self, name: &str, value: f64) -> Self {
        self.fixed.push((name.to_string(), value));
        self
    }

    pub fn fixed_value(&self, name: &str) -> Option<f64> {
        self.fixed.iter().rev().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

/// Family-specific area-level latent state. Longitudinal arrays are
/// row-major by period: entry `t * K + j`.
#[derive(Debug, Clone, PartialEq)]
pub enum AreaState {
    /// CL2 (rho pinned to 0), CAR and RCAR.
    Leroux { psi: Vec<f64>, tau_sq: f64, rho: f64 },
    CarAnova {
        phi: Vec<f64>,
        delta: Vec<f64>,
        omega: Vec<f64>,
        tau_s_sq: f64,
        tau_t_sq: f64,
        sigma_omega_sq: f64,
        rho_s: f64,
        rho_t: f64,
    },
    Conv {
        phi: Vec<f64>,
        omega: Vec<f64>,
        tau_sq_t: Vec<f64>,
        sigma_omega_sq_t: Vec<f64>,
    },
    Growth {
        u0: Vec<f64>,
        u1: Vec<f64>,
        sigma_u0_sq: f64,
        sigma_u1_sq: f64,
    },
}

/// Individual random intercepts and slopes with their covariance
/// `[[sigma_r0, sigma_r01], [sigma_r01, sigma_r1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualState {
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub cov: [f64; 3],
}

impl IndividualState {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let [a, b, c] = self.cov;
        DMatrix::from_row_slice(2, 2, &[a, b, b, c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub beta: Vec<f64>,
    pub sigma_e_sq: f64,
    pub area: AreaState,
    pub individual: Option<IndividualState>,
}

/// Scalar area-level sites updated one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaSite {
    /// Cross-sectional `psi_j`.
    Psi(usize),
    /// CAR ANOVA `phi_j`.
    Phi(usize),
    /// CAR ANOVA `delta_t`.
    Delta(usize),
    /// CAR ANOVA `omega_tj`.
    Omega { t: usize, j: usize },
    /// CONV `phi_tj`.
    PhiT { t: usize, j: usize },
    /// CONV `omega_tj`.
    OmegaT { t: usize, j: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceParam {
    SigmaE,
    TauSq,
    TauSSq,
    TauTSq,
    SigmaOmegaSq,
    TauSqT(usize),
    SigmaOmegaSqT(usize),
    SigmaU0Sq,
    SigmaU1Sq,
}

impl VarianceParam {
    pub fn name(self) -> String {
        match self {
            VarianceParam::SigmaE => "sigma_e_sq".into(),
            VarianceParam::TauSq => "tau_sq".into(),
            VarianceParam::TauSSq => "tau_s_sq".into(),
            VarianceParam::TauTSq => "tau_t_sq".into(),
            VarianceParam::SigmaOmegaSq => "sigma_omega_sq".into(),
            VarianceParam::TauSqT(t) => format!("tau_sq_t{}", t + 1),
            VarianceParam::SigmaOmegaSqT(t) => format!("sigma_omega_sq_t{}", t + 1),
            VarianceParam::SigmaU0Sq => "sigma_u0_sq".into(),
            VarianceParam::SigmaU1Sq => "sigma_u1_sq".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoParam {
    Rho,
    RhoS,
    RhoT,
}

impl RhoParam {
    pub fn name(self) -> &'static str {
        match self {
            RhoParam::Rho => "rho",
            RhoParam::RhoS => "rho_s",
            RhoParam::RhoT => "rho_t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalConditional {
    pub mean: f64,
    pub variance: f64,
}

impl NormalConditional {
    /// Combines a normal prior with `count` observations whose residuals sum
    /// to `sum`, each with variance `sigma_sq`.
    pub fn posterior(prior_mean: f64, prior_var: f64, sum: f64, count: f64, sigma_sq: f64) -> Self {
        let precision = 1.0 / prior_var + count / sigma_sq;
        let linear = prior_mean / prior_var + sum / sigma_sq;
        Self {
            mean: linear / precision,
            variance: 1.0 / precision,
        }
    }
}

/// Multivariate normal in canonical form: density proportional to
/// `exp(-x' P x / 2 + x' b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl GaussianConditional {
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        self.precision
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        self.precision
            .clone()
            .cholesky()
            .map(|c| c.solve(&self.linear))
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })
    }
}

/// Inverse gamma with density proportional to `x^(-shape-1) exp(-scale/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaConditional {
    pub shape: f64,
    pub scale: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert_eq!("CAR_ANOVA".parse::<Family>().unwrap(), Family::CarAnova);
        assert!("bym".parse::<Family>().is_err());
    }

    #[test]
    fn default_priors() {
        let p = PriorConfig::default();
        assert_eq!((p.a, p.b), (1.0, 0.01));
        assert!((p.beta_prior_sd - 31.62).abs() < 0.01);
        p.validate().unwrap();
    }

    #[test]
    fn linear_trend_is_one_based() {
        assert_eq!(TimeTrend::Linear.eval(0), 1.0);
        assert_eq!(TimeTrend::Values(vec![0.0, 0.5]).eval(1), 0.5);
    }

    #[test]
    fn scalar_posterior_combination() {
        let c = NormalConditional::posterior(1.0, 2.0, 6.0, 3.0, 1.0);
        // precision 0.5 + 3, linear 0.5 + 6
        assert!((c.variance - 1.0 / 3.5).abs() < 1e-15);
        assert!((c.mean - 6.5 / 3.5).abs() < 1e-15);
    }
}

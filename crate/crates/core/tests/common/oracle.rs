//! Dense brute-force joint posterior kernel for all six families, and checks
//! of every full conditional against it.
//!
//! Each conditional is recovered from the joint by finite differences. For a
//! Gaussian conditional the log-joint is quadratic in the block, so central
//! differences with unit steps are exact up to rounding. Inverse-gamma
//! conditionals are recovered by fitting `-(shape + 1) ln v - scale / v + c`
//! through three evaluations.

#![allow(dead_code)]

use carlevel_core::data::{Covariate, CovariateLevel, LongDataset};
use carlevel_core::graph::SpatialGraph;
use carlevel_core::models::{
    AreaSite, AreaState, Family, IndividualState, Model, ModelSpec, ModelState, RhoParam,
    VarianceParam,
};
use carlevel_core::sampling::{sample_uniform, standard_normal, RngStream};
use nalgebra::{DMatrix, DVector};

pub struct Problem {
    pub data: LongDataset,
    pub graph: SpatialGraph,
    pub spec: ModelSpec,
}

fn unif(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    sample_uniform(rng, lo, hi).unwrap()
}

fn index(rng: &mut RngStream, n: usize) -> usize {
    (unif(rng, 0.0, n as f64) as usize).min(n - 1)
}

fn random_graph(rng: &mut RngStream, k: usize) -> SpatialGraph {
    let mut edges = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            if unif(rng, 0.0, 1.0) < 0.5 {
                edges.push((a, b));
            }
        }
    }
    SpatialGraph::from_edges(k, &edges).unwrap()
}

/// Random problem with K <= 5, N <= 3 and at most 10 observations.
pub fn random_problem(family: Family, rng: &mut RngStream) -> (Problem, Model) {
    loop {
        let (data, graph) = if family.is_longitudinal() {
            let k = 2 + index(rng, 4);
            let n_t = 2 + index(rng, 2);
            let n_ind = 2 + index(rng, 10 / n_t - 1);
            let graph = random_graph(rng, k);
            let home: Vec<usize> = (0..n_ind).map(|_| index(rng, k)).collect();
            let (mut period, mut individual, mut area, mut y, mut x1) = (vec![], vec![], vec![], vec![], vec![]);
            for t in 0..n_t {
                for i in 0..n_ind {
                    period.push(t);
                    individual.push(i);
                    area.push(home[i]);
                    y.push(2.0 * standard_normal(rng));
                    x1.push(standard_normal(rng));
                }
            }
            let cov = vec![Covariate {
                name: "x1".into(),
                level: CovariateLevel::Individual,
                time_varying: true,
                values: x1,
            }];
            let data = LongDataset::new(k, n_t, (0..n_ind as u64).collect(), period, individual, area, y, cov).unwrap();
            (data, graph)
        } else {
            let k = 3 + index(rng, 3);
            let n = k + index(rng, 11 - k);
            let graph = random_graph(rng, k);
            let area: Vec<usize> = (0..n).map(|o| if o < k { o } else { index(rng, k) }).collect();
            let xa: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
            let y = (0..n).map(|_| 2.0 * standard_normal(rng)).collect();
            let cov = vec![
                Covariate {
                    name: "x1".into(),
                    level: CovariateLevel::Individual,
                    time_varying: false,
                    values: (0..n).map(|_| standard_normal(rng)).collect(),
                },
                Covariate {
                    name: "x2".into(),
                    level: CovariateLevel::Area,
                    time_varying: false,
                    values: area.iter().map(|&j| xa[j]).collect(),
                },
            ];
            let data = LongDataset::new(k, 1, (0..n as u64).collect(), vec![0; n], (0..n).collect(), area, y, cov).unwrap();
            (data, graph)
        };
        let mut spec = ModelSpec::new(family);
        spec.priors.beta_prior_sd = unif(rng, 0.5, 5.0);
        spec.priors.a = unif(rng, 0.5, 3.0);
        spec.priors.b = unif(rng, 0.01, 1.0);
        spec.priors.wishart_scale = unif(rng, 0.01, 1.0);
        if let Ok(model) = Model::new(spec.clone(), &data, &graph) {
            return (Problem { data, graph, spec }, model);
        }
    }
}

/// A random valid state (constraints are not imposed; conditionals do not
/// depend on them).
pub fn random_state(model: &Model, rng: &mut RngStream) -> ModelState {
    let mut s = model.init_state(rng, false).unwrap();
    let k = model.num_areas();
    let nk = model.num_periods() * k;
    let normals = |n: usize, rng: &mut RngStream| -> Vec<f64> { (0..n).map(|_| standard_normal(rng)).collect() };
    s.beta = normals(s.beta.len(), rng);
    s.sigma_e_sq = unif(rng, 0.3, 3.0);
    s.area = match s.area {
        AreaState::Leroux { .. } => AreaState::Leroux {
            psi: normals(k, rng),
            tau_sq: unif(rng, 0.2, 4.0),
            rho: if model.family() == Family::Cl2 { 0.0 } else { unif(rng, 0.05, 0.95) },
        },
        AreaState::CarAnova { .. } => AreaState::CarAnova {
            phi: normals(k, rng),
            delta: normals(model.num_periods(), rng),
            omega: normals(nk, rng),
            tau_s_sq: unif(rng, 0.2, 4.0),
            tau_t_sq: unif(rng, 0.2, 4.0),
            sigma_omega_sq: unif(rng, 0.2, 4.0),
            rho_s: unif(rng, 0.05, 0.95),
            rho_t: unif(rng, 0.05, 0.95),
        },
        AreaState::Conv { .. } => AreaState::Conv {
            phi: normals(nk, rng),
            omega: normals(nk, rng),
            tau_sq_t: (0..model.num_periods()).map(|_| unif(rng, 0.2, 4.0)).collect(),
            sigma_omega_sq_t: (0..model.num_periods()).map(|_| unif(rng, 0.2, 4.0)).collect(),
        },
        AreaState::Growth { .. } => AreaState::Growth {
            u0: normals(k, rng),
            u1: normals(k, rng),
            sigma_u0_sq: unif(rng, 0.2, 4.0),
            sigma_u1_sq: unif(rng, 0.2, 4.0),
        },
    };
    if let Some(ind) = &s.individual {
        let n = ind.r0.len();
        let a = unif(rng, 0.3, 2.0);
        let c = unif(rng, 0.3, 2.0);
        let b = unif(rng, -0.9, 0.9) * (a * c).sqrt();
        s.individual = Some(IndividualState {
            r0: normals(n, rng),
            r1: normals(n, rng),
            cov: [a, b, c],
        });
    }
    s
}

fn dense_laplacian(graph: &SpatialGraph) -> DMatrix<f64> {
    let k = graph.num_areas();
    DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            (0..k).filter(|&c| graph.has_edge(a, c)).count() as f64
        } else if graph.has_edge(a, b) {
            -1.0
        } else {
            0.0
        }
    })
}

fn path_laplacian(n: usize) -> DMatrix<f64> {
    dense_laplacian(&SpatialGraph::path(n).unwrap())
}

fn log_det(m: &DMatrix<f64>) -> f64 {
    2.0 * m.clone().cholesky().unwrap().l().diagonal().map(|d| d.ln()).sum()
}

/// Log density of `N(0, tau_sq (rho R + (1 - rho) I)^-1)`, constants in
/// `x` and `tau_sq` kept.
fn leroux_log_prior(r: &DMatrix<f64>, x: &[f64], rho: f64, tau_sq: f64) -> f64 {
    let k = r.nrows();
    let q = r * rho + DMatrix::identity(k, k) * (1.0 - rho);
    let v = DVector::from_column_slice(x);
    0.5 * log_det(&q) - 0.5 * k as f64 * tau_sq.ln() - (v.transpose() * &q * &v)[0] / (2.0 * tau_sq)
}

fn ig_log_prior(v: f64, a: f64, b: f64) -> f64 {
    -(a + 1.0) * v.ln() - b / v
}

fn normal_log(x: f64, var: f64) -> f64 {
    -0.5 * var.ln() - x * x / (2.0 * var)
}

/// Log joint posterior kernel (likelihood times priors), evaluated densely.
pub fn log_joint(p: &Problem, s: &ModelState) -> f64 {
    let d = &p.data;
    let pr = &p.spec.priors;
    let fam = p.spec.family;
    let k = d.num_areas();
    let n_t = d.num_periods();
    let g = |t: usize| p.spec.time_trend.eval(t);

    let cell_effect = |t: usize, j: usize| -> f64 {
        match &s.area {
            AreaState::Leroux { psi, .. } => psi[j],
            AreaState::CarAnova { phi, delta, omega, .. } => phi[j] + delta[t] + omega[t * k + j],
            AreaState::Conv { phi, omega, .. } => phi[t * k + j] + omega[t * k + j],
            AreaState::Growth { u0, u1, .. } => u0[j] + g(t) * u1[j],
        }
    };
    let mut lp = 0.0;
    for o in 0..d.len() {
        let t = d.periods()[o];
        let j = d.areas()[o];
        let mut x = vec![1.0];
        x.extend(d.covariates().iter().map(|c| c.values[o]));
        if fam.is_longitudinal() {
            x.push(g(t));
        }
        let mut mu: f64 = x.iter().zip(&s.beta).map(|(a, b)| a * b).sum();
        mu += cell_effect(t, j);
        if let Some(ind) = &s.individual {
            let i = d.individuals()[o];
            mu += ind.r0[i] + g(t) * ind.r1[i];
        }
        lp += normal_log(d.y()[o] - mu, s.sigma_e_sq);
    }
    let sd2 = pr.beta_prior_sd * pr.beta_prior_sd;
    lp += s.beta.iter().map(|b| -b * b / (2.0 * sd2)).sum::<f64>();
    lp += ig_log_prior(s.sigma_e_sq, pr.a, pr.b);

    let r = dense_laplacian(&p.graph);
    match &s.area {
        AreaState::Leroux { psi, tau_sq, rho } => {
            let rr = if fam == Family::Cl2 { DMatrix::zeros(k, k) } else { r.clone() };
            lp += leroux_log_prior(&rr, psi, *rho, *tau_sq);
            if fam == Family::Rcar {
                // effects live on the (K - q)-dimensional complement of the
                // intercept and area-level columns
                let q = 1 + d.covariates().iter().filter(|c| c.level == CovariateLevel::Area).count();
                lp += 0.5 * q as f64 * tau_sq.ln();
            }
            lp += ig_log_prior(*tau_sq, pr.a, pr.b);
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
            lp += leroux_log_prior(&r, phi, *rho_s, *tau_s_sq);
            lp += leroux_log_prior(&path_laplacian(n_t), delta, *rho_t, *tau_t_sq);
            lp += omega.iter().map(|w| normal_log(*w, *sigma_omega_sq)).sum::<f64>();
            lp += ig_log_prior(*tau_s_sq, pr.a, pr.b)
                + ig_log_prior(*tau_t_sq, pr.a, pr.b)
                + ig_log_prior(*sigma_omega_sq, pr.a, pr.b);
        }
        AreaState::Conv {
            phi,
            omega,
            tau_sq_t,
            sigma_omega_sq_t,
        } => {
            let mut m = r.clone();
            for j in 0..k {
                if m[(j, j)] == 0.0 {
                    m[(j, j)] = 1.0;
                }
            }
            let rank = m.symmetric_eigenvalues().iter().filter(|&&e| e > 1e-9).count() as f64;
            for t in 0..n_t {
                let v = DVector::from_column_slice(&phi[t * k..(t + 1) * k]);
                lp += -0.5 * rank * tau_sq_t[t].ln() - (v.transpose() * &m * &v)[0] / (2.0 * tau_sq_t[t]);
                lp += omega[t * k..(t + 1) * k].iter().map(|w| normal_log(*w, sigma_omega_sq_t[t])).sum::<f64>();
                lp += ig_log_prior(tau_sq_t[t], pr.a, pr.b) + ig_log_prior(sigma_omega_sq_t[t], pr.a, pr.b);
            }
        }
        AreaState::Growth {
            u0,
            u1,
            sigma_u0_sq,
            sigma_u1_sq,
        } => {
            lp += u0.iter().map(|u| normal_log(*u, *sigma_u0_sq)).sum::<f64>();
            lp += u1.iter().map(|u| normal_log(*u, *sigma_u1_sq)).sum::<f64>();
            lp += ig_log_prior(*sigma_u0_sq, pr.a, pr.b) + ig_log_prior(*sigma_u1_sq, pr.a, pr.b);
        }
    }
    if let Some(ind) = &s.individual {
        let cov = ind.cov_matrix();
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        for (a, b) in ind.r0.iter().zip(&ind.r1) {
            let v = DVector::from_vec(vec![*a, *b]);
            lp += -0.5 * det.ln() - 0.5 * (v.transpose() * &inv * &v)[0];
        }
        let scale = DMatrix::identity(2, 2) * pr.wishart_scale;
        lp += -(pr.wishart_df + 3.0) / 2.0 * det.ln() - 0.5 * (scale * inv).trace();
    }
    lp
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Largest discrepancy between a scalar normal conditional and the joint.
fn check_scalar(
    p: &Problem,
    s: &ModelState,
    set: impl Fn(&mut ModelState, f64),
    get: impl Fn(&ModelState) -> f64,
    mean: f64,
    var: f64,
) -> f64 {
    let x0 = get(s);
    let f = |x: f64| {
        let mut t = s.clone();
        set(&mut t, x);
        log_joint(p, &t)
    };
    let (fp, f0, fm) = (f(x0 + 1.0), f(x0), f(x0 - 1.0));
    let v = -1.0 / (fp - 2.0 * f0 + fm);
    let m = x0 + (fp - fm) / 2.0 * v;
    rel(m, mean).max(rel(v, var))
}

/// Largest discrepancy for a Gaussian block conditional.
fn check_block(
    p: &Problem,
    s: &ModelState,
    set: impl Fn(&mut ModelState, &[f64]),
    x0: Vec<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
) -> f64 {
    let d = x0.len();
    let f = |delta: &[(usize, f64)]| {
        let mut x = x0.clone();
        for &(i, h) in delta {
            x[i] += h;
        }
        let mut t = s.clone();
        set(&mut t, &x);
        log_joint(p, &t)
    };
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for a in 0..d {
        grad[a] = (f(&[(a, 1.0)]) - f(&[(a, -1.0)])) / 2.0;
        for b in 0..d {
            hess[(a, b)] = if a == b {
                f(&[(a, 1.0)]) - 2.0 * f(&[]) + f(&[(a, -1.0)])
            } else {
                (f(&[(a, 1.0), (b, 1.0)]) - f(&[(a, 1.0), (b, -1.0)]) - f(&[(a, -1.0), (b, 1.0)])
                    + f(&[(a, -1.0), (b, -1.0)]))
                    / 4.0
            };
        }
    }
    let oracle_cov = (-hess).try_inverse().unwrap();
    let oracle_mean = DVector::from_vec(x0) + &oracle_cov * grad;
    let mut err: f64 = 0.0;
    for a in 0..d {
        err = err.max(rel(oracle_mean[a], mean[a]));
        for b in 0..d {
            err = err.max(rel(oracle_cov[(a, b)], cov[(a, b)]));
        }
    }
    err
}

/// Fits the inverse-gamma kernel through three points of the joint.
fn check_variance(p: &Problem, s: &ModelState, set: impl Fn(&mut ModelState, f64), v0: f64, shape: f64, scale: f64) -> f64 {
    let pts = [0.5 * v0, v0, 2.0 * v0];
    let mut a = DMatrix::zeros(3, 3);
    let mut rhs = DVector::zeros(3);
    for (r, &v) in pts.iter().enumerate() {
        let mut t = s.clone();
        set(&mut t, v);
        a[(r, 0)] = -v.ln();
        a[(r, 1)] = -1.0 / v;
        a[(r, 2)] = 1.0;
        rhs[r] = log_joint(p, &t);
    }
    let sol = a.lu().solve(&rhs).unwrap();
    rel(sol[0] - 1.0, shape).max(rel(sol[1], scale))
}

fn set_variance(s: &mut ModelState, which: VarianceParam, v: f64) {
    match (&mut s.area, which) {
        (_, VarianceParam::SigmaE) => s.sigma_e_sq = v,
        (AreaState::Leroux { tau_sq, .. }, VarianceParam::TauSq) => *tau_sq = v,
        (AreaState::CarAnova { tau_s_sq, .. }, VarianceParam::TauSSq) => *tau_s_sq = v,
        (AreaState::CarAnova { tau_t_sq, .. }, VarianceParam::TauTSq) => *tau_t_sq = v,
        (AreaState::CarAnova { sigma_omega_sq, .. }, VarianceParam::SigmaOmegaSq) => *sigma_omega_sq = v,
        (AreaState::Conv { tau_sq_t, .. }, VarianceParam::TauSqT(t)) => tau_sq_t[t] = v,
        (AreaState::Conv { sigma_omega_sq_t, .. }, VarianceParam::SigmaOmegaSqT(t)) => sigma_omega_sq_t[t] = v,
        (AreaState::Growth { sigma_u0_sq, .. }, VarianceParam::SigmaU0Sq) => *sigma_u0_sq = v,
        (AreaState::Growth { sigma_u1_sq, .. }, VarianceParam::SigmaU1Sq) => *sigma_u1_sq = v,
        _ => panic!("variance {which:?} not in state"),
    }
}

fn get_variance(s: &ModelState, which: VarianceParam) -> f64 {
    match (&s.area, which) {
        (_, VarianceParam::SigmaE) => s.sigma_e_sq,
        (AreaState::Leroux { tau_sq, .. }, VarianceParam::TauSq) => *tau_sq,
        (AreaState::CarAnova { tau_s_sq, .. }, VarianceParam::TauSSq) => *tau_s_sq,
        (AreaState::CarAnova { tau_t_sq, .. }, VarianceParam::TauTSq) => *tau_t_sq,
        (AreaState::CarAnova { sigma_omega_sq, .. }, VarianceParam::SigmaOmegaSq) => *sigma_omega_sq,
        (AreaState::Conv { tau_sq_t, .. }, VarianceParam::TauSqT(t)) => tau_sq_t[t],
        (AreaState::Conv { sigma_omega_sq_t, .. }, VarianceParam::SigmaOmegaSqT(t)) => sigma_omega_sq_t[t],
        (AreaState::Growth { sigma_u0_sq, .. }, VarianceParam::SigmaU0Sq) => *sigma_u0_sq,
        (AreaState::Growth { sigma_u1_sq, .. }, VarianceParam::SigmaU1Sq) => *sigma_u1_sq,
        _ => panic!("variance {which:?} not in state"),
    }
}

fn set_site(s: &mut ModelState, site: AreaSite, k: usize, v: f64) {
    match (&mut s.area, site) {
        (AreaState::Leroux { psi, .. }, AreaSite::Psi(j)) => psi[j] = v,
        (AreaState::CarAnova { phi, .. }, AreaSite::Phi(j)) => phi[j] = v,
        (AreaState::CarAnova { delta, .. }, AreaSite::Delta(t)) => delta[t] = v,
        (AreaState::CarAnova { omega, .. }, AreaSite::Omega { t, j }) => omega[t * k + j] = v,
        (AreaState::Conv { phi, .. }, AreaSite::PhiT { t, j }) => phi[t * k + j] = v,
        (AreaState::Conv { omega, .. }, AreaSite::OmegaT { t, j }) => omega[t * k + j] = v,
        _ => panic!("site {site:?} not in state"),
    }
}

fn get_site(s: &ModelState, site: AreaSite, k: usize) -> f64 {
    match (&s.area, site) {
        (AreaState::Leroux { psi, .. }, AreaSite::Psi(j)) => psi[j],
        (AreaState::CarAnova { phi, .. }, AreaSite::Phi(j)) => phi[j],
        (AreaState::CarAnova { delta, .. }, AreaSite::Delta(t)) => delta[t],
        (AreaState::CarAnova { omega, .. }, AreaSite::Omega { t, j }) => omega[t * k + j],
        (AreaState::Conv { phi, .. }, AreaSite::PhiT { t, j }) => phi[t * k + j],
        (AreaState::Conv { omega, .. }, AreaSite::OmegaT { t, j }) => omega[t * k + j],
        _ => panic!("site {site:?} not in state"),
    }
}

fn set_rho(s: &mut ModelState, which: RhoParam, v: f64) {
    match (&mut s.area, which) {
        (AreaState::Leroux { rho, .. }, RhoParam::Rho) => *rho = v,
        (AreaState::CarAnova { rho_s, .. }, RhoParam::RhoS) => *rho_s = v,
        (AreaState::CarAnova { rho_t, .. }, RhoParam::RhoT) => *rho_t = v,
        _ => panic!("rho {which:?} not in state"),
    }
}

/// Scalar area sites of the family.
pub fn sites(model: &Model) -> Vec<AreaSite> {
    let k = model.num_areas();
    let n_t = model.num_periods();
    match model.family() {
        Family::Cl2 | Family::Car | Family::Rcar => (0..k).map(AreaSite::Psi).collect(),
        Family::CarAnova => (0..k)
            .map(AreaSite::Phi)
            .chain((0..n_t).map(AreaSite::Delta))
            .chain((0..n_t).flat_map(|t| (0..k).map(move |j| AreaSite::Omega { t, j })))
            .collect(),
        Family::Conv => (0..n_t)
            .flat_map(|t| (0..k).flat_map(move |j| [AreaSite::PhiT { t, j }, AreaSite::OmegaT { t, j }]))
            .collect(),
        Family::Cl3 => Vec::new(),
    }
}

/// Checks every full conditional of `model` at `state` against the dense
/// joint and returns the largest relative discrepancy with its label.
pub fn max_conditional_error(p: &Problem, model: &Model, s: &ModelState) -> (f64, String) {
    let k = model.num_areas();
    let mut worst = (0.0f64, String::new());
    let mut note = |e: f64, what: String| {
        if !(e <= worst.0) {
            worst = (e, what);
        }
    };

    let c = model.fixed_effects_conditional(s);
    note(
        check_block(p, s, |t, x| t.beta = x.to_vec(), s.beta.clone(), c.mean().unwrap(), c.covariance().unwrap()),
        "beta".into(),
    );

    if let AreaState::CarAnova { delta, .. } = &s.area {
        let c = model.fixed_temporal_conditional(s).unwrap();
        let p_beta = s.beta.len();
        let set = move |t: &mut ModelState, x: &[f64]| {
            t.beta = x[..p_beta].to_vec();
            if let AreaState::CarAnova { delta, .. } = &mut t.area {
                delta.copy_from_slice(&x[p_beta..]);
            }
        };
        let x0 = s.beta.iter().chain(delta).copied().collect();
        note(
            check_block(p, s, set, x0, c.mean().unwrap(), c.covariance().unwrap()),
            "beta+delta".into(),
        );
    }

    if let AreaState::Conv { phi, omega, .. } = &s.area {
        for t in 0..model.num_periods() {
            for j in 0..k {
                let cell = t * k + j;
                let c = model.cell_pair_conditional(s, t, j).unwrap();
                let set = move |st: &mut ModelState, x: &[f64]| {
                    if let AreaState::Conv { phi, omega, .. } = &mut st.area {
                        phi[cell] = x[0];
                        omega[cell] = x[1];
                    }
                };
                note(
                    check_block(p, s, set, vec![phi[cell], omega[cell]], c.mean().unwrap(), c.covariance().unwrap()),
                    format!("cell pair ({t}, {j})"),
                );
            }
        }
    }

    for site in sites(model) {
        let c = model.area_site_conditional(s, site).unwrap();
        note(
            check_scalar(p, s, |t, v| set_site(t, site, k, v), |t| get_site(t, site, k), c.mean, c.variance),
            format!("{site:?}"),
        );
    }

    if let AreaState::Growth { u0, u1, .. } = &s.area {
        for j in 0..k {
            let c = model.growth_conditional(s, j).unwrap();
            let set = move |t: &mut ModelState, x: &[f64]| {
                if let AreaState::Growth { u0, u1, .. } = &mut t.area {
                    u0[j] = x[0];
                    u1[j] = x[1];
                }
            };
            note(
                check_block(p, s, set, vec![u0[j], u1[j]], c.mean().unwrap(), c.covariance().unwrap()),
                format!("growth {j}"),
            );
        }
    }

    if let Some(ind) = &s.individual {
        for i in 0..ind.r0.len() {
            let c = model.individual_conditional(s, i).unwrap();
            let set = move |t: &mut ModelState, x: &[f64]| {
                let ind = t.individual.as_mut().unwrap();
                ind.r0[i] = x[0];
                ind.r1[i] = x[1];
            };
            note(
                check_block(p, s, set, vec![ind.r0[i], ind.r1[i]], c.mean().unwrap(), c.covariance().unwrap()),
                format!("individual {i}"),
            );
        }
        // inverse-Wishart: compare log-density differences between two covariances
        let (df, scale) = model.individual_covariance_conditional(s).unwrap();
        let iw = |m: &DMatrix<f64>| {
            -(df + 3.0) / 2.0 * m.determinant().ln() - 0.5 * (&scale * m.clone().try_inverse().unwrap()).trace()
        };
        let joint_at = |cov: [f64; 3]| {
            let mut t = s.clone();
            t.individual.as_mut().unwrap().cov = cov;
            log_joint(p, &t)
        };
        let c1 = [0.7, 0.2, 1.3];
        let c2 = [1.9, -0.4, 0.6];
        let m = |c: [f64; 3]| DMatrix::from_row_slice(2, 2, &[c[0], c[1], c[1], c[2]]);
        note(
            rel(joint_at(c1) - joint_at(c2), iw(&m(c1)) - iw(&m(c2))),
            "individual covariance".into(),
        );
        // scale moves: joint at the transformed state plus the log Jacobian
        let n = ind.r0.len() as f64;
        for comp in 0..2 {
            let moved = |u: f64| {
                let c = u.exp();
                let mut t = s.clone();
                let ind = t.individual.as_mut().unwrap();
                let r = if comp == 0 { &mut ind.r0 } else { &mut ind.r1 };
                r.iter_mut().for_each(|v| *v *= c);
                ind.cov[1] *= c;
                ind.cov[if comp == 0 { 0 } else { 2 }] *= c * c;
                log_joint(p, &t) + (n + 3.0) * u
            };
            let target = |u: f64| model.individual_scale_log_density(s, comp, u).unwrap();
            for (u1, u2) in [(0.3, -0.4), (1.2, 0.1)] {
                note(rel(moved(u1) - moved(u2), target(u1) - target(u2)), format!("individual scale {comp}"));
            }
        }
        // collapsed (sigma_e_sq, cov): p(., r | rest) / prod_i p(r_i | ., rest)
        let marginal = |v: f64, cov: [f64; 3]| {
            let mut t = s.clone();
            t.sigma_e_sq = v;
            t.individual.as_mut().unwrap().cov = cov;
            let mut out = log_joint(p, &t);
            let r = t.individual.as_ref().unwrap();
            for i in 0..r.r0.len() {
                let c = model.individual_conditional(&t, i).unwrap();
                let d = DVector::from_row_slice(&[r.r0[i], r.r1[i]]) - c.mean().unwrap();
                out -= 0.5 * c.precision.determinant().ln() - 0.5 * (d.transpose() * &c.precision * &d)[0];
            }
            out
        };
        let collapsed = |v: f64, cov: [f64; 3]| model.collapsed_individual_log_density(s, v, cov).unwrap();
        for ((v1, c1), (v2, c2)) in [((0.5, [0.7, 0.2, 1.3]), (2.0, [1.9, -0.4, 0.6])), ((1.3, ind.cov), (0.2, ind.cov))] {
            note(
                rel(marginal(v1, c1) - marginal(v2, c2), collapsed(v1, c1) - collapsed(v2, c2)),
                "collapsed individual variances".into(),
            );
        }
        for comp in 0..2 {
            let c = model.individual_shear_conditional(s, comp).unwrap();
            let sheared = |a: f64| {
                let mut t = s.clone();
                model.apply_individual_shear(&mut t, comp, a);
                log_joint(p, &t)
            };
            let normal = |a: f64| -(a - c.mean).powi(2) / (2.0 * c.variance);
            for (a1, a2) in [(0.3, -0.4), (1.2, 0.1)] {
                note(rel(sheared(a1) - sheared(a2), normal(a1) - normal(a2)), format!("individual shear {comp}"));
            }
        }
    }

    if model.area_shift_dim() > 0 {
        for j in 0..k {
            let c = model.area_shift_conditional(s, j).unwrap();
            let set = |t: &mut ModelState, x: &[f64]| model.apply_area_shift(t, j, x);
            note(
                check_block(p, s, set, vec![0.0; model.area_shift_dim()], c.mean().unwrap(), c.covariance().unwrap()),
                format!("area shift {j}"),
            );
        }
    }

    for which in model.variance_params() {
        let c = model.variance_conditional(s, which).unwrap();
        note(
            check_variance(p, s, |t, v| set_variance(t, which, v), get_variance(s, which), c.shape, c.scale),
            which.name(),
        );
    }

    for which in model.rho_params() {
        let joint_at = |r: f64| {
            let mut t = s.clone();
            set_rho(&mut t, which, r);
            log_joint(p, &t)
        };
        for (r1, r2) in [(0.1, 0.6), (0.3, 0.95), (0.02, 0.5)] {
            let lhs = joint_at(r1) - joint_at(r2);
            let rhs = model.rho_log_density(s, which, r1).unwrap() - model.rho_log_density(s, which, r2).unwrap();
            note(rel(lhs, rhs), which.name().to_string());
        }
    }
    worst
}

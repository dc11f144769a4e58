//! Model-quality metrics across replicates: bias, RMSE, coverage and DIC.
//!
//! DIC uses the deviance conditional on the random effects,
//! `D = -2 log p(y | beta, effects, sigma_e^2)`, with `D(theta_bar)` evaluated
//! at the posterior means of every scalar and latent quantity.
//!
//! Report files (wide tables have one column per model, in fit order):
//!
//! * `rmse_by_scenario.csv`: `scenario,coefficient,truth,<model>...`, RMSE or
//!   `NA` when only one replicate is available.
//! * `coverage_by_scenario.csv`: `scenario,coefficient,truth,<model>...`.
//! * `dic_by_scenario.csv`: `scenario,<model>...`, median DIC over replicates.
//! * `coefficients_by_scenario.csv`: `scenario,model,coefficient,truth,
//!   replicates,bias,rmse,coverage_95,posterior_median,ci_2_5,ci_97_5`.
//! * `fits_by_scenario.csv`: `scenario,model,replicates,dic,p_d,
//!   mean_deviance,max_posterior_loglik`, medians over replicates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::models::Family;

/// Minimum draws accepted by [`summarize_posterior`].
pub const MIN_SUMMARY_DRAWS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRmse {
    pub bias: f64,
    /// Sample variance of the estimates; `None` with fewer than 2 replicates.
    pub variance: Option<f64>,
    pub rmse: Option<f64>,
}

/// `bias = |mean - truth|`, `rmse = sqrt(bias^2 + s^2)` with the sample
/// variance `s^2` (divisor `R - 1`).
pub fn bias_rmse(estimates: &[f64], truth: f64) -> Result<BiasRmse> {
    if estimates.is_empty() || !truth.is_finite() || estimates.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("bias needs finite estimates and truth".into()));
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let bias = (mean - truth).abs();
    if estimates.len() < 2 {
        return Ok(BiasRmse {
            bias,
            variance: None,
            rmse: None,
        });
    }
    let var = estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(BiasRmse {
        bias,
        variance: Some(var),
        rmse: Some((bias * bias + var).sqrt()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
}

pub fn dic(deviance_draws: &[f64], deviance_at_mean: f64) -> Result<Dic> {
    if deviance_draws.is_empty() {
        return Err(Error::InvalidParameter("empty deviance trace".into()));
    }
    let mean_deviance = deviance_draws.iter().sum::<f64>() / deviance_draws.len() as f64;
    let p_d = mean_deviance - deviance_at_mean;
    Ok(Dic {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
    })
}

/// Fraction of intervals `(lo, hi)` containing `truth`.
pub fn coverage(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InvalidParameter("no intervals".into()));
    }
    if let Some((lo, hi)) = intervals.iter().find(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidParameter(format!("malformed interval ({lo}, {hi})")));
    }
    let hits = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
    Ok(hits as f64 / intervals.len() as f64)
}

/// Empirical quantile of sorted data, interpolating linearly between order
/// statistics at position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub median: f64,
    pub ci_2_5: f64,
    pub ci_97_5: f64,
}

pub fn summarize_posterior(draws: &[f64]) -> Result<PosteriorSummary> {
    if draws.len() < MIN_SUMMARY_DRAWS {
        return Err(Error::InvalidParameter(format!(
            "posterior summary needs >= {MIN_SUMMARY_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(PosteriorSummary {
        median: quantile_sorted(&v, 0.5),
        ci_2_5: quantile_sorted(&v, 0.025),
        ci_97_5: quantile_sorted(&v, 0.975),
    })
}

/// Everything the comparison needs from one fitted replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub scenario: usize,
    pub replicate: usize,
    pub model: Family,
    /// Regression coefficients by design-column name.
    pub coefficients: Vec<(String, PosteriorSummary)>,
    pub dic: Dic,
    pub max_log_likelihood: f64,
    pub max_r_hat: Option<f64>,
    pub converged: bool,
    pub attempts: usize,
    pub iterations: usize,
    /// RCAR only: largest `|Z' psi|` over stored draws.
    pub max_abs_zt_psi: Option<f64>,
}

impl FitSummary {
    pub fn coefficient(&self, name: &str) -> Option<&PosteriorSummary> {
        self.coefficients.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("fit.scenario", self.scenario);
        doc.set("fit.replicate", self.replicate);
        doc.set("fit.model", self.model);
        doc.set("fit.coefficients", crate::kv::join(&self.coefficients.iter().map(|(n, _)| n).collect::<Vec<_>>()));
        for (name, s) in &self.coefficients {
            doc.set(format!("fit.coef.{name}.median"), s.median);
            doc.set(format!("fit.coef.{name}.ci_2_5"), s.ci_2_5);
            doc.set(format!("fit.coef.{name}.ci_97_5"), s.ci_97_5);
        }
        doc.set("fit.dic", self.dic.dic);
        doc.set("fit.p_d", self.dic.p_d);
        doc.set("fit.mean_deviance", self.dic.mean_deviance);
        doc.set("fit.max_log_lik", self.max_log_likelihood);
        doc.set("fit.max_r_hat", self.max_r_hat.map_or("NA".to_string(), |r| r.to_string()));
        doc.set("fit.converged", self.converged);
        doc.set("fit.attempts", self.attempts);
        doc.set("fit.iterations", self.iterations);
        doc.set(
            "fit.max_abs_zt_psi",
            self.max_abs_zt_psi.map_or("NA".to_string(), |r| r.to_string()),
        );
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let opt = |key: &str| -> Result<Option<f64>> {
            match doc.require(key)? {
                "NA" => Ok(None),
                _ => doc.parse_value(key).map(Some),
            }
        };
        let names: Vec<String> = crate::kv::split(doc.require("fit.coefficients")?)?;
        let coefficients = names
            .into_iter()
            .map(|n| {
                let s = PosteriorSummary {
                    median: doc.parse_value(&format!("fit.coef.{n}.median"))?,
                    ci_2_5: doc.parse_value(&format!("fit.coef.{n}.ci_2_5"))?,
                    ci_97_5: doc.parse_value(&format!("fit.coef.{n}.ci_97_5"))?,
                };
                Ok((n, s))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scenario: doc.parse_value("fit.scenario")?,
            replicate: doc.parse_value("fit.replicate")?,
            model: doc.parse_value("fit.model")?,
            coefficients,
            dic: Dic {
                dic: doc.parse_value("fit.dic")?,
                p_d: doc.parse_value("fit.p_d")?,
                mean_deviance: doc.parse_value("fit.mean_deviance")?,
            },
            max_log_likelihood: doc.parse_value("fit.max_log_lik")?,
            max_r_hat: opt("fit.max_r_hat")?,
            converged: doc.parse_value("fit.converged")?,
            attempts: doc.parse_value("fit.attempts")?,
            iterations: doc.parse_value("fit.iterations")?,
            max_abs_zt_psi: opt("fit.max_abs_zt_psi")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientComparison {
    pub scenario: usize,
    pub model: Family,
    pub coefficient: String,
    pub truth: f64,
    pub replicates: usize,
    pub bias: f64,
    pub rmse: Option<f64>,
    pub coverage_95: f64,
    /// Medians over replicates of the per-replicate summaries.
    pub posterior_median: f64,
    pub ci_2_5: f64,
    pub ci_97_5: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitComparison {
    pub scenario: usize,
    pub model: Family,
    pub replicates: usize,
    /// Medians over replicates.
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub max_posterior_loglik: f64,
    pub dic_q25: f64,
    pub dic_q75: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub coefficients: Vec<CoefficientComparison>,
    pub fits: Vec<FitComparison>,
    pub warnings: Vec<String>,
}

/// True coefficient values per scenario.
pub type TruthTable = BTreeMap<usize, Vec<(String, f64)>>;

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

impl ComparisonReport {
    /// Aggregates replicate fits by (scenario, model). Models appear in
    /// first-seen order; scenarios ascend.
    pub fn build(fits: &[FitSummary], truth: &TruthTable) -> Result<Self> {
        let mut report = Self::default();
        let mut models: Vec<Family> = Vec::new();
        for f in fits {
            if !models.contains(&f.model) {
                models.push(f.model);
            }
        }
        let scenarios: Vec<usize> = {
            let mut s: Vec<usize> = fits.iter().map(|f| f.scenario).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        for &sc in &scenarios {
            let coefs = truth
                .get(&sc)
                .ok_or_else(|| Error::Mismatch(format!("no truth for scenario {sc}")))?;
            for &model in &models {
                let group: Vec<&FitSummary> = fits.iter().filter(|f| f.scenario == sc && f.model == model).collect();
                if group.is_empty() {
                    continue;
                }
                if group.len() < 2 {
                    report.warnings.push(format!(
                        "scenario {sc}, {model}: 1 replicate, RMSE undefined (bias only)"
                    ));
                }
                for (name, value) in coefs {
                    let sums: Vec<PosteriorSummary> = group
                        .iter()
                        .map(|f| {
                            f.coefficient(name).copied().ok_or_else(|| {
                                Error::Mismatch(format!("{model} fit has no coefficient `{name}`"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let med: Vec<f64> = sums.iter().map(|s| s.median).collect();
                    let br = bias_rmse(&med, *value)?;
                    let intervals: Vec<(f64, f64)> = sums.iter().map(|s| (s.ci_2_5, s.ci_97_5)).collect();
                    report.coefficients.push(CoefficientComparison {
                        scenario: sc,
                        model,
                        coefficient: name.clone(),
                        truth: *value,
                        replicates: group.len(),
                        bias: br.bias,
                        rmse: br.rmse,
                        coverage_95: coverage(&intervals, *value)?,
                        posterior_median: median(&med),
                        ci_2_5: median(&sums.iter().map(|s| s.ci_2_5).collect::<Vec<_>>()),
                        ci_97_5: median(&sums.iter().map(|s| s.ci_97_5).collect::<Vec<_>>()),
                    });
                }
                let mut dics: Vec<f64> = group.iter().map(|f| f.dic.dic).collect();
                dics.sort_by(f64::total_cmp);
                report.fits.push(FitComparison {
                    scenario: sc,
                    model,
                    replicates: group.len(),
                    dic: quantile_sorted(&dics, 0.5),
                    p_d: median(&group.iter().map(|f| f.dic.p_d).collect::<Vec<_>>()),
                    mean_deviance: median(&group.iter().map(|f| f.dic.mean_deviance).collect::<Vec<_>>()),
                    max_posterior_loglik: median(&group.iter().map(|f| f.max_log_likelihood).collect::<Vec<_>>()),
                    dic_q25: quantile_sorted(&dics, 0.25),
                    dic_q75: quantile_sorted(&dics, 0.75),
                });
            }
        }
        Ok(report)
    }

    pub fn models(&self) -> Vec<Family> {
        let mut out = Vec::new();
        for f in &self.fits {
            if !out.contains(&f.model) {
                out.push(f.model);
            }
        }
        out
    }

    pub fn scenarios(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.fits.iter().map(|f| f.scenario).collect();
        s.dedup();
        s
    }

    pub fn coefficient(&self, scenario: usize, model: Family, name: &str) -> Option<&CoefficientComparison> {
        self.coefficients
            .iter()
            .find(|c| c.scenario == scenario && c.model == model && c.coefficient == name)
    }

    pub fn fit(&self, scenario: usize, model: Family) -> Option<&FitComparison> {
        self.fits.iter().find(|f| f.scenario == scenario && f.model == model)
    }

    fn wide(&self, value: impl Fn(&CoefficientComparison) -> String) -> String {
        let models = self.models();
        let mut out = String::from("scenario,coefficient,truth");
        for m in &models {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        let mut keys: Vec<(usize, &str, f64)> = Vec::new();
        for c in &self.coefficients {
            if !keys.iter().any(|(s, n, _)| *s == c.scenario && *n == c.coefficient) {
                keys.push((c.scenario, &c.coefficient, c.truth));
            }
        }
        for (sc, name, truth) in keys {
            write!(out, "{sc},{name},{truth}").unwrap();
            for m in &models {
                let cell = self.coefficient(sc, *m, name).map_or("NA".to_string(), &value);
                write!(out, ",{cell}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn rmse_csv(&self) -> String {
        self.wide(|c| fmt_opt(c.rmse))
    }

    pub fn coverage_csv(&self) -> String {
        self.wide(|c| format!("{}", c.coverage_95))
    }

    pub fn dic_csv(&self) -> String {
        let models = self.models();
        let mut out = String::from("scenario");
        for m in &models {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        for sc in self.scenarios() {
            write!(out, "{sc}").unwrap();
            for m in &models {
                write!(out, ",{}", fmt_opt(self.fit(sc, *m).map(|f| f.dic))).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from(
            "scenario,model,coefficient,truth,replicates,bias,rmse,coverage_95,posterior_median,ci_2_5,ci_97_5\n",
        );
        for c in &self.coefficients {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.scenario,
                c.model,
                c.coefficient,
                c.truth,
                c.replicates,
                c.bias,
                fmt_opt(c.rmse),
                c.coverage_95,
                c.posterior_median,
                c.ci_2_5,
                c.ci_97_5
            )
            .unwrap();
        }
        out
    }

    pub fn fits_csv(&self) -> String {
        let mut out = String::from("scenario,model,replicates,dic,p_d,mean_deviance,max_posterior_loglik\n");
        for f in &self.fits {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.scenario, f.model, f.replicates, f.dic, f.p_d, f.mean_deviance, f.max_posterior_loglik
            )
            .unwrap();
        }
        out
    }

    /// Writes every report table into `dir` and returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            ("rmse_by_scenario.csv", self.rmse_csv()),
            ("coverage_by_scenario.csv", self.coverage_csv()),
            ("dic_by_scenario.csv", self.dic_csv()),
            ("coefficients_by_scenario.csv", self.coefficients_csv()),
            ("fits_by_scenario.csv", self.fits_csv()),
        ];
        let mut paths = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

/// Parses a wide table written by `rmse_csv`/`coverage_csv` into
/// `(scenario, coefficient, truth, [(model, value)])` rows.
#[allow(clippy::type_complexity)]
pub fn parse_wide_csv(text: &str) -> Result<Vec<(usize, String, f64, Vec<(Family, Option<f64>)>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty table"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[..3] != ["scenario", "coefficient", "truth"] {
        return Err(Error::parse(1, "expected scenario,coefficient,truth,<models>"));
    }
    let models: Vec<Family> = cols[3..].iter().map(|m| m.parse()).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(idx + 1, "wrong field count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(idx + 1, e));
        let values = models
            .iter()
            .zip(&f[3..])
            .map(|(m, v)| Ok((*m, if *v == "NA" { None } else { Some(num(v)?) })))
            .collect::<Result<_>>()?;
        rows.push((
            f[0].parse().map_err(|e| Error::parse(idx + 1, e))?,
            f[1].to_string(),
            num(f[2])?,
            values,
        ));
    }
    Ok(rows)
}

//! Long-format observation tables.
//!
//! CSV layout: header `t,i,j,y,<covariate names...>`. `t` is the 1-based
//! period, `i` an integer individual id, `j` the 1-based area index (the same
//! numbering as the adjacency files). A sidecar `<stem>.meta` in key=value
//! form records the geometry, covariate metadata and, for simulated data,
//! the generating truth.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateLevel {
    Individual,
    Area,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub level: CovariateLevel,
    pub time_varying: bool,
    pub values: Vec<f64>,
}

impl Covariate {
    fn describe(&self) -> String {
        let level = match self.level {
            CovariateLevel::Individual => "individual",
            CovariateLevel::Area => "area",
        };
        let tv = if self.time_varying {
            "time_varying"
        } else {
            "time_invariant"
        };
        format!("{level},{tv}")
    }
}

/// Observation table with dense 0-based period, individual and area indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LongDataset {
    num_areas: usize,
    num_periods: usize,
    individual_ids: Vec<u64>,
    period: Vec<usize>,
    individual: Vec<usize>,
    area: Vec<usize>,
    y: Vec<f64>,
    covariates: Vec<Covariate>,
}

/// One observation as seen by a reader.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow<'a> {
    pub period: usize,
    pub individual: usize,
    pub area: usize,
    pub y: f64,
    pub covariates: Vec<f64>,
    _data: std::marker::PhantomData<&'a ()>,
}

impl LongDataset {
    /// Validates and builds a dataset. `individual_ids[i]` is the external id
    /// of dense individual index `i`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_areas: usize,
        num_periods: usize,
        individual_ids: Vec<u64>,
        period: Vec<usize>,
        individual: Vec<usize>,
        area: Vec<usize>,
        y: Vec<f64>,
        covariates: Vec<Covariate>,
    ) -> Result<Self> {
        let n = y.len();
        if period.len() != n || individual.len() != n || area.len() != n {
            return Err(Error::Mismatch("observation columns differ in length".into()));
        }
        if n == 0 {
            return Err(Error::Mismatch("dataset has no observations".into()));
        }
        if num_areas == 0 || num_periods == 0 {
            return Err(Error::Mismatch("dataset needs K >= 1 and N >= 1".into()));
        }
        let mut names = HashSet::new();
        for c in &covariates {
            if c.values.len() != n {
                return Err(Error::Mismatch(format!(
                    "covariate `{}` has {} values for {n} observations",
                    c.name,
                    c.values.len()
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Mismatch(format!("covariate `{}` has non-finite values", c.name)));
            }
            if !names.insert(c.name.as_str()) || ["t", "i", "j", "y"].contains(&c.name.as_str()) {
                return Err(Error::Mismatch(format!("duplicate or reserved covariate name `{}`", c.name)));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for o in 0..n {
            if area[o] >= num_areas {
                return Err(Error::Mismatch(format!("observation {o}: area index {} >= K = {num_areas}", area[o])));
            }
            if period[o] >= num_periods {
                return Err(Error::Mismatch(format!(
                    "observation {o}: period index {} >= N = {num_periods}",
                    period[o]
                )));
            }
            if individual[o] >= individual_ids.len() {
                return Err(Error::Mismatch(format!("observation {o}: unknown individual")));
            }
            if !y[o].is_finite() {
                return Err(Error::Mismatch(format!("observation {o}: non-finite outcome")));
            }
            if !seen.insert((period[o], individual[o])) {
                return Err(Error::Mismatch(format!(
                    "individual {} observed twice in period {}",
                    individual_ids[individual[o]],
                    period[o] + 1
                )));
            }
        }
        Ok(Self {
            num_areas,
            num_periods,
            individual_ids,
            period,
            individual,
            area,
            y,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    pub fn num_individuals(&self) -> usize {
        self.individual_ids.len()
    }

    pub fn individual_ids(&self) -> &[u64] {
        &self.individual_ids
    }

    pub fn periods(&self) -> &[usize] {
        &self.period
    }

    pub fn individuals(&self) -> &[usize] {
        &self.individual
    }

    pub fn areas(&self) -> &[usize] {
        &self.area
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn row(&self, o: usize) -> ObservationRow<'_> {
        ObservationRow {
            period: self.period[o],
            individual: self.individual[o],
            area: self.area[o],
            y: self.y[o],
            covariates: self.covariates.iter().map(|c| c.values[o]).collect(),
            _data: std::marker::PhantomData,
        }
    }

    /// Distinct individuals per area (`n_j`). An individual seen in several
    /// areas counts once in each.
    pub fn individuals_per_area(&self) -> Vec<usize> {
        let mut sets: Vec<HashSet<usize>> = vec![HashSet::new(); self.num_areas];
        for o in 0..self.len() {
            sets[self.area[o]].insert(self.individual[o]);
        }
        sets.into_iter().map(|s| s.len()).collect()
    }

    /// Copy with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::Mismatch("outcome length differs".into()));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,j,y");
        for c in &self.covariates {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        for o in 0..self.len() {
            write!(
                out,
                "{},{},{},{}",
                self.period[o] + 1,
                self.individual_ids[self.individual[o]],
                self.area[o] + 1,
                self.y[o]
            )
            .unwrap();
            for c in &self.covariates {
                write!(out, ",{}", c.values[o]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Geometry and covariate metadata; callers append truth keys.
    pub fn metadata(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("num_areas", self.num_areas);
        doc.set("num_periods", self.num_periods);
        doc.set("num_individuals", self.num_individuals());
        doc.set("num_observations", self.len());
        for c in &self.covariates {
            doc.set(format!("covariate.{}", c.name), c.describe());
        }
        doc
    }

    /// Parses the CSV. Geometry and covariate levels come from `meta` when
    /// given; otherwise `K` and `N` are the largest indices seen and a
    /// covariate is area-level when constant within every (period, area) cell
    /// and time-varying when it changes within some individual.
    pub fn from_csv(text: &str, meta: Option<&KvDoc>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty dataset"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 || cols[..4] != ["t", "i", "j", "y"] {
            return Err(Error::parse(1, "header must start with `t,i,j,y`"));
        }
        let cov_names: Vec<String> = cols[4..].iter().map(|s| s.to_string()).collect();
        let mut period = Vec::new();
        let mut raw_ids = Vec::new();
        let mut area = Vec::new();
        let mut y = Vec::new();
        let mut cov_values: Vec<Vec<f64>> = vec![Vec::new(); cov_names.len()];
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::parse(lineno, format!("expected {} fields, got {}", cols.len(), fields.len())));
            }
            let t: usize = fields[0].parse().map_err(|e| Error::parse(lineno, e))?;
            let i: u64 = fields[1].parse().map_err(|e| Error::parse(lineno, e))?;
            let j: usize = fields[2].parse().map_err(|e| Error::parse(lineno, e))?;
            if t == 0 || j == 0 {
                return Err(Error::parse(lineno, "t and j are 1-based"));
            }
            period.push(t - 1);
            raw_ids.push(i);
            area.push(j - 1);
            y.push(fields[3].parse::<f64>().map_err(|e| Error::parse(lineno, e))?);
            for (c, f) in cov_values.iter_mut().zip(&fields[4..]) {
                c.push(f.parse::<f64>().map_err(|e| Error::parse(lineno, e))?);
            }
        }
        let mut ids: Vec<u64> = raw_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let individual: Vec<usize> = raw_ids.iter().map(|id| index[id]).collect();

        let (num_areas, num_periods) = match meta {
            Some(m) => (m.parse_value("num_areas")?, m.parse_value("num_periods")?),
            None => (
                area.iter().max().map_or(0, |m| m + 1),
                period.iter().max().map_or(0, |m| m + 1),
            ),
        };
        let mut covariates = Vec::with_capacity(cov_names.len());
        for (name, values) in cov_names.into_iter().zip(cov_values) {
            let described = meta.and_then(|m| m.get(&format!("covariate.{name}")));
            let (level, time_varying) = match described {
                Some(d) => parse_description(d)?,
                None => infer_description(&values, &period, &individual, &area),
            };
            covariates.push(Covariate {
                name,
                level,
                time_varying,
                values,
            });
        }
        Self::new(num_areas, num_periods, ids, period, individual, area, y, covariates)
    }

    /// Writes `<path>` and its `.meta` sidecar (metadata plus `extra`).
    pub fn write(&self, path: &Path, extra: &KvDoc) -> Result<()> {
        fs::write(path, self.to_csv())?;
        let mut meta = self.metadata();
        for (k, v) in extra.iter() {
            meta.set(k, v);
        }
        meta.write(&sidecar_path(path))
    }

    /// Reads a dataset, using its `.meta` sidecar when present.
    pub fn read(path: &Path) -> Result<(Self, Option<KvDoc>)> {
        let text = fs::read_to_string(path)?;
        let meta_path = sidecar_path(path);
        let meta = if meta_path.exists() {
            Some(KvDoc::read(&meta_path)?)
        } else {
            None
        };
        Ok((Self::from_csv(&text, meta.as_ref())?, meta))
    }
}

/// `data.csv` -> `data.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

fn parse_description(d: &str) -> Result<(CovariateLevel, bool)> {
    let (level, tv) = d
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("covariate description `{d}`")))?;
    let level = match level.trim() {
        "individual" => CovariateLevel::Individual,
        "area" => CovariateLevel::Area,
        other => return Err(Error::Config(format!("unknown covariate level `{other}`"))),
    };
    let tv = match tv.trim() {
        "time_varying" => true,
        "time_invariant" => false,
        other => return Err(Error::Config(format!("unknown time variation `{other}`"))),
    };
    Ok((level, tv))
}

fn infer_description(
    values: &[f64],
    period: &[usize],
    individual: &[usize],
    area: &[usize],
) -> (CovariateLevel, bool) {
    let mut by_cell: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut area_level = true;
    for o in 0..values.len() {
        let v = *by_cell.entry((period[o], area[o])).or_insert(values[o]);
        if v != values[o] {
            area_level = false;
            break;
        }
    }
    let mut by_ind: HashMap<usize, f64> = HashMap::new();
    let mut time_varying = false;
    for o in 0..values.len() {
        let v = *by_ind.entry(individual[o]).or_insert(values[o]);
        if v != values[o] {
            time_varying = true;
            break;
        }
    }
    let level = if area_level {
        CovariateLevel::Area
    } else {
        CovariateLevel::Individual
    };
    (level, time_varying)
}

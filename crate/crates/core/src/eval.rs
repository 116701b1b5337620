//! Leave-one-year-out evaluation on survey tables and a simulated survey.
//!
//! For each held-out test year, every denoiser is fitted on the remaining
//! years pooled. Each single training year then gets a seasonal smoother
//! fitted to its (denoised) counts, which is scored against the raw counts
//! of the test year. `raw` is the baseline for percent improvements.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{split_by_group, DataError, ObservationTable};
use crate::estimators::{center, denoise_table, DenoiseOptions, EstimateError, Method};
use crate::regress::{FittedRegressor, RegressError, RegressorConfig};
use crate::stats;

/// Years with fewer rows than this cannot be smoothed.
pub const MIN_YEAR_ROWS: usize = 10;
/// Default cut-off for "zero" brightness, as a fraction of the maximum.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 0.05;
/// Synodic month in days.
pub const LUNAR_CYCLE: f64 = 29.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("{stage} regression failed for species {species} (train {train_year}, test {test_year}): {source}")]
    Regression {
        stage: &'static str,
        species: String,
        train_year: String,
        test_year: String,
        #[source]
        source: RegressError,
    },
    #[error("need ≥ 2 distinct groups, got {0}")]
    TooFewGroups(usize),
    #[error("need ≥ 2 species, got {0}")]
    TooFewSpecies(usize),
    #[error("group {group} has {rows} rows, fewer than the smoother minimum {MIN_YEAR_ROWS}")]
    SmallGroup { group: String, rows: usize },
    #[error("the {method} method needs a brightness column")]
    MissingBrightness { method: EvalMethod },
    #[error("test filter {filter} leaves no rows in test group {group}")]
    EmptyTest { filter: String, group: String },
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
    #[error("species {0} has zero variance")]
    ZeroVarianceSpecies(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("baseline MSE must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("invalid survey config: {0}")]
    InvalidConfig(String),
    #[error("output failed: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EvalMethod {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "hs")]
    Hs,
    #[serde(rename = "3qs")]
    Tqs,
    #[serde(rename = "mb")]
    Mb,
    #[serde(rename = "global")]
    Global,
}

impl EvalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Hs => "hs",
            Self::Tqs => "3qs",
            Self::Mb => "mb",
            Self::Global => "global",
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for EvalMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "hs" => Ok(Self::Hs),
            "3qs" => Ok(Self::Tqs),
            "mb" => Ok(Self::Mb),
            "global" => Ok(Self::Global),
            other => Err(format!("unknown method {other:?} (expected raw, hs, 3qs, mb or global)")),
        }
    }
}

/// Every comparison method, baseline first.
pub fn method_suite() -> Vec<EvalMethod> {
    vec![EvalMethod::Raw, EvalMethod::Hs, EvalMethod::Tqs, EvalMethod::Mb, EvalMethod::Global]
}

/// Which test rows are scored.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFilter {
    All,
    /// Rows whose diagnostic `column` is at most `threshold`.
    AtMost { column: String, threshold: f64 },
}

impl TestFilter {
    pub fn brightness_zero(column: &str) -> Self {
        Self::AtMost {
            column: column.to_string(),
            threshold: DEFAULT_ZERO_THRESHOLD,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::All => "all".into(),
            Self::AtMost { column, threshold } => format!("{column}<={threshold}"),
        }
    }

    fn mask(&self, table: &ObservationTable<f64>) -> Result<Vec<bool>, EvalError> {
        match self {
            Self::All => Ok(vec![true; table.n_obs()]),
            Self::AtMost { column, threshold } => Ok(brightness_zero_subset(table, column, *threshold)?),
        }
    }
}

/// Rows with `column <= threshold`.
pub fn brightness_zero_subset(table: &ObservationTable<f64>, column: &str, threshold: f64) -> Result<Vec<bool>, DataError> {
    Ok(table.diagnostic(column)?.iter().map(|&v| v <= threshold).collect())
}

/// `100 (baseline - method) / baseline`.
pub fn percent_improvement(mse_method: f64, mse_baseline: f64) -> Result<f64, EvalError> {
    if !(mse_baseline > 0.0) {
        return Err(EvalError::NonPositiveBaseline(mse_baseline));
    }
    Ok(100.0 * (mse_baseline - mse_method) / mse_baseline)
}

/// Pearson correlation of each species with a diagnostic column, for the
/// raw counts and for `z_hat`.
pub fn external_correlation(
    table: &ObservationTable<f64>,
    z_hat: ArrayView2<'_, f64>,
    column: &str,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let counts = table.counts();
    if counts.dim() != z_hat.dim() {
        return Err(EvalError::Shape(counts.dim(), z_hat.dim()));
    }
    let c = table.diagnostic(column)?;
    if stats::variance(c) == 0.0 {
        return Err(EvalError::ZeroVariance(column.to_string()));
    }
    (0..counts.ncols())
        .map(|i| {
            let before = stats::pearson(counts.column(i), c).unwrap_or(0.0);
            let after = stats::pearson(z_hat.column(i), c).unwrap_or(0.0);
            Ok((before, after))
        })
        .collect()
}

/// `std(z_hat_i) / std(y_i)` per species.
pub fn retained_std_fraction(counts: ArrayView2<'_, f64>, z_hat: ArrayView2<'_, f64>) -> Result<Vec<f64>, EvalError> {
    if counts.dim() != z_hat.dim() {
        return Err(EvalError::Shape(counts.dim(), z_hat.dim()));
    }
    (0..counts.ncols())
        .map(|i| {
            let sd = stats::std_dev(counts.column(i));
            if sd == 0.0 {
                return Err(EvalError::ZeroVarianceSpecies(i.to_string()));
            }
            Ok(stats::std_dev(z_hat.column(i)) / sd)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub methods: Vec<EvalMethod>,
    /// `E[Y_i | X]` inside the denoisers.
    pub cfg_x: RegressorConfig,
    /// Correction regression inside the denoisers.
    pub cfg_res: RegressorConfig,
    /// Seasonal smoother fitted per training year (and pooled for `global`).
    pub smoother: RegressorConfig,
    /// Model over (covariates, brightness) for `mb`.
    pub brightness_model: RegressorConfig,
    pub brightness: Option<String>,
    pub filters: Vec<TestFilter>,
    /// Limit on auxiliary species for the denoisers.
    pub max_auxiliary: Option<usize>,
    pub seed: u64,
    /// Also compute correlation and retained-std diagnostics.
    pub diagnostics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: method_suite(),
            cfg_x: RegressorConfig::spline_gam(),
            cfg_res: RegressorConfig::kernel_ridge(),
            smoother: RegressorConfig::spline_gam(),
            brightness_model: RegressorConfig::boosted_trees(),
            brightness: Some("brightness".into()),
            filters: vec![TestFilter::All],
            max_auxiliary: None,
            seed: 0,
            diagnostics: true,
        }
    }
}

/// One scored `(subset, species, train year, test year, method)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub subset: String,
    pub species: String,
    pub train_year: String,
    pub test_year: String,
    pub method: EvalMethod,
    pub mse: f64,
    pub n_test: usize,
    pub percent_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub subset: String,
    pub method: EvalMethod,
    pub mean_mse: f64,
    pub mean_percent_improvement: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesDiagnostic {
    pub species: String,
    pub correlation_raw: f64,
    pub correlation_3qs: f64,
    pub correlation_hs: f64,
    pub retained_std_3qs: f64,
    pub retained_std_hs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub column: String,
    pub species: Vec<SpeciesDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub baseline: EvalMethod,
    pub groups: Vec<String>,
    pub species: Vec<String>,
    pub methods: Vec<EvalMethod>,
    pub subsets: Vec<String>,
    pub pairs: usize,
    pub aggregates: Vec<Aggregate>,
    pub diagnostics: Option<Diagnostics>,
    pub cells: Vec<Cell>,
}

impl EvalReport {
    pub fn aggregate(&self, subset: &str, method: EvalMethod) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.subset == subset && a.method == method)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(out, self).map_err(|e| EvalError::Io(e.to_string()))
    }

    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| EvalError::Io(e.to_string());
        w.write_record(["subset", "species", "train_year", "test_year", "method", "mse", "n_test", "percent_improvement"])
            .map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.subset.clone(),
                c.species.clone(),
                c.train_year.clone(),
                c.test_year.clone(),
                c.method.to_string(),
                c.mse.to_string(),
                c.n_test.to_string(),
                c.percent_improvement.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Io(e.to_string()))
    }

    /// Plain-text table of aggregates.
    pub fn summary(&self) -> String {
        let mut s = format!("{:<22} {:<8} {:>12} {:>14} {:>6}\n", "subset", "method", "mean_mse", "improvement_%", "cells");
        for a in &self.aggregates {
            s.push_str(&format!(
                "{:<22} {:<8} {:>12.6} {:>14.3} {:>6}\n",
                a.subset, a.method, a.mean_mse, a.mean_percent_improvement, a.cells
            ));
        }
        s
    }
}

/// Models fitted for one held-out group, without looking at its rows.
pub struct Fold {
    pub test_group: String,
    pub train_groups: Vec<String>,
    /// `(method, train group index, species) -> model`; `global` is stored
    /// once per species under train group index 0.
    models: BTreeMap<(EvalMethod, usize, usize), FittedRegressor<f64>>,
}

impl Fold {
    /// Prediction of the per-year (or pooled) model. `features` are the
    /// covariates, with brightness appended for `mb`.
    pub fn predict(&self, method: EvalMethod, train: usize, species: usize, features: ArrayView2<'_, f64>) -> Option<Array1<f64>> {
        let key = if method == EvalMethod::Global { (method, 0, species) } else { (method, train, species) };
        self.models.get(&key).and_then(|m| m.predict(features).ok())
    }
}

fn needs_brightness(cfg: &EvalConfig) -> Result<Option<&str>, EvalError> {
    let uses = cfg.methods.contains(&EvalMethod::Mb);
    match (&cfg.brightness, uses) {
        (None, true) => Err(EvalError::MissingBrightness { method: EvalMethod::Mb }),
        (b, _) => Ok(b.as_deref().filter(|_| uses)),
    }
}

fn with_column(x: ArrayView2<'_, f64>, c: ArrayView1<'_, f64>) -> Array2<f64> {
    concatenate(Axis(1), &[x, c.insert_axis(Axis(1))]).expect("row counts match")
}

/// Fits every model needed to score `test_group`, touching only the other
/// groups' rows.
pub fn fit_fold(table: &ObservationTable<f64>, test_group: &str, cfg: &EvalConfig) -> Result<Fold, EvalError> {
    let brightness = needs_brightness(cfg)?;
    let (train, _) = split_by_group(table, test_group)?;
    let train_groups = train.groups();
    let species = table.species_names();
    let counts = train.counts();
    let x = train.covariates();
    let opts = DenoiseOptions {
        max_auxiliary: cfg.max_auxiliary,
        seed: stats::derive_seed_from_label(cfg.seed, test_group),
    };
    let mut denoised: BTreeMap<EvalMethod, Array2<f64>> = BTreeMap::new();
    for (method, est) in [(EvalMethod::Tqs, Method::TqsResidual), (EvalMethod::Hs, Method::Hs)] {
        if cfg.methods.contains(&method) {
            let r = denoise_table(&train, est, &cfg.cfg_x, &cfg.cfg_res, &opts)?;
            denoised.insert(method, r.z_hat);
        }
    }

    let wrap = |stage: &'static str, i: usize, g: &str| {
        let (species, train_year, test_year) = (species[i].clone(), g.to_string(), test_group.to_string());
        move |source| EvalError::Regression {
            stage,
            species,
            train_year,
            test_year,
            source,
        }
    };

    // (method, train group, species) jobs, in a fixed order
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        if method == EvalMethod::Global {
            jobs.extend((0..species.len()).map(|i| (method, 0, i)));
        } else {
            for g in 0..train_groups.len() {
                jobs.extend((0..species.len()).map(|i| (method, g, i)));
            }
        }
    }
    let group_rows: Vec<Vec<usize>> = train_groups.iter().map(|g| train.group_rows(g)).collect();
    let fitted: Vec<((EvalMethod, usize, usize), FittedRegressor<f64>)> = jobs
        .into_par_iter()
        .map(|(method, g, i)| {
            let rows = &group_rows[g];
            let gname = &train_groups[g];
            let model = match method {
                EvalMethod::Global => cfg
                    .smoother
                    .fit(x, counts.column(i))
                    .map_err(wrap("global smoother", i, "pooled"))?,
                EvalMethod::Raw => {
                    let xs = x.select(Axis(0), rows);
                    let ys = counts.column(i).select(Axis(0), rows);
                    cfg.smoother.fit(xs.view(), ys.view()).map_err(wrap("smoother", i, gname))?
                }
                EvalMethod::Tqs | EvalMethod::Hs => {
                    let xs = x.select(Axis(0), rows);
                    let raw = counts.column(i).select(Axis(0), rows);
                    let z = denoised[&method].column(i).select(Axis(0), rows);
                    // keep the level of the training-year counts
                    let z = center(z.view(), stats::mean(raw.view()));
                    cfg.smoother.fit(xs.view(), z.view()).map_err(wrap("smoother", i, gname))?
                }
                EvalMethod::Mb => {
                    let b = train.diagnostic(brightness.expect("checked"))?;
                    let feats = with_column(x, b).select(Axis(0), rows);
                    let ys = counts.column(i).select(Axis(0), rows);
                    cfg.brightness_model
                        .clone()
                        .with_seed(stats::derive_seed_from_label(opts.seed, &format!("{gname}/{}", species[i])))
                        .fit(feats.view(), ys.view())
                        .map_err(wrap("brightness model", i, gname))?
                }
            };
            Ok(((method, g, i), model))
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(Fold {
        test_group: test_group.to_string(),
        train_groups,
        models: fitted.into_iter().collect(),
    })
}

fn validate_table(table: &ObservationTable<f64>, cfg: &EvalConfig) -> Result<Vec<String>, EvalError> {
    let groups = table.groups();
    if groups.len() < 2 {
        return Err(EvalError::TooFewGroups(groups.len()));
    }
    if table.n_species() < 2 {
        return Err(EvalError::TooFewSpecies(table.n_species()));
    }
    for g in &groups {
        let rows = table.group_rows(g).len();
        if rows < MIN_YEAR_ROWS {
            return Err(EvalError::SmallGroup { group: g.clone(), rows });
        }
    }
    if let Some(b) = needs_brightness(cfg)? {
        table.diagnostic(b)?;
    }
    for f in &cfg.filters {
        f.mask(table)?;
    }
    Ok(groups)
}

/// Leave-one-group-out evaluation. `raw` is always scored, as the baseline.
pub fn loyo_evaluate(table: &ObservationTable<f64>, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let mut cfg = cfg.clone();
    cfg.methods.retain(|&m| m != EvalMethod::Raw);
    cfg.methods.insert(0, EvalMethod::Raw);
    cfg.methods.dedup();
    if cfg.filters.is_empty() {
        cfg.filters.push(TestFilter::All);
    }
    let groups = validate_table(table, &cfg)?;
    let species = table.species_names().to_vec();

    let per_fold: Vec<Vec<Cell>> = groups
        .par_iter()
        .map(|test_group| {
            let fold = fit_fold(table, test_group, &cfg)?;
            let (_, test) = split_by_group(table, test_group)?;
            let mut cells = Vec::new();
            for filter in &cfg.filters {
                let mask = filter.mask(&test)?;
                let rows: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
                if rows.is_empty() {
                    return Err(EvalError::EmptyTest {
                        filter: filter.name(),
                        group: test_group.clone(),
                    });
                }
                let sub = test.select_rows(&rows);
                let x = sub.covariates();
                let xb = match cfg.brightness.as_deref().filter(|_| cfg.methods.contains(&EvalMethod::Mb)) {
                    Some(b) => Some(with_column(x, sub.diagnostic(b)?)),
                    None => None,
                };
                let sub_counts = sub.counts();
                for i in 0..species.len() {
                    let actual = sub_counts.column(i);
                    for (g, train_group) in fold.train_groups.iter().enumerate() {
                        let mut baseline = f64::NAN;
                        for &method in &cfg.methods {
                            let feats = if method == EvalMethod::Mb { xb.as_ref().expect("brightness").view() } else { x };
                            let pred = fold.predict(method, g, i, feats).expect("model fitted for every cell");
                            let mse = stats::mse(pred.view(), actual);
                            if method == EvalMethod::Raw {
                                baseline = mse;
                            }
                            cells.push(Cell {
                                subset: filter.name(),
                                species: species[i].clone(),
                                train_year: train_group.clone(),
                                test_year: test_group.clone(),
                                method,
                                mse,
                                n_test: rows.len(),
                                percent_improvement: percent_improvement(mse, baseline)?,
                            });
                        }
                    }
                }
            }
            Ok(cells)
        })
        .collect::<Result<_, EvalError>>()?;
    let cells: Vec<Cell> = per_fold.into_iter().flatten().collect();

    let mut aggregates = Vec::new();
    for filter in &cfg.filters {
        let subset = filter.name();
        for &method in &cfg.methods {
            let mine: Vec<&Cell> = cells.iter().filter(|c| c.subset == subset && c.method == method).collect();
            let n = mine.len() as f64;
            aggregates.push(Aggregate {
                subset: subset.clone(),
                method,
                mean_mse: mine.iter().map(|c| c.mse).sum::<f64>() / n,
                mean_percent_improvement: mine.iter().map(|c| c.percent_improvement).sum::<f64>() / n,
                cells: mine.len(),
            });
        }
    }

    let diagnostics = match (&cfg.brightness, cfg.diagnostics) {
        (Some(column), true) => Some(survey_diagnostics(table, column, &cfg)?),
        _ => None,
    };

    Ok(EvalReport {
        baseline: EvalMethod::Raw,
        pairs: groups.len() * (groups.len() - 1),
        groups,
        species,
        methods: cfg.methods.clone(),
        subsets: cfg.filters.iter().map(|f| f.name()).collect(),
        aggregates,
        diagnostics,
        cells,
    })
}

/// Correlation with `column` and retained spread after denoising the whole
/// table with both denoisers.
pub fn survey_diagnostics(table: &ObservationTable<f64>, column: &str, cfg: &EvalConfig) -> Result<Diagnostics, EvalError> {
    let opts = DenoiseOptions {
        max_auxiliary: cfg.max_auxiliary,
        seed: cfg.seed,
    };
    let tqs = denoise_table(table, Method::TqsResidual, &cfg.cfg_x, &cfg.cfg_res, &opts)?;
    let hs = denoise_table(table, Method::Hs, &cfg.cfg_x, &cfg.cfg_res, &opts)?;
    let corr_tqs = external_correlation(table, tqs.z_hat.view(), column)?;
    let corr_hs = external_correlation(table, hs.z_hat.view(), column)?;
    let keep_tqs = retained_std_fraction(table.counts(), tqs.z_hat.view())?;
    let keep_hs = retained_std_fraction(table.counts(), hs.z_hat.view())?;
    let species = table
        .species_names()
        .iter()
        .enumerate()
        .map(|(i, name)| SpeciesDiagnostic {
            species: name.clone(),
            correlation_raw: corr_tqs[i].0,
            correlation_3qs: corr_tqs[i].1,
            correlation_hs: corr_hs[i].1,
            retained_std_3qs: keep_tqs[i],
            retained_std_hs: keep_hs[i],
        })
        .collect();
    Ok(Diagnostics {
        column: column.to_string(),
        species,
    })
}

/// Parameters of the simulated survey.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyConfig {
    pub years: usize,
    pub first_year: i32,
    pub days_per_year: usize,
    pub first_day: usize,
    pub n_species: usize,
    pub seed: u64,
    /// Log-count reduction at full brightness.
    pub beta: f64,
    /// Per-species multiplier range on `beta`.
    pub sensitivity: (f64, f64),
    pub idiosyncratic_sd: f64,
    /// SD of a nightly detectability term shared by all species (weather,
    /// observer effort), scaled by each species' sensitivity.
    pub night_sd: f64,
    /// SD of the per-year shift of each bump, in days.
    pub timing_jitter: f64,
    /// SD of the per-year log multiplier on each bump height.
    pub height_jitter: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            years: 5,
            first_year: 2013,
            days_per_year: 180,
            first_day: 90,
            n_species: 10,
            seed: 0,
            beta: 0.5,
            sensitivity: (0.7, 1.3),
            idiosyncratic_sd: 0.25,
            night_sd: 0.35,
            timing_jitter: 6.0,
            height_jitter: 0.2,
        }
    }
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if self.years < 2 {
            return bad(format!("need ≥ 2 years, got {}", self.years));
        }
        if self.n_species < 2 {
            return bad(format!("need ≥ 2 species, got {}", self.n_species));
        }
        if self.days_per_year < MIN_YEAR_ROWS {
            return bad(format!("need ≥ {MIN_YEAR_ROWS} days per year, got {}", self.days_per_year));
        }
        if self.first_day + self.days_per_year > 366 {
            return bad("observation window runs past the end of the year".into());
        }
        for (name, v) in [
            ("beta", self.beta),
            ("idiosyncratic_sd", self.idiosyncratic_sd),
            ("night_sd", self.night_sd),
            ("timing_jitter", self.timing_jitter),
            ("height_jitter", self.height_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be ≥ 0, got {v}"));
            }
        }
        let (lo, hi) = self.sensitivity;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("sensitivity interval [{lo}, {hi}] is invalid"));
        }
        Ok(())
    }
}

/// A simulated survey and the latent log-abundance behind it.
#[derive(Debug, Clone)]
pub struct SimulatedSurvey {
    /// Covariate `day`, species `sp01`.., group `year`, diagnostic `brightness`.
    pub table: ObservationTable<f64>,
    /// Observations × species.
    pub truth: Array2<f64>,
    pub sensitivity: Vec<f64>,
}

impl SimulatedSurvey {
    /// Truth as a table with the same layout as the observations.
    pub fn truth_table(&self) -> ObservationTable<f64> {
        self.table.with_counts(self.truth.clone()).expect("same shape")
    }
}

/// Brightness `|sin(pi (day - new_moon) / cycle)|`: 0 at new moon, 1 at full.
pub fn lunar_brightness(day: f64, new_moon: f64) -> f64 {
    (PI * (day - new_moon) / LUNAR_CYCLE).sin().abs()
}

struct Bump {
    center: f64,
    width: f64,
    height: f64,
}

/// Simulates nightly log-counts: seasonal Gaussian bumps per species with
/// year-to-year jitter, plus a shared detection term (nightly noise minus
/// `beta` times the lunar brightness) scaled by a per-species sensitivity,
/// plus independent noise per species and night.
pub fn simulate_moth_survey(config: &SurveyConfig) -> Result<SimulatedSurvey, EvalError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (first, last) = (config.first_day as f64, (config.first_day + config.days_per_year - 1) as f64);
    let span = last - first;
    let mut species_bumps = Vec::with_capacity(config.n_species);
    let mut base = Vec::with_capacity(config.n_species);
    let mut sensitivity = Vec::with_capacity(config.n_species);
    for _ in 0..config.n_species {
        let k = rng.random_range(1..=2);
        let bumps: Vec<Bump> = (0..k)
            .map(|_| Bump {
                center: rng.random_range(first + 0.15 * span..last - 0.15 * span),
                width: rng.random_range(10.0..30.0),
                height: rng.random_range(1.0..3.0),
            })
            .collect();
        species_bumps.push(bumps);
        base.push(rng.random_range(0.2..1.0));
        let (lo, hi) = config.sensitivity;
        sensitivity.push(if lo == hi { lo } else { rng.random_range(lo..hi) });
    }

    let m = config.years * config.days_per_year;
    let mut day = Array2::zeros((m, 1));
    let mut counts = Array2::zeros((m, config.n_species));
    let mut truth = Array2::zeros((m, config.n_species));
    let mut brightness = Array1::zeros(m);
    let mut labels = Vec::with_capacity(m);
    let mut row = 0;
    for y in 0..config.years {
        let new_moon = rng.random_range(0.0..LUNAR_CYCLE);
        let yearly: Vec<Vec<(f64, f64)>> = species_bumps
            .iter()
            .map(|bumps| {
                bumps
                    .iter()
                    .map(|_| {
                        let shift: f64 = rng.sample::<f64, _>(StandardNormal) * config.timing_jitter;
                        let scale = (rng.sample::<f64, _>(StandardNormal) * config.height_jitter).exp();
                        (shift, scale)
                    })
                    .collect()
            })
            .collect();
        let label = (config.first_year + y as i32).to_string();
        for d in 0..config.days_per_year {
            let t = first + d as f64;
            let b = lunar_brightness(t, new_moon);
            let night = config.night_sd * rng.sample::<f64, _>(StandardNormal);
            let detection = night - config.beta * b;
            day[[row, 0]] = t;
            brightness[row] = b;
            labels.push(label.clone());
            for (i, bumps) in species_bumps.iter().enumerate() {
                let season: f64 = bumps
                    .iter()
                    .zip(&yearly[i])
                    .map(|(bump, &(shift, scale))| {
                        let u = (t - bump.center - shift) / bump.width;
                        bump.height * scale * (-0.5 * u * u).exp()
                    })
                    .sum();
                let z = base[i] + season;
                let noise: f64 = rng.sample(StandardNormal);
                truth[[row, i]] = z;
                counts[[row, i]] = z + sensitivity[i] * detection + config.idiosyncratic_sd * noise;
            }
            row += 1;
        }
    }
    let names: Vec<String> = (1..=config.n_species).map(|i| format!("sp{i:02}")).collect();
    let table = ObservationTable::new(
        vec!["day".into()],
        day,
        names,
        counts,
        Some("year".into()),
        labels,
        vec![("brightness".into(), brightness)],
    )?;
    Ok(SimulatedSurvey { table, truth, sensitivity })
}

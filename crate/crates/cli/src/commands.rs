//! Subcommand key tables and implementations.

use std::fmt;

use serde_json::json;
use tqs::data::{load_table, log_transform_counts, select_top_species, ColumnRole};
use tqs::estimators::{denoise_table, DenoiseOptions, Method};
use tqs::eval::{loyo_evaluate, simulate_moth_survey, EvalConfig, EvalMethod, SurveyConfig, TestFilter};
use tqs::oracle::{run_suite, SuiteReport};
use tqs::regress::RegressorKind;
use tqs::synth::{run_noise_sweep, run_species_sweep, write_sweep_csv, NoiseLink, SweepSettings, SynthConfig};
use tqs::{Exact, Table};

use crate::config::{key, required, CommandSpec, ConfigError, RunConfig, Slot, Ty};
use crate::output::{Meta, Outputs};

const ALL: &[&str] = &["all"];

pub const DENOISE: CommandSpec = CommandSpec {
    name: "denoise",
    keys: &[
        key("seed", Ty::Int, "0", "master seed (also --seed)"),
        required("input", Ty::Str, "input CSV (also --input)"),
        key("method", Ty::Str, "\"3qs\"", "hs, 3qs, 3qs-eq1 or 3qs-eq2 (also --method)"),
        key("log_transform", Ty::Bool, "false", "replace each count y by ln(1 + y) first"),
        key("top_species", Ty::IntOr(ALL), "\"all\"", "keep only this many species, by total count"),
        key("max_auxiliary", Ty::IntOr(ALL), "\"all\"", "other species used as predictors, most abundant first"),
    ],
    slots: &[
        Slot {
            name: "x",
            default_kind: RegressorKind::SplineGam,
            help: "model of each species given the covariates",
        },
        Slot {
            name: "residual",
            default_kind: RegressorKind::KernelRidge,
            help: "correction model given the other species",
        },
    ],
    schema: true,
};

pub const SYNTH: CommandSpec = CommandSpec {
    name: "synth",
    keys: &[
        key("seed", Ty::Int, "0", "master seed (also --seed)"),
        key("trials", Ty::Int, "20", "instances per grid point, shared across grid points"),
        key("species_grid", Ty::IntList, "[2, 3, 5, 7, 10]", "species counts for the species sweep"),
        key("noise_grid", Ty::FloatList, "[0.0, 0.05, 0.1, 0.2, 0.4]", "noise deviations for the noise sweep"),
        key("n_obs", Ty::Int, "500", "observations per instance"),
        key("noise_link", Ty::Str, "\"sigmoid\"", "how the shared noise enters: sigmoid or linear"),
    ],
    slots: &[Slot {
        name: "sweep",
        default_kind: RegressorKind::KernelRidge,
        help: "model used by both estimators",
    }],
    schema: false,
};

pub const VERIFY: CommandSpec = CommandSpec {
    name: "verify",
    keys: &[
        key("seed", Ty::Int, "0", "master seed (also --seed)"),
        key("joints", Ty::Int, "100", "random joint distributions to check (also --joints)"),
        key("field", Ty::Str, "\"f64\"", "arithmetic: f64 or exact (rational)"),
    ],
    slots: &[],
    schema: false,
};

pub const EVAL: CommandSpec = CommandSpec {
    name: "eval",
    keys: &[
        key("seed", Ty::Int, "0", "master seed (also --seed)"),
        required("input", Ty::Str, "input CSV (also --input)"),
        key("methods", Ty::StrList, "\"raw,hs,3qs,mb,global\"", "methods to score (also --method)"),
        key("test_filter", Ty::Str, "\"all\"", "test rows: all, brightness-zero or both (also --test-filter)"),
        key("brightness", Ty::Str, "\"brightness\"", "diagnostic column holding brightness"),
        key("zero_threshold", Ty::Float, "0.05", "brightness at or below this counts as zero"),
        key("log_transform", Ty::Bool, "false", "replace each count y by ln(1 + y) first"),
        key("top_species", Ty::IntOr(ALL), "\"all\"", "keep only this many species, by total count"),
        key("max_auxiliary", Ty::IntOr(ALL), "\"all\"", "other species used by the denoisers, most abundant first"),
        key("diagnostics", Ty::Bool, "true", "report brightness correlation and retained spread"),
    ],
    slots: &[
        Slot {
            name: "x",
            default_kind: RegressorKind::SplineGam,
            help: "denoiser model of each species given the covariates",
        },
        Slot {
            name: "residual",
            default_kind: RegressorKind::KernelRidge,
            help: "denoiser correction model",
        },
        Slot {
            name: "smoother",
            default_kind: RegressorKind::SplineGam,
            help: "seasonal smoother scored on the test year",
        },
        Slot {
            name: "brightness",
            default_kind: RegressorKind::BoostedTrees,
            help: "model over covariates and brightness for mb",
        },
    ],
    schema: true,
};

pub const SIMULATE: CommandSpec = CommandSpec {
    name: "simulate",
    keys: &[
        key("seed", Ty::Int, "0", "master seed (also --seed)"),
        key("years", Ty::Int, "5", "survey years"),
        key("first_year", Ty::Int, "2013", "label of the first year"),
        key("days_per_year", Ty::Int, "180", "nights per year"),
        key("first_day", Ty::Int, "90", "day of year of the first night"),
        key("n_species", Ty::Int, "10", "species"),
        key("beta", Ty::Float, "0.5", "log-count loss at full brightness"),
        key("sensitivity", Ty::FloatList, "[0.7, 1.3]", "range of per-species sensitivity to detection noise"),
        key("idiosyncratic_sd", Ty::Float, "0.25", "per-species per-night noise"),
        key("night_sd", Ty::Float, "0.35", "nightly detectability noise shared by all species"),
        key("timing_jitter", Ty::Float, "6.0", "per-year shift of seasonal peaks, in days"),
        key("height_jitter", Ty::Float, "0.2", "per-year log multiplier on peak heights"),
    ],
    slots: &[],
    schema: false,
};

pub const ALL_COMMANDS: [CommandSpec; 5] = [DENOISE, SYNTH, VERIFY, EVAL, SIMULATE];

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config (exit 2).
    Usage(String),
    /// The computation failed or a check did not hold (exit 1).
    Run(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Run(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Run(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Usage(e.0)
    }
}

fn run_err(stage: &str) -> impl Fn(&dyn fmt::Display) -> Failure + '_ {
    move |e| Failure::Run(format!("{stage}: {e}"))
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// What a successful run produced, plus text for stdout. `status` is
/// nonzero when the run completed but a check failed.
pub struct Finished {
    pub outputs: Outputs,
    pub stdout: String,
    pub failed_check: Option<String>,
}

fn finished(outputs: Outputs, stdout: String) -> Result<Finished, Failure> {
    Ok(Finished {
        outputs,
        stdout,
        failed_check: None,
    })
}

fn load(cfg: &RunConfig) -> Result<Table, Failure> {
    let schema = cfg.schema();
    if !schema.iter().any(|(_, r)| r == ColumnRole::Count) {
        return Err(usage("schema assigns no count columns (set schema.<column> = \"count\")"));
    }
    let path = cfg.path("input");
    let mut table: Table = load_table(&path, &schema).map_err(|e| Failure::Run(format!("load {}: {e}", path.display())))?;
    if let Some(k) = cfg.usize_or_word("top_species") {
        table = select_top_species(&table, k).map_err(|e| run_err("select species")(&e))?;
    }
    if cfg.bool("log_transform") {
        table = log_transform_counts(&table).map_err(|e| run_err("log transform")(&e))?;
    }
    Ok(table)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(Failure::Run)?;
    Ok(buf)
}

pub fn denoise(cfg: &RunConfig) -> Result<Finished, Failure> {
    let method: Method = cfg.str("method").parse().map_err(|e: String| usage(format!("method: {e}")))?;
    let meta = Meta::new(cfg);
    let table = load(cfg)?;
    let options = DenoiseOptions {
        max_auxiliary: cfg.usize_or_word("max_auxiliary"),
        seed: cfg.u64("seed"),
    };
    let result = denoise_table(&table, method, &cfg.regressor("x"), &cfg.regressor("residual"), &options)
        .map_err(|e| run_err("denoise")(&e))?;

    let out_table = table
        .with_counts(result.z_hat.clone())
        .map_err(|e| run_err("denoise")(&e))?;
    let body = csv_bytes(|b| out_table.write_csv(b).map_err(|e| e.to_string()))?;
    let mut outputs = Outputs::new();
    outputs.csv("z_hat.csv", &meta, body);
    outputs.json(
        "diagnostics.json",
        &meta,
        json!({
            "method": method,
            "n_obs": table.n_obs(),
            "species": result.fits,
        }),
    );

    let mut stdout = format!("{:<16} {:>14} {:>14} {:>5}\n", "species", "fit_mse_x", "fit_mse_corr", "aux");
    for f in &result.fits {
        let x = f.covariate_fit_mse.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        stdout.push_str(&format!(
            "{:<16} {:>14} {:>14.6} {:>5}\n",
            f.species,
            x,
            f.correction_fit_mse,
            f.auxiliary.len()
        ));
    }
    finished(outputs, stdout)
}

pub fn synth(cfg: &RunConfig) -> Result<Finished, Failure> {
    let species_grid = cfg.usize_list("species_grid");
    let noise_grid = cfg.f64_list("noise_grid");
    if species_grid.is_empty() || noise_grid.is_empty() {
        return Err(usage("species_grid and noise_grid must be non-empty"));
    }
    if let Some(bad) = species_grid.iter().find(|&&n| n < 2) {
        return Err(usage(format!("species_grid: species counts must be ≥ 2, got {bad}")));
    }
    if let Some(bad) = noise_grid.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(usage(format!("noise_grid: noise deviations must be ≥ 0, got {bad}")));
    }
    let trials = cfg.usize("trials");
    if trials == 0 {
        return Err(usage("trials must be ≥ 1"));
    }
    let noise_link = match cfg.str("noise_link") {
        "sigmoid" => NoiseLink::Sigmoid,
        "linear" => NoiseLink::Linear,
        other => return Err(usage(format!("noise_link: expected sigmoid or linear, got {other:?}"))),
    };
    let mut settings = SweepSettings::new(trials, cfg.u64("seed"), cfg.regressor("sweep"));
    settings.base = SynthConfig {
        n_obs: cfg.usize("n_obs"),
        noise_link,
        ..SynthConfig::default()
    };
    settings.base.validate().map_err(|e| usage(e.to_string()))?;
    let meta = Meta::new(cfg);

    let species = run_species_sweep(&species_grid, &settings).map_err(|e| run_err("species sweep")(&e))?;
    let noise = run_noise_sweep(&noise_grid, &settings).map_err(|e| run_err("noise sweep")(&e))?;
    let mut outputs = Outputs::new();
    let mut stdout = String::new();
    for (name, rows) in [("species_sweep.csv", &species), ("noise_sweep.csv", &noise)] {
        let body = csv_bytes(|b| write_sweep_csv(rows, b).map_err(|e| e.to_string()))?;
        outputs.csv(name, &meta, body);
        stdout.push_str(&format!("{name}\n"));
        for r in rows.iter() {
            let se = r.stderr_mse.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            stdout.push_str(&format!("  {:>6} {:<4} {:.6} ± {se}\n", r.sweep_value, r.method, r.mean_mse));
        }
    }
    finished(outputs, stdout)
}

pub fn verify(cfg: &RunConfig, corrupt: bool) -> Result<Finished, Failure> {
    let n = cfg.usize("joints");
    if n == 0 {
        return Err(usage("joints must be ≥ 1"));
    }
    let seed = cfg.u64("seed");
    let report: SuiteReport = match cfg.str("field") {
        "f64" => run_suite::<f64>(n, seed, corrupt),
        "exact" => run_suite::<Exact>(n, seed, corrupt),
        other => return Err(usage(format!("field: expected f64 or exact, got {other:?}"))),
    };
    let meta = Meta::new(cfg);
    let mut outputs = Outputs::new();
    let value = serde_json::to_value(&report).map_err(|e| run_err("report")(&e))?;
    outputs.json("theorem_report.json", &meta, value);

    let satisfied = report.joints.iter().filter(|j| j.satisfied()).count();
    let stdout = format!("{satisfied}/{} joints satisfied\n", report.joints.len());
    let failed_check = if report.all_satisfied {
        None
    } else {
        let mut msg = String::from("failing joints:");
        for j in report.failures() {
            msg.push_str(&format!(" #{} (seed {}, {:?})", j.index, j.seed, j.kind));
        }
        Some(msg)
    };
    Ok(Finished {
        outputs,
        stdout,
        failed_check,
    })
}

fn eval_config(cfg: &RunConfig, table: &Table) -> Result<EvalConfig, Failure> {
    let methods = cfg
        .str_list("methods")
        .iter()
        .map(|m| m.parse::<EvalMethod>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(format!("methods: {e}")))?;
    if methods.is_empty() {
        return Err(usage("methods: at least one method is required"));
    }
    let column = cfg.str("brightness").to_string();
    let threshold = cfg.f64("zero_threshold");
    let zero = TestFilter::AtMost {
        column: column.clone(),
        threshold,
    };
    let filters = match cfg.str("test_filter") {
        "all" => vec![TestFilter::All],
        "brightness-zero" => vec![zero],
        "both" => vec![TestFilter::All, zero],
        other => {
            return Err(usage(format!(
                "test_filter: expected all, brightness-zero or both, got {other:?}"
            )))
        }
    };
    // A missing column is only an error for methods and filters that use it.
    let present = table.diagnostic(&column).is_ok();
    Ok(EvalConfig {
        methods,
        cfg_x: cfg.regressor("x"),
        cfg_res: cfg.regressor("residual"),
        smoother: cfg.regressor("smoother"),
        brightness_model: cfg.regressor("brightness"),
        brightness: present.then_some(column),
        filters,
        max_auxiliary: cfg.usize_or_word("max_auxiliary"),
        seed: cfg.u64("seed"),
        diagnostics: cfg.bool("diagnostics"),
    })
}

fn check_eval_keys(cfg: &RunConfig) -> Result<(), Failure> {
    for m in cfg.str_list("methods") {
        m.parse::<EvalMethod>().map_err(|e| usage(format!("methods: {e}")))?;
    }
    if !["all", "brightness-zero", "both"].contains(&cfg.str("test_filter")) {
        return Err(usage(format!(
            "test_filter: expected all, brightness-zero or both, got {:?}",
            cfg.str("test_filter")
        )));
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<Finished, Failure> {
    check_eval_keys(cfg)?;
    let meta = Meta::new(cfg);
    let table = load(cfg)?;
    let ecfg = eval_config(cfg, &table)?;
    let report = loyo_evaluate(&table, &ecfg).map_err(|e| run_err("eval")(&e))?;

    let mut outputs = Outputs::new();
    let value = serde_json::to_value(&report).map_err(|e| run_err("report")(&e))?;
    outputs.json("eval_report.json", &meta, value);
    let body = csv_bytes(|b| report.write_cells_csv(b).map_err(|e| e.to_string()))?;
    outputs.csv("eval_cells.csv", &meta, body);
    let stdout = format!(
        "{} groups, {} train/test pairs, baseline {}\n{}",
        report.groups.len(),
        report.pairs,
        report.baseline,
        report.summary()
    );
    finished(outputs, stdout)
}

pub fn simulate(cfg: &RunConfig) -> Result<Finished, Failure> {
    let sens = cfg.f64_list("sensitivity");
    let [lo, hi] = sens[..] else {
        return Err(usage("sensitivity must hold two numbers [low, high]"));
    };
    let survey = SurveyConfig {
        years: cfg.usize("years"),
        first_year: i32::try_from(cfg.u64("first_year")).map_err(|_| usage("first_year is out of range"))?,
        days_per_year: cfg.usize("days_per_year"),
        first_day: cfg.usize("first_day"),
        n_species: cfg.usize("n_species"),
        seed: cfg.u64("seed"),
        beta: cfg.f64("beta"),
        sensitivity: (lo, hi),
        idiosyncratic_sd: cfg.f64("idiosyncratic_sd"),
        night_sd: cfg.f64("night_sd"),
        timing_jitter: cfg.f64("timing_jitter"),
        height_jitter: cfg.f64("height_jitter"),
    };
    survey.validate().map_err(|e| usage(e.to_string()))?;
    let meta = Meta::new(cfg);
    let sim = simulate_moth_survey(&survey).map_err(|e| run_err("simulate")(&e))?;

    let mut outputs = Outputs::new();
    let body = csv_bytes(|b| sim.table.write_csv(b).map_err(|e| e.to_string()))?;
    outputs.csv("survey.csv", &meta, body);
    let body = csv_bytes(|b| sim.truth_table().write_csv(b).map_err(|e| e.to_string()))?;
    outputs.csv("survey_truth.csv", &meta, body);

    let mut schema = String::from("# Column roles for survey.csv; usable as --config for denoise or eval.\ninput = \"survey.csv\"\n");
    let t = &sim.table;
    let mut role = |col: &str, r: &str| schema.push_str(&format!("schema.{col} = \"{r}\"\n"));
    for c in t.covariate_names() {
        role(c, "covariate");
    }
    for c in t.species_names() {
        role(c, "count");
    }
    if let Some(g) = t.group_name() {
        role(g, "group");
    }
    for (c, _) in t.diagnostics() {
        role(c, "diagnostic");
    }
    outputs.raw("survey_schema.toml", schema.into_bytes());
    let stdout = format!(
        "{} nights, {} species, {} years\n",
        t.n_obs(),
        t.n_species(),
        t.groups().len()
    );
    finished(outputs, stdout)
}

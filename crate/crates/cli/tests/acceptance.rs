//! Acceptance suite. Prints one PASS/FAIL line per criterion (with the
//! measured value and the tolerance) and exits nonzero if any fails.
//!
//! `cargo test --test acceptance -- <substring>` runs the matching criteria.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::s;
use tqs::estimators::{tqs_eq1, tqs_eq2};
use tqs::eval::{loyo_evaluate, simulate_moth_survey, EvalConfig, EvalMethod, EvalReport, SurveyConfig, TestFilter};
use tqs::oracle::{run_suite, run_suite_of, JointKind, SuiteReport};
use tqs::regress::RegressorConfig;
use tqs::stats::spearman;
use tqs::synth::{
    generate, reconstruction_mse, run_noise_sweep, run_species_sweep, NoiseLink, SweepRow, SweepSettings, SynthConfig,
};
use tqs::Exact;

const SEED: u64 = 0;
const EXACT_TOL: f64 = 1e-12;
const SPECIES_GRID: [usize; 5] = [2, 3, 5, 7, 10];
const NOISE_GRID: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];
const TRIALS: usize = 20;
const SURVEY_SEEDS: u64 = 10;
const AUX_GRID: [usize; 4] = [1, 3, 5, 9];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- oracle

fn timed_suite(kinds: Option<&[JointKind]>) -> (SuiteReport, Duration) {
    let t = Instant::now();
    let r = match kinds {
        Some(k) => run_suite_of::<f64>(100, SEED, false, k),
        None => run_suite::<f64>(100, SEED, false),
    };
    (r, t.elapsed())
}

fn forms_agree() -> Verdict {
    let (r, took) = timed_suite(None);
    let gap = r.joints.iter().map(|j| j.forms_agree.lhs).fold(0.0, f64::max);
    let exact = run_suite::<Exact>(100, SEED, false);
    let exact_gap = exact.joints.iter().map(|j| j.forms_agree.lhs).fold(0.0, f64::max);
    verdict(
        r.joints.len() == 100 && gap <= EXACT_TOL && exact_gap == 0.0 && took < Duration::from_secs(5),
        format!(
            "100 joints, max gap between forms {gap:.3e} (tol {EXACT_TOL:e}), exact arithmetic {exact_gap:e}, runtime {} (limit 5s)",
            secs(took)
        ),
    )
}

fn additive_suite() -> &'static (SuiteReport, Duration) {
    static CELL: OnceLock<(SuiteReport, Duration)> = OnceLock::new();
    CELL.get_or_init(|| timed_suite(Some(&[JointKind::AdditiveZeroMean])))
}

fn denoised_closer_than_raw() -> Verdict {
    let (r, took) = additive_suite();
    let reports: Vec<_> = r.joints.iter().filter_map(|j| j.mse_inequality).collect();
    let worst = reports.iter().map(|t| t.lhs - t.rhs).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        reports.len() == 100 && worst <= EXACT_TOL && *took < Duration::from_secs(5),
        format!(
            "{} additive zero-mean joints, max E[(Zhat-Z)^2] - E[(Y-Z)^2] = {worst:.3e} (tol {EXACT_TOL:e}), runtime {} (limit 5s)",
            reports.len(),
            secs(*took)
        ),
    )
}

fn error_is_conditional_variance() -> Verdict {
    let (r, _) = additive_suite();
    let reports: Vec<_> = r.joints.iter().filter_map(|j| j.conditional_variance).collect();
    let worst = reports.iter().map(|t| (t.lhs - t.rhs).abs()).fold(0.0, f64::max);
    verdict(
        reports.len() == 100 && worst <= EXACT_TOL,
        format!(
            "{} additive joints, max |E[(Zhat-(Z+Ef))^2] - E[Var(f|X,Y2)]| = {worst:.3e} (tol {EXACT_TOL:e})",
            reports.len()
        ),
    )
}

// ---------------------------------------------------------------- synthetic

fn recoverable_linear_instance() -> Verdict {
    let cfg = SynthConfig {
        n_species: 2,
        n_obs: 500,
        noise_link: NoiseLink::Linear,
        weight_n: (1.0, 1.0),
        seed: SEED,
        ..SynthConfig::default()
    };
    let inst = generate::<f64>(&cfg).expect("valid config");
    let x = inst.covariates();
    let others = inst.y.slice(s![.., 1..]);
    let kr = RegressorConfig::kernel_ridge();
    let residual = tqs_eq1(inst.y.column(0), x.view(), others, &kr, &kr).expect("fits");
    let difference = tqs_eq2(inst.y.column(0), x.view(), others, &kr, &kr).expect("fits");
    let z1 = inst.z.column(0);
    let mse_res = reconstruction_mse(residual.view(), z1).unwrap();
    let mse_diff = reconstruction_mse(difference.view(), z1).unwrap();
    let tol = 1e-3;
    verdict(
        mse_res <= tol && mse_diff <= tol,
        format!(
            "m=500, kernel ridge defaults, centered MSE residual form {mse_res:.3e}, difference form {mse_diff:.3e} (tol {tol:e})"
        ),
    )
}

struct Sweeps {
    species: BTreeMap<&'static str, Vec<SweepRow>>,
    noise: BTreeMap<&'static str, Vec<SweepRow>>,
    species_time: Duration,
}

fn backends() -> [(&'static str, RegressorConfig); 2] {
    [
        ("kernel_ridge", RegressorConfig::kernel_ridge()),
        ("boosted_trees", RegressorConfig::boosted_trees()),
    ]
}

fn sweeps() -> &'static Sweeps {
    static CELL: OnceLock<Sweeps> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut species = BTreeMap::new();
        let mut noise = BTreeMap::new();
        let t = Instant::now();
        for (name, cfg) in backends() {
            let settings = SweepSettings::new(TRIALS, SEED, cfg);
            species.insert(name, run_species_sweep(&SPECIES_GRID, &settings).expect("species sweep"));
        }
        let species_time = t.elapsed();
        for (name, cfg) in backends() {
            let settings = SweepSettings::new(TRIALS, SEED, cfg);
            noise.insert(name, run_noise_sweep(&NOISE_GRID, &settings).expect("noise sweep"));
        }
        Sweeps {
            species,
            noise,
            species_time,
        }
    })
}

fn mean_at(rows: &[SweepRow], value: f64, method: &str) -> f64 {
    rows.iter()
        .find(|r| r.sweep_value == value && r.method == method)
        .map(|r| r.mean_mse)
        .expect("grid point present")
}

fn more_species_lower_error() -> Verdict {
    let sw = sweeps();
    let mut ok = sw.species_time < Duration::from_secs(120);
    let mut parts = Vec::new();
    for (name, rows) in &sw.species {
        assert!(rows.iter().all(|r| r.trials == TRIALS));
        let (lo, hi) = (mean_at(rows, 2.0, "3qs"), mean_at(rows, 10.0, "3qs"));
        ok &= hi < lo;
        parts.push(format!("{name} n=10 {hi:.3e} vs n=2 {lo:.3e}"));
    }
    verdict(
        ok,
        format!(
            "{TRIALS} paired seeds, mean 3QS MSE: {}; runtime {} (limit 120s)",
            parts.join(", "),
            secs(sw.species_time)
        ),
    )
}

fn error_grows_with_noise() -> Verdict {
    let sw = sweeps();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, rows) in &sw.noise {
        let means: Vec<f64> = NOISE_GRID.iter().map(|&v| mean_at(rows, v, "3qs")).collect();
        let rho = spearman(&NOISE_GRID, &means).unwrap_or(f64::NAN);
        ok &= rho >= 0.9;
        let shown: Vec<String> = means.iter().map(|m| format!("{m:.3e}")).collect();
        parts.push(format!("{name} rho {rho:.3} [{}]", shown.join(", ")));
    }
    verdict(ok, format!("n=2 tied noise, Spearman >= 0.9: {}", parts.join("; ")))
}

fn half_sibling_worse_everywhere() -> Verdict {
    let sw = sweeps();
    let margins = |rows: &[SweepRow], grid: &[f64]| -> Vec<f64> {
        grid.iter().map(|&v| mean_at(rows, v, "hs") - mean_at(rows, v, "3qs")).collect()
    };
    let species_grid: Vec<f64> = SPECIES_GRID.iter().map(|&n| n as f64).collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, _) in backends() {
        let sp = margins(&sw.species[name], &species_grid);
        let no = margins(&sw.noise[name], &NOISE_GRID);
        let worst = sp.iter().chain(&no).copied().fold(f64::INFINITY, f64::min);
        let holds = worst > 0.0;
        // asserted on the default sweep backend; trees are reported
        if name == "kernel_ridge" {
            ok &= holds;
        }
        let bad: Vec<String> = species_grid
            .iter()
            .zip(&sp)
            .filter(|(_, m)| **m <= 0.0)
            .map(|(v, _)| format!("n={v}"))
            .chain(NOISE_GRID.iter().zip(&no).filter(|(_, m)| **m <= 0.0).map(|(v, _)| format!("sigma={v}")))
            .collect();
        parts.push(format!(
            "{name}{} min(HS-3QS) {worst:.3e}{}",
            if name == "kernel_ridge" { "" } else { " (informational)" },
            if bad.is_empty() { String::new() } else { format!(" violated at {}", bad.join(",")) }
        ));
    }
    verdict(ok, format!("both sweeps, every grid point: {}", parts.join("; ")))
}

// ---------------------------------------------------------------- survey

struct SurveyRuns {
    reports: Vec<EvalReport>,
    /// `aux[k][seed] = (mse all, mse zero)`.
    aux: Vec<Vec<(f64, f64)>>,
    eval_time: Duration,
}

const ZERO: &str = "brightness<=0.05";

fn survey_runs() -> &'static SurveyRuns {
    static CELL: OnceLock<SurveyRuns> = OnceLock::new();
    CELL.get_or_init(|| {
        let filters = vec![TestFilter::All, TestFilter::brightness_zero("brightness")];
        let mut reports = Vec::new();
        let mut aux = vec![Vec::new(); AUX_GRID.len()];
        let mut eval_time = Duration::ZERO;
        for seed in 0..SURVEY_SEEDS {
            let sim = simulate_moth_survey(&SurveyConfig {
                seed,
                ..SurveyConfig::default()
            })
            .expect("simulation");
            let t = Instant::now();
            let cfg = EvalConfig {
                filters: filters.clone(),
                seed,
                ..EvalConfig::default()
            };
            reports.push(loyo_evaluate(&sim.table, &cfg).expect("evaluation"));
            eval_time += t.elapsed();
            for (slot, &k) in AUX_GRID.iter().enumerate() {
                let cfg = EvalConfig {
                    methods: vec![EvalMethod::Tqs],
                    filters: filters.clone(),
                    max_auxiliary: Some(k),
                    diagnostics: false,
                    seed,
                    ..EvalConfig::default()
                };
                let r = loyo_evaluate(&sim.table, &cfg).expect("evaluation");
                let mse = |subset: &str| r.aggregate(subset, EvalMethod::Tqs).expect("aggregate").mean_mse;
                aux[slot].push((mse("all"), mse(ZERO)));
            }
        }
        SurveyRuns {
            reports,
            aux,
            eval_time,
        }
    })
}

fn brightness_correlation_and_spread() -> Verdict {
    let runs = survey_runs();
    let (mut before, mut after, mut count) = (0.0, 0.0, 0.0);
    let n_species = runs.reports[0].species.len();
    let mut keep_tqs = vec![0.0; n_species];
    let mut keep_hs = vec![0.0; n_species];
    for r in &runs.reports {
        let d = r.diagnostics.as_ref().expect("diagnostics");
        for (i, s) in d.species.iter().enumerate() {
            before += s.correlation_raw.abs();
            after += s.correlation_3qs.abs();
            count += 1.0;
            keep_tqs[i] += s.retained_std_3qs / runs.reports.len() as f64;
            keep_hs[i] += s.retained_std_hs / runs.reports.len() as f64;
        }
    }
    let (before, after) = (before / count, after / count);
    let reduction = 1.0 - after / before;
    let spread_ok = keep_tqs.iter().zip(&keep_hs).all(|(t, h)| t > h);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    verdict(
        after < before && reduction >= 0.25 && spread_ok,
        format!(
            "{SURVEY_SEEDS} seeds x {n_species} species: mean |corr| {before:.3} -> {after:.3} (reduction {:.1}%, need >= 25%); retained std 3QS {:.3} vs HS {:.3}, 3QS higher for {}/{n_species} species",
            100.0 * reduction,
            mean(&keep_tqs),
            mean(&keep_hs),
            keep_tqs.iter().zip(&keep_hs).filter(|(t, h)| t > h).count()
        ),
    )
}

fn brightness_zero_ranking() -> Verdict {
    let runs = survey_runs();
    let mean = |m: EvalMethod| {
        runs.reports
            .iter()
            .map(|r| r.aggregate(ZERO, m).expect("aggregate").mean_percent_improvement)
            .sum::<f64>()
            / runs.reports.len() as f64
    };
    let [raw, hs, tqs, mb, global] =
        [EvalMethod::Raw, EvalMethod::Hs, EvalMethod::Tqs, EvalMethod::Mb, EvalMethod::Global].map(mean);
    let ok = global > tqs && tqs > mb.max(raw) && mb.min(raw) > hs && runs.eval_time < Duration::from_secs(600);
    verdict(
        ok,
        format!(
            "brightness-zero subset, mean % improvement over {SURVEY_SEEDS} seeds: global {global:.2} > 3qs {tqs:.2} > {{mb {mb:.2}, raw {raw:.2}}} > hs {hs:.2}; runtime {} (limit 600s)",
            secs(runs.eval_time)
        ),
    )
}

fn more_auxiliary_species_help() -> Verdict {
    let runs = survey_runs();
    let means: Vec<(f64, f64)> = runs
        .aux
        .iter()
        .map(|per_seed| {
            let n = per_seed.len() as f64;
            (
                per_seed.iter().map(|p| p.0).sum::<f64>() / n,
                per_seed.iter().map(|p| p.1).sum::<f64>() / n,
            )
        })
        .collect();
    let non_increasing = |pick: fn(&(f64, f64)) -> f64| means.windows(2).all(|w| pick(&w[1]) <= pick(&w[0]));
    let ok = non_increasing(|p| p.0) && non_increasing(|p| p.1);
    let show = |pick: fn(&(f64, f64)) -> f64| {
        means.iter().map(|p| format!("{:.4}", pick(p))).collect::<Vec<_>>().join(" ")
    };
    verdict(
        ok,
        format!(
            "auxiliary species {AUX_GRID:?}, mean 3QS MSE all [{}], brightness-zero [{}]",
            show(|p| p.0),
            show(|p| p.1)
        ),
    )
}

fn twenty_pairs_for_five_years() -> Verdict {
    let r = &survey_runs().reports[0];
    let mut per_cell: BTreeMap<(&str, &str, EvalMethod), usize> = BTreeMap::new();
    for c in &r.cells {
        *per_cell.entry((&c.subset, &c.species, c.method)).or_default() += 1;
    }
    let expected = r.subsets.len() * r.species.len() * r.methods.len();
    let all_twenty = per_cell.len() == expected && per_cell.values().all(|&n| n == 20);
    let distinct: std::collections::BTreeSet<_> = r.cells.iter().map(|c| (&c.train_year, &c.test_year)).collect();
    verdict(
        r.groups.len() == 5 && r.pairs == 20 && distinct.len() == 20 && all_twenty,
        format!(
            "{} years: {} pairs reported, {} distinct (train, test) pairs, {} (subset, species, method) groups each with 20 cells: {all_twenty}",
            r.groups.len(),
            r.pairs,
            distinct.len(),
            per_cell.len()
        ),
    )
}

// ---------------------------------------------------------------- CLI

fn tqs(args: &[&str], out: &Path, jobs: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_tqs"))
        .args(args)
        .args(["--out", out.to_str().unwrap(), "--jobs", jobs, "--seed", "11"])
        .output()
        .expect("run tqs");
    assert!(
        status.status.success(),
        "tqs {args:?} failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn run_all_commands(dir: &Path, jobs: &str) {
    tqs(&["simulate", "--set", "years=3", "--set", "days_per_year=60", "--set", "n_species=4"], dir, jobs);
    let schema = dir.join("survey_schema.toml");
    let schema = schema.to_str().unwrap();
    tqs(&["denoise", "--config", schema, "--method", "3qs"], &dir.join("denoise"), jobs);
    tqs(&["denoise", "--config", schema, "--method", "hs"], &dir.join("denoise_hs"), jobs);
    tqs(&["eval", "--config", schema, "--test-filter", "both"], &dir.join("eval"), jobs);
    tqs(
        &["synth", "--set", "trials=3", "--set", "species_grid=[2, 4]", "--set", "noise_grid=[0.0, 0.2]"],
        &dir.join("synth"),
        jobs,
    );
    tqs(&["verify", "--joints", "20"], &dir.join("verify"), jobs);
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_outputs_are_deterministic() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let runs = [("1", "a"), ("1", "b"), ("4", "c"), ("4", "d")];
    let mut sets = Vec::new();
    for (jobs, name) in runs {
        let d = root.path().join(name);
        run_all_commands(&d, jobs);
        sets.push(files(&d));
    }
    let reference = &sets[0];
    let mismatched: Vec<String> = sets[1..]
        .iter()
        .flat_map(|s| {
            reference
                .keys()
                .chain(s.keys())
                .filter(|k| reference.get(*k) != s.get(*k))
                .cloned()
                .collect::<Vec<_>>()
        })
        .collect();
    let differs = files(&root.path().join("a").join("denoise")) != files(&root.path().join("a").join("denoise_hs"));
    verdict(
        mismatched.is_empty() && differs && reference.len() >= 12,
        format!(
            "{} output files from 6 invocations, 2 runs each with --jobs 1 and --jobs 4: {} mismatches{}; hs and 3qs outputs differ: {differs}",
            reference.len(),
            mismatched.len(),
            if mismatched.is_empty() { String::new() } else { format!(" ({})", mismatched.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let checks: [(&str, fn() -> Verdict); 12] = [
        ("two estimator forms agree on exact joints", forms_agree),
        ("denoised error never exceeds raw error", denoised_closer_than_raw),
        ("reconstruction error equals conditional noise variance", error_is_conditional_variance),
        ("recoverable noise on a linear instance", recoverable_linear_instance),
        ("more species lower the error", more_species_lower_error),
        ("error grows with independent noise", error_grows_with_noise),
        ("half-sibling regression is worse at every grid point", half_sibling_worse_everywhere),
        ("brightness correlation falls and spread is retained", brightness_correlation_and_spread),
        ("ranking on brightness-zero nights", brightness_zero_ranking),
        ("more auxiliary species do not hurt", more_auxiliary_species_help),
        ("five years give twenty train/test pairs", twenty_pairs_for_five_years),
        ("CLI outputs are byte-identical across runs and thread counts", cli_outputs_are_deterministic),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in &checks {
            println!("{name}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();

    let total = Instant::now();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {name}: {} ({})", i + 1, v.detail, secs(t.elapsed()));
        if !v.passed {
            failed.push(i + 1);
        }
    }
    println!(
        "acceptance: {} passed, {} failed{} in {}",
        ran - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") },
        secs(total.elapsed())
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

use ndarray::{s, Array2, Axis};
use tqs::data::{read_table, ColumnRole, Schema};
use tqs::estimators::{auxiliary_sets, denoise_table, DenoiseOptions, Method};
use tqs::eval::{simulate_moth_survey, SurveyConfig};
use tqs::regress::RegressorConfig;
use tqs::stats::pearson;
use tqs::synth::{generate, run_noise_sweep, run_species_sweep, SweepSettings, SynthConfig};
use tqs::Table;

fn survey(seed: u64) -> Table {
    simulate_moth_survey(&SurveyConfig {
        seed,
        years: 3,
        days_per_year: 80,
        n_species: 4,
        ..SurveyConfig::default()
    })
    .unwrap()
    .table
}

fn schema(t: &Table) -> Schema {
    let mut s = Schema::new().with("day", ColumnRole::Covariate).with("year", ColumnRole::Group);
    s.insert("brightness", ColumnRole::Diagnostic);
    for n in t.species_names() {
        s.insert(n.as_str(), ColumnRole::Count);
    }
    s
}

#[test]
fn survey_csv_round_trips_exactly() {
    let t = survey(2);
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back: Table = read_table(buf.as_slice(), &schema(&t)).unwrap();
    assert_eq!(back, t);
}

#[test]
fn residual_estimate_is_counts_minus_correction() {
    let t = survey(5);
    let r = denoise_table(
        &t,
        Method::TqsResidual,
        &RegressorConfig::spline_gam(),
        &RegressorConfig::kernel_ridge(),
        &DenoiseOptions::default(),
    )
    .unwrap();
    let residuals = r.residuals.as_ref().unwrap();
    assert_eq!(r.z_hat.dim(), t.counts().dim());
    assert_eq!(residuals.dim(), t.counts().dim());
    let aux = auxiliary_sets(&t, None);
    for i in 0..t.n_species() {
        let feats: Array2<f64> = residuals.select(Axis(1), &aux[i]);
        let corr = r.correction_models[i].predict(feats.view()).unwrap();
        let expect = &t.counts().column(i) - &corr;
        assert_eq!(r.z_hat.column(i), expect);
        // residuals are measurements minus the covariate fit
        let fit = r.covariate_models[i].fitted();
        assert_eq!(residuals.column(i), &t.counts().column(i) - &fit);
    }
}

#[test]
fn every_method_keeps_the_shape() {
    let t = survey(1);
    for m in [Method::Hs, Method::TqsEq1, Method::TqsEq2, Method::TqsResidual] {
        let r = denoise_table(
            &t,
            m,
            &RegressorConfig::spline_gam(),
            &RegressorConfig::kernel_ridge(),
            &DenoiseOptions::default(),
        )
        .unwrap();
        assert_eq!(r.z_hat.dim(), t.counts().dim(), "{m}");
        assert_eq!(r.fits.len(), t.n_species());
        assert!(r.z_hat.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn generated_covariate_and_noise_are_uncorrelated() {
    for seed in 0..5 {
        let inst = generate::<f64>(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let r = pearson(inst.x.view(), inst.noise.view()).unwrap();
        assert!(r.abs() < 0.15, "seed {seed}: {r}");
    }
}

#[test]
fn half_sibling_loses_with_a_common_cause() {
    for cfg in [RegressorConfig::kernel_ridge(), RegressorConfig::boosted_trees()] {
        let settings = SweepSettings::new(20, 3, cfg.clone());
        let rows = run_species_sweep(&[2], &settings).unwrap();
        let (tqs, hs) = (&rows[0], &rows[1]);
        assert_eq!((tqs.method.as_str(), hs.method.as_str()), ("3qs", "hs"));
        assert_eq!(tqs.samples.len(), 20);
        assert!(hs.mean_mse > tqs.mean_mse, "{:?}: {} vs {}", cfg.kind(), hs.mean_mse, tqs.mean_mse);
    }
}

#[test]
fn noise_free_tied_sweep_is_nearly_exact() {
    let settings = SweepSettings::new(20, 0, RegressorConfig::kernel_ridge());
    let rows = run_noise_sweep(&[0.0], &settings).unwrap();
    assert!(rows[0].mean_mse < 0.01, "{}", rows[0].mean_mse);
}

#[test]
fn species_sweep_prefix_matches_smaller_instance() {
    // species 1 and the first auxiliary are the same draws at n = 2 and n = 5
    let small = generate::<f64>(&SynthConfig { n_species: 2, seed: 8, ..SynthConfig::default() }).unwrap();
    let big = generate::<f64>(&SynthConfig { n_species: 5, seed: 8, ..SynthConfig::default() }).unwrap();
    assert_eq!(small.z, big.z.slice(s![.., ..2]));
    assert_eq!(small.x, big.x);
    assert_eq!(small.y.column(0), big.y.column(0));
}

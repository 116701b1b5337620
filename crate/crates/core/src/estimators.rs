//! Half-sibling and three-quarter-sibling estimators.
//!
//! Pairwise forms take the target measurement `y1`, the process covariates
//! `x` and the auxiliary measurements `y2`. Conditional expectations come
//! from any [`ConditionalMean`] provider, normally a [`RegressorConfig`].
//!
//! * half-sibling: `y1 - E[y1 | y2]`
//! * residual form: `y1 - E[y1 - E[y1 | x] | x, y2]`
//! * difference form: `y1 - E[y1 | x, y2] + E[y1 | x]`
//!
//! With exact expectations the last two coincide; with fitted regressions
//! they generally differ by a small amount.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{abundance_order, ObservationTable};
use crate::regress::{FittedRegressor, RegressError, RegressorConfig};
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EstimateError {
    #[error("{stage} regression failed for species {species} ({name}): {source}")]
    Species {
        stage: &'static str,
        species: usize,
        name: String,
        #[source]
        source: RegressError,
    },
    #[error("{stage} regression failed: {source}")]
    Regression {
        stage: &'static str,
        #[source]
        source: RegressError,
    },
    #[error("need ≥ 2 species, got {0}")]
    TooFewSpecies(usize),
    #[error("need at least one process covariate")]
    NoCovariates,
    #[error("inputs disagree on the number of rows ({0} vs {1})")]
    RowMismatch(usize, usize),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
}

/// Something that can estimate `E[target | features]` at the training rows.
pub trait ConditionalMean<T: Real> {
    fn fit_predict(&self, features: ArrayView2<'_, T>, targets: ArrayView1<'_, T>) -> Result<Array1<T>, RegressError>;
}

impl<T: Real> ConditionalMean<T> for RegressorConfig {
    fn fit_predict(&self, features: ArrayView2<'_, T>, targets: ArrayView1<'_, T>) -> Result<Array1<T>, RegressError> {
        Ok(self.fit(features, targets)?.fitted().to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    #[serde(rename = "hs")]
    Hs,
    #[serde(rename = "3qs-eq1")]
    TqsEq1,
    #[serde(rename = "3qs-eq2")]
    TqsEq2,
    #[serde(rename = "3qs")]
    TqsResidual,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hs => "hs",
            Self::TqsEq1 => "3qs-eq1",
            Self::TqsEq2 => "3qs-eq2",
            Self::TqsResidual => "3qs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hs" => Ok(Self::Hs),
            "3qs-eq1" => Ok(Self::TqsEq1),
            "3qs-eq2" => Ok(Self::TqsEq2),
            "3qs" | "3qs-residual" => Ok(Self::TqsResidual),
            other => Err(format!("unknown method {other:?} (expected hs, 3qs, 3qs-eq1 or 3qs-eq2)")),
        }
    }
}

/// `values - mean(values) + target_mean`.
pub fn center<T: Real>(values: ArrayView1<'_, T>, target_mean: T) -> Array1<T> {
    let m = stats::mean(values);
    values.mapv(|v| v - m + target_mean)
}

fn check_rows(a: usize, b: usize) -> Result<(), EstimateError> {
    if a != b {
        return Err(EstimateError::RowMismatch(a, b));
    }
    if a < 2 {
        return Err(EstimateError::TooFewRows(a));
    }
    Ok(())
}

fn stage(stage: &'static str) -> impl Fn(RegressError) -> EstimateError {
    move |source| EstimateError::Regression { stage, source }
}

/// Columns of `x` followed by columns of `y2`.
pub fn joint_features<T: Real>(x: ArrayView2<'_, T>, y2: ArrayView2<'_, T>) -> Array2<T> {
    concatenate(Axis(1), &[x, y2]).expect("row counts checked")
}

/// Half-sibling regression: `y1 - E[y1 | y2]`.
pub fn hs_estimate<T: Real, C: ConditionalMean<T> + ?Sized>(
    y1: ArrayView1<'_, T>,
    y2: ArrayView2<'_, T>,
    cm: &C,
) -> Result<Array1<T>, EstimateError> {
    check_rows(y1.len(), y2.nrows())?;
    let predicted = cm.fit_predict(y2, y1).map_err(stage("auxiliary"))?;
    Ok(&y1 - &predicted)
}

/// Residual form: regress `y1` on `x`, then subtract what `(x, y2)` predicts
/// of the residual.
pub fn tqs_eq1<T: Real, Cx: ConditionalMean<T> + ?Sized, Cj: ConditionalMean<T> + ?Sized>(
    y1: ArrayView1<'_, T>,
    x: ArrayView2<'_, T>,
    y2: ArrayView2<'_, T>,
    cm_x: &Cx,
    cm_joint: &Cj,
) -> Result<Array1<T>, EstimateError> {
    check_rows(y1.len(), x.nrows())?;
    check_rows(y1.len(), y2.nrows())?;
    let on_x = cm_x.fit_predict(x, y1).map_err(stage("covariate"))?;
    let residual = &y1 - &on_x;
    let joint = joint_features(x, y2);
    let correction = cm_joint
        .fit_predict(joint.view(), residual.view())
        .map_err(stage("joint"))?;
    Ok(&y1 - &correction)
}

/// Difference form: `y1 - E[y1 | x, y2] + E[y1 | x]`.
pub fn tqs_eq2<T: Real, Cx: ConditionalMean<T> + ?Sized, Cj: ConditionalMean<T> + ?Sized>(
    y1: ArrayView1<'_, T>,
    x: ArrayView2<'_, T>,
    y2: ArrayView2<'_, T>,
    cm_x: &Cx,
    cm_joint: &Cj,
) -> Result<Array1<T>, EstimateError> {
    check_rows(y1.len(), x.nrows())?;
    check_rows(y1.len(), y2.nrows())?;
    let on_x = cm_x.fit_predict(x, y1).map_err(stage("covariate"))?;
    let joint = joint_features(x, y2);
    let on_joint = cm_joint.fit_predict(joint.view(), y1).map_err(stage("joint"))?;
    Ok(&(&y1 - &on_joint) + &on_x)
}

/// Mean squared difference between the two 3QS forms on the same data.
pub fn form_disagreement<T: Real>(
    y1: ArrayView1<'_, T>,
    x: ArrayView2<'_, T>,
    y2: ArrayView2<'_, T>,
    cfg_x: &RegressorConfig,
    cfg_joint: &RegressorConfig,
) -> Result<f64, EstimateError> {
    let a = tqs_eq1(y1, x, y2, cfg_x, cfg_joint)?;
    let b = tqs_eq2(y1, x, y2, cfg_x, cfg_joint)?;
    Ok(stats::mse(a.view(), b.view()).as_f64())
}

/// Per-species training errors of the internal regressions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesFit {
    pub species: String,
    /// Training MSE of `E[Y_i | X]`; absent for half-sibling regression.
    pub covariate_fit_mse: Option<f64>,
    /// Training MSE of the correction regression.
    pub correction_fit_mse: f64,
    /// Auxiliary species used as predictors.
    pub auxiliary: Vec<String>,
    /// MSE between the residual and difference forms (pairwise 3QS only).
    pub form_disagreement_mse: Option<f64>,
}

/// Denoised estimates for every species of a table.
#[derive(Debug, Clone)]
pub struct DenoiseResult<T> {
    pub method: Method,
    pub species_names: Vec<String>,
    /// Observations × species.
    pub z_hat: Array2<T>,
    /// `Y_i - E[Y_i | X]`; absent for half-sibling regression.
    pub residuals: Option<Array2<T>>,
    /// `E[Y_i | X]` per species; empty for half-sibling regression.
    pub covariate_models: Vec<FittedRegressor<T>>,
    /// Correction models: `E[R_i | R_-i]` for the residual estimator,
    /// `E[·| X, Y_-i]` for the pairwise forms, `E[Y_i | Y_-i]` for HS.
    pub correction_models: Vec<FittedRegressor<T>>,
    pub fits: Vec<SpeciesFit>,
}

/// Options for [`denoise_table`].
#[derive(Debug, Clone, Default)]
pub struct DenoiseOptions {
    /// Use at most this many other species as predictors, taken in
    /// descending order of total count.
    pub max_auxiliary: Option<usize>,
    /// Master seed; each species derives its own from its name.
    pub seed: u64,
}

/// The auxiliary species for each target, most abundant first.
pub fn auxiliary_sets<T: Real>(table: &ObservationTable<T>, max_aux: Option<usize>) -> Vec<Vec<usize>> {
    let order = abundance_order(table);
    (0..table.n_species())
        .map(|i| {
            let others = order.iter().copied().filter(|&j| j != i);
            match max_aux {
                Some(k) => others.take(k).collect(),
                None => others.collect(),
            }
        })
        .collect()
}

fn species_seeded(cfg: &RegressorConfig, master: u64, name: &str, role: &str) -> RegressorConfig {
    cfg.clone()
        .with_seed(stats::derive_seed_from_label(master, &format!("{role}/{name}")))
}

/// Multi-species residual estimator: `Ẑ_i = Y_i - E[R_i | R_-i]` with
/// `R_i = Y_i - E[Y_i | X]`.
pub fn tqs_multi_species<T: Real>(
    table: &ObservationTable<T>,
    cfg_x: &RegressorConfig,
    cfg_res: &RegressorConfig,
) -> Result<DenoiseResult<T>, EstimateError> {
    denoise_table(table, Method::TqsResidual, cfg_x, cfg_res, &DenoiseOptions::default())
}

/// Denoises every species of `table` with `method`.
///
/// `cfg_x` fits `E[Y_i | X]`; `cfg_res` fits the correction regression.
/// Species are fitted independently (possibly in parallel); results do not
/// depend on the execution order.
pub fn denoise_table<T: Real>(
    table: &ObservationTable<T>,
    method: Method,
    cfg_x: &RegressorConfig,
    cfg_res: &RegressorConfig,
    options: &DenoiseOptions,
) -> Result<DenoiseResult<T>, EstimateError> {
    let s = table.n_species();
    if s < 2 {
        return Err(EstimateError::TooFewSpecies(s));
    }
    if method != Method::Hs && table.n_covariates() == 0 {
        return Err(EstimateError::NoCovariates);
    }
    if table.n_obs() < 2 {
        return Err(EstimateError::TooFewRows(table.n_obs()));
    }
    let names = table.species_names();
    let y = table.counts();
    let x = table.covariates();
    let aux = auxiliary_sets(table, options.max_auxiliary);
    let fail = |stage: &'static str, i: usize| {
        let name = names[i].clone();
        move |source| EstimateError::Species {
            stage,
            species: i,
            name,
            source,
        }
    };

    // Stage 1: E[Y_i | X] for every species (not needed for HS).
    let covariate_models: Vec<FittedRegressor<T>> = if method == Method::Hs {
        Vec::new()
    } else {
        (0..s)
            .into_par_iter()
            .map(|i| {
                species_seeded(cfg_x, options.seed, &names[i], "covariate")
                    .fit(x, y.column(i))
                    .map_err(fail("covariate", i))
            })
            .collect::<Result<_, _>>()?
    };
    let residuals = (!covariate_models.is_empty()).then(|| {
        let mut r = y.to_owned();
        for (i, model) in covariate_models.iter().enumerate() {
            r.column_mut(i).zip_mut_with(&model.fitted(), |v, &f| *v = *v - f);
        }
        r
    });

    // Stage 2: correction regression per species.
    let per_species: Vec<(FittedRegressor<T>, Array1<T>, Option<f64>)> = (0..s)
        .into_par_iter()
        .map(|i| {
            let cfg = species_seeded(cfg_res, options.seed, &names[i], "correction");
            let target = y.column(i);
            let others = &aux[i];
            match method {
                Method::Hs => {
                    let feats = y.select(Axis(1), others);
                    let model = cfg.fit(feats.view(), target).map_err(fail("auxiliary", i))?;
                    let z = &target - &model.fitted();
                    Ok((model, z, None))
                }
                Method::TqsResidual => {
                    let r = residuals.as_ref().expect("residuals computed");
                    let feats = r.select(Axis(1), others);
                    let model = cfg.fit(feats.view(), r.column(i)).map_err(fail("residual", i))?;
                    let z = &target - &model.fitted();
                    Ok((model, z, None))
                }
                Method::TqsEq1 | Method::TqsEq2 => {
                    let r = residuals.as_ref().expect("residuals computed");
                    let feats = joint_features(x, y.select(Axis(1), others).view());
                    let on_resid = cfg.fit(feats.view(), r.column(i)).map_err(fail("joint", i))?;
                    let on_y = cfg.fit(feats.view(), target).map_err(fail("joint", i))?;
                    let eq1 = &target - &on_resid.fitted();
                    let eq2 = &(&target - &on_y.fitted()) + &covariate_models[i].fitted();
                    let disagreement = stats::mse(eq1.view(), eq2.view()).as_f64();
                    Ok(if method == Method::TqsEq1 {
                        (on_resid, eq1, Some(disagreement))
                    } else {
                        (on_y, eq2, Some(disagreement))
                    })
                }
            }
        })
        .collect::<Result<_, EstimateError>>()?;

    let mut z_hat = Array2::zeros(y.raw_dim());
    let mut correction_models = Vec::with_capacity(s);
    let mut fits = Vec::with_capacity(s);
    for (i, (model, z, disagreement)) in per_species.into_iter().enumerate() {
        z_hat.column_mut(i).assign(&z);
        fits.push(SpeciesFit {
            species: names[i].clone(),
            covariate_fit_mse: covariate_models.get(i).map(|m| m.training_mse()),
            correction_fit_mse: model.training_mse(),
            auxiliary: aux[i].iter().map(|&j| names[j].clone()).collect(),
            form_disagreement_mse: disagreement,
        });
        correction_models.push(model);
    }

    Ok(DenoiseResult {
        method,
        species_names: names.to_vec(),
        z_hat,
        residuals,
        covariate_models,
        correction_models,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{Backend, KernelParams, TreeParams, Bandwidth};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact conditional mean by grouping identical feature rows.
    struct GroupMean;

    impl ConditionalMean<f64> for GroupMean {
        fn fit_predict(&self, f: ArrayView2<'_, f64>, t: ArrayView1<'_, f64>) -> Result<Array1<f64>, RegressError> {
            let mut out = Array1::zeros(t.len());
            for i in 0..t.len() {
                let group: Vec<usize> = (0..t.len()).filter(|&j| f.row(j) == f.row(i)).collect();
                out[i] = group.iter().map(|&j| t[j]).sum::<f64>() / group.len() as f64;
            }
            Ok(out)
        }
    }

    fn table(x: Array2<f64>, y: Array2<f64>) -> ObservationTable<f64> {
        let n = y.nrows();
        ObservationTable::new(
            (0..x.ncols()).map(|j| format!("x{j}")).collect(),
            x,
            (0..y.ncols()).map(|j| format!("s{j}")).collect(),
            y,
            None,
            vec![String::new(); n],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn centering() {
        assert_eq!(center(array![1.0, 2.0, 3.0].view(), 0.0), array![-1.0, 0.0, 1.0]);
        let v = array![0.5, 4.0, -2.0];
        let m = stats::mean(v.view());
        let same = center(v.view(), m);
        for (a, b) in same.iter().zip(v.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let once = center(v.view(), 0.0);
        for (a, b) in center(once.view(), 0.0).iter().zip(once.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn hs_with_constant_auxiliary_removes_the_mean() {
        let y1 = array![1.0, 4.0, -2.0, 3.5];
        let y2 = Array2::from_elem((4, 1), 7.0);
        for cfg in [RegressorConfig::kernel_ridge(), RegressorConfig::boosted_trees()] {
            let z = hs_estimate(y1.view(), y2.view(), &cfg).unwrap();
            let m = stats::mean(y1.view());
            for (a, b) in z.iter().zip(y1.iter()) {
                assert_abs_diff_eq!(*a, b - m, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hs_on_itself_with_interpolating_backend_is_zero() {
        let y1 = array![0.3, -1.0, 2.2, 0.9, 1.7];
        let y2 = y1.clone().insert_axis(Axis(1));
        let cfg = RegressorConfig::from_backend(Backend::KernelRidge(KernelParams {
            lambda: 1e-10,
            bandwidth: Bandwidth::Median,
        }));
        let z = hs_estimate(y1.view(), y2.view(), &cfg).unwrap();
        for v in z {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-4);
        }
    }

    // Eight equally likely outcomes of (z1, n): Y1 = Z1 + N and Y2 = N.
    #[test]
    fn hs_on_star_joint_recovers_centered_signal() {
        let mut z1 = Vec::new();
        let mut n = Vec::new();
        for a in [0.0, 1.0, 3.0, 4.0] {
            for b in [-1.0, 1.0] {
                z1.push(a);
                n.push(b);
            }
        }
        let z1 = Array1::from(z1);
        let n = Array1::from(n);
        let y1 = &z1 + &n;
        let y2 = n.clone().insert_axis(Axis(1));
        let z = hs_estimate(y1.view(), y2.view(), &GroupMean).unwrap();
        let ez = stats::mean(z1.view());
        for (a, b) in z.iter().zip(z1.iter()) {
            assert_abs_diff_eq!(*a, b - ez, epsilon = 1e-12);
        }
    }

    // X, N uniform on {0,1}; Z_i = X; Y_i = X + N.
    fn four_outcomes() -> (Array1<f64>, Array2<f64>, Array2<f64>, Array1<f64>) {
        let x = array![0.0, 0.0, 1.0, 1.0];
        let n = array![0.0, 1.0, 0.0, 1.0];
        let y = &x + &n;
        (y.clone(), x.clone().insert_axis(Axis(1)), y.insert_axis(Axis(1)), x)
    }

    #[test]
    fn both_forms_give_z_plus_half_on_four_outcome_joint() {
        let (y1, x, y2, z1) = four_outcomes();
        let a = tqs_eq1(y1.view(), x.view(), y2.view(), &GroupMean, &GroupMean).unwrap();
        let b = tqs_eq2(y1.view(), x.view(), y2.view(), &GroupMean, &GroupMean).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(a[i], z1[i] + 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(b[i], z1[i] + 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn uninformative_auxiliary_leaves_measurement_unchanged() {
        // y2 independent of everything: every (x, y2) cell pairs with every y1 value.
        let mut xs = Vec::new();
        let mut y1 = Vec::new();
        let mut y2 = Vec::new();
        for x in [0.0, 1.0] {
            for noise in [-1.0, 2.0] {
                for aux in [5.0, 6.0, 7.0] {
                    xs.push(x);
                    y1.push(3.0 * x + noise);
                    y2.push(aux);
                }
            }
        }
        let x = Array1::from(xs).insert_axis(Axis(1));
        let y1 = Array1::from(y1);
        let y2 = Array1::from(y2).insert_axis(Axis(1));
        let z = tqs_eq1(y1.view(), x.view(), y2.view(), &GroupMean, &GroupMean).unwrap();
        for (a, b) in z.iter().zip(y1.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_measurement_is_a_fixed_point() {
        let y1 = Array1::from_elem(30, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((30, 1), |_| rng.random_range(-1.0..1.0));
        let y2 = Array2::from_shape_fn((30, 2), |_| rng.random_range(-1.0..1.0));
        let z = tqs_eq2(y1.view(), x.view(), y2.view(), &RegressorConfig::kernel_ridge(), &RegressorConfig::boosted_trees()).unwrap();
        for v in z {
            assert_abs_diff_eq!(v, 4.0, epsilon = 1e-9);
        }
    }

    fn shared_noise_table(seed: u64, m: usize, s: usize, sigma: f64) -> (ObservationTable<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((m, 1), |_| rng.random_range(-1.0..1.0));
        let noise: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wx: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wn: Vec<f64> = (0..s).map(|_| rng.random_range(0.5..1.0)).collect();
        let z = Array2::from_shape_fn((m, s), |(i, j)| wx[j] * x[[i, 0]]);
        let y = Array2::from_shape_fn((m, s), |(i, j)| {
            z[[i, j]] + 1.5 / (1.0 + (-3.0 * wn[j] * noise[i]).exp()) + sigma * rng.random_range(-1.0..1.0)
        });
        (table(x, y), z)
    }

    #[test]
    fn zero_residuals_leave_counts_unchanged() {
        // counts exactly linear in X: the smoother reproduces them.
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y = Array2::from_shape_fn((40, 3), |(i, j)| (j as f64 + 1.0) * i as f64 - 2.0);
        let t = table(x, y.clone());
        let cfg_x = RegressorConfig::from_backend(Backend::SplineGam(crate::regress::SplineParams::with_penalty(1e3)));
        let res = tqs_multi_species(&t, &cfg_x, &RegressorConfig::kernel_ridge()).unwrap();
        for (a, b) in res.z_hat.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn two_species_reduce_to_pairwise_call() {
        let (t, _) = shared_noise_table(5, 120, 2, 0.05);
        let cfg_x = RegressorConfig::spline_gam();
        let cfg_res = RegressorConfig::kernel_ridge();
        let res = tqs_multi_species(&t, &cfg_x, &cfg_res).unwrap();
        let r = res.residuals.as_ref().unwrap();
        for i in 0..2 {
            let expect_r = &t.counts().column(i) - &res.covariate_models[i].fitted();
            assert_eq!(r.column(i), expect_r);
        }
        let counts = t.counts();
        let y1 = counts.column(0);
        let aux = r.column(1).to_owned().insert_axis(Axis(1));
        let pair = hs_estimate(r.column(0), aux.view(), &cfg_res).unwrap();
        // hs on residuals gives R_1 - E[R_1|R_2]; add back E[Y_1|X].
        let direct = &pair + &res.covariate_models[0].fitted();
        for (a, b) in res.z_hat.column(0).iter().zip(direct.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let z_from_model = &y1 - &res.correction_models[0].predict(aux.view()).unwrap();
        for (a, b) in res.z_hat.column(0).iter().zip(z_from_model.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn denoising_beats_raw_measurements_on_shared_noise() {
        let mut better = 0.0;
        let mut raw = 0.0;
        for seed in 0..20 {
            let (t, z) = shared_noise_table(seed, 200, 10, 0.0);
            let res = tqs_multi_species(&t, &RegressorConfig::spline_gam(), &RegressorConfig::kernel_ridge()).unwrap();
            for i in 0..10 {
                let zi = z.column(i);
                let m = stats::mean(zi);
                better += stats::mse(center(res.z_hat.column(i), m).view(), zi);
                raw += stats::mse(center(t.counts().column(i), m).view(), zi);
            }
        }
        assert!(better < raw, "denoised {better} vs raw {raw}");
    }

    #[test]
    fn species_order_does_not_matter() {
        let (t, _) = shared_noise_table(8, 80, 4, 0.1);
        let perm = [2, 0, 3, 1];
        let shuffled = t.select_species(&perm);
        let cfg_x = RegressorConfig::spline_gam();
        let cfg_res = RegressorConfig::kernel_ridge();
        let a = tqs_multi_species(&t, &cfg_x, &cfg_res).unwrap();
        let b = tqs_multi_species(&shuffled, &cfg_x, &cfg_res).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            for (u, v) in b.z_hat.column(k).iter().zip(a.z_hat.column(j).iter()) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn failures_name_the_species() {
        let x = Array2::from_elem((5, 1), 1.0); // degenerate for the spline
        let y = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64);
        let err = tqs_multi_species(&table(x, y), &RegressorConfig::spline_gam(), &RegressorConfig::kernel_ridge()).unwrap_err();
        assert!(matches!(err, EstimateError::Species { species: 0, stage: "covariate", .. }), "{err}");

        let one = table(Array2::zeros((5, 1)), Array2::zeros((5, 1)));
        assert_eq!(
            tqs_multi_species(&one, &RegressorConfig::spline_gam(), &RegressorConfig::kernel_ridge()).unwrap_err(),
            EstimateError::TooFewSpecies(1)
        );
    }

    #[test]
    fn pairwise_methods_report_form_disagreement() {
        let (t, _) = shared_noise_table(2, 60, 3, 0.1);
        let opts = DenoiseOptions::default();
        let cfg = RegressorConfig::kernel_ridge();
        let a = denoise_table(&t, Method::TqsEq1, &RegressorConfig::spline_gam(), &cfg, &opts).unwrap();
        let b = denoise_table(&t, Method::TqsEq2, &RegressorConfig::spline_gam(), &cfg, &opts).unwrap();
        for (fa, fb) in a.fits.iter().zip(&b.fits) {
            let d = fa.form_disagreement_mse.unwrap();
            assert!(d >= 0.0 && d.is_finite());
            assert_eq!(Some(d), fb.form_disagreement_mse);
        }
        let direct = form_disagreement(
            t.counts().column(0),
            t.covariates(),
            t.counts().select(Axis(1), &[1, 2]).view(),
            &RegressorConfig::spline_gam(),
            &cfg,
        )
        .unwrap();
        // auxiliary order may differ from column order; kernel ridge is
        // invariant to feature permutation
        assert_abs_diff_eq!(direct, a.fits[0].form_disagreement_mse.unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn auxiliary_limit_follows_abundance() {
        let y = Array2::from_shape_fn((4, 4), |(_, j)| [1.0, 9.0, 5.0, 3.0][j]);
        let t = table(Array2::zeros((4, 1)), y);
        let sets = auxiliary_sets(&t, Some(2));
        assert_eq!(sets[0], vec![1, 2]);
        assert_eq!(sets[1], vec![2, 3]);
        assert_eq!(auxiliary_sets(&t, None)[3], vec![1, 2, 0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn difference_form_is_shift_equivariant(seed in 0u64..500, shift in -20.0f64..20.0) {
            let (t, _) = shared_noise_table(seed, 50, 2, 0.1);
            let y1 = t.counts().column(0).to_owned();
            let y2 = t.counts().column(1).to_owned().insert_axis(Axis(1));
            let trees = RegressorConfig::from_backend(Backend::BoostedTrees(TreeParams::default()));
            for (cx, cj) in [(RegressorConfig::spline_gam(), RegressorConfig::kernel_ridge()), (RegressorConfig::kernel_ridge(), trees)] {
                let a = tqs_eq2(y1.view(), t.covariates(), y2.view(), &cx, &cj).unwrap();
                let shifted = &y1 + shift;
                let b = tqs_eq2(shifted.view(), t.covariates(), y2.view(), &cx, &cj).unwrap();
                for (u, v) in a.iter().zip(b.iter()) {
                    prop_assert!((u + shift - v).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn hs_output_has_zero_mean(seed in 0u64..500) {
            let (t, _) = shared_noise_table(seed, 40, 3, 0.2);
            let counts = t.counts();
            let z = hs_estimate(counts.column(0), counts.slice(ndarray::s![.., 1..]), &RegressorConfig::boosted_trees()).unwrap();
            prop_assert!(stats::mean(z.view()).abs() < 1e-9);
        }
    }
}

//! Synthetic benchmark: species driven by a shared process covariate and a
//! shared noise source through randomized sigmoids.
//!
//! `Y_i = w_x[i] X + g_i(w_n[i] N) + eps_i` with `g_i(t) = a / (1 + exp(-b (t - c)))`
//! and latent `Z_i = w_x[i] X`.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{center, hs_estimate, tqs_eq2, EstimateError};
use crate::regress::RegressorConfig;
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trial {trial} at {sweep_value}: {source}")]
    Trial {
        trial: usize,
        sweep_value: f64,
        #[source]
        source: EstimateError,
    },
    #[error("csv output failed: {0}")]
    Io(String),
}

/// How the shared noise enters each measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLink {
    /// Randomized sigmoid `g_i`.
    Sigmoid,
    /// `g_i(t) = t`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_species: usize,
    pub n_obs: usize,
    pub sigma_eps: f64,
    /// All species share one sigmoid and one noise weight.
    pub tie_noise_functions: bool,
    pub seed: u64,
    pub amplitude: (f64, f64),
    pub slope: (f64, f64),
    pub center: (f64, f64),
    pub weight_x: (f64, f64),
    pub weight_n: (f64, f64),
    pub noise_link: NoiseLink,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_species: 2,
            n_obs: 500,
            sigma_eps: 0.0,
            tie_noise_functions: false,
            seed: 0,
            amplitude: (0.5, 2.0),
            slope: (1.0, 5.0),
            center: (-0.5, 0.5),
            weight_x: (-1.0, 1.0),
            weight_n: (-1.0, 1.0),
            noise_link: NoiseLink::Sigmoid,
        }
    }
}

fn check_interval(name: &str, (lo, hi): (f64, f64)) -> Result<(), SynthError> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(SynthError::InvalidConfig(format!("{name} interval [{lo}, {hi}] is empty")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_species < 2 {
            return Err(SynthError::InvalidConfig(format!("need ≥ 2 species, got {}", self.n_species)));
        }
        if self.n_obs < 50 {
            return Err(SynthError::InvalidConfig(format!("need ≥ 50 observations, got {}", self.n_obs)));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(SynthError::InvalidConfig(format!("sigma_eps must be ≥ 0, got {}", self.sigma_eps)));
        }
        check_interval("amplitude", self.amplitude)?;
        check_interval("slope", self.slope)?;
        check_interval("center", self.center)?;
        check_interval("weight_x", self.weight_x)?;
        check_interval("weight_n", self.weight_n)?;
        for (name, (lo, hi)) in [("weight_x", self.weight_x), ("weight_n", self.weight_n)] {
            if lo < -1.0 || hi > 1.0 {
                return Err(SynthError::InvalidConfig(format!("{name} must lie within [-1, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sigmoid {
    pub amplitude: f64,
    pub slope: f64,
    pub center: f64,
}

impl Sigmoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude / (1.0 + (-self.slope * (t - self.center)).exp())
    }
}

#[derive(Debug, Clone)]
pub struct SynthInstance<T> {
    pub x: Array1<T>,
    pub noise: Array1<T>,
    /// Observations × species.
    pub z: Array2<T>,
    pub y: Array2<T>,
    pub w_x: Array1<T>,
    pub w_n: Array1<T>,
    pub sigmoids: Vec<Sigmoid>,
    pub noise_link: NoiseLink,
    pub eps: Array2<T>,
}

impl<T: Real> SynthInstance<T> {
    /// `g_i(w_n[i] * noise[row])`.
    pub fn noise_term(&self, row: usize, species: usize) -> T {
        let t = (self.w_n[species] * self.noise[row]).as_f64();
        T::of(match self.noise_link {
            NoiseLink::Sigmoid => self.sigmoids[species].eval(t),
            NoiseLink::Linear => t,
        })
    }

    /// Rebuilds `y` from the stored parts.
    pub fn reconstruct(&self) -> Array2<T> {
        Array2::from_shape_fn(self.y.raw_dim(), |(r, i)| self.z[[r, i]] + self.noise_term(r, i) + self.eps[[r, i]])
    }

    pub fn covariates(&self) -> Array2<T> {
        self.x.clone().insert_axis(Axis(1))
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        // still consume a draw so other fields do not shift
        let _: f64 = rng.random();
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws an instance. Draw order is fixed (X, N, per-species parameters,
/// then standard normals scaled by `sigma_eps`), so configs that differ only
/// in `sigma_eps` share everything else.
pub fn generate<T: Real>(config: &SynthConfig) -> Result<SynthInstance<T>, SynthError> {
    config.validate()?;
    let (m, n) = (config.n_obs, config.n_species);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    // per-species parameters, species by species: the first k species of a
    // larger instance match a k-species instance with the same seed
    let mut w_x = Vec::with_capacity(n);
    let mut w_n = Vec::with_capacity(n);
    let mut sigmoids = Vec::with_capacity(n);
    for _ in 0..n {
        w_x.push(uniform(&mut rng, config.weight_x));
        w_n.push(uniform(&mut rng, config.weight_n));
        sigmoids.push(Sigmoid {
            amplitude: uniform(&mut rng, config.amplitude),
            slope: uniform(&mut rng, config.slope),
            center: uniform(&mut rng, config.center),
        });
    }
    if config.tie_noise_functions {
        let (w, g) = (w_n[0], sigmoids[0]);
        w_n.iter_mut().for_each(|v| *v = w);
        sigmoids.iter_mut().for_each(|v| *v = g);
    }
    let mut eps = Array2::zeros((m, n));
    for i in 0..n {
        for r in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            eps[[r, i]] = T::of(config.sigma_eps * e);
        }
    }
    let mut inst = SynthInstance {
        x: x.iter().map(|&v| T::of(v)).collect(),
        noise: noise.iter().map(|&v| T::of(v)).collect(),
        z: Array2::from_shape_fn((m, n), |(r, i)| T::of(w_x[i] * x[r])),
        y: Array2::zeros((m, n)),
        w_x: w_x.iter().map(|&v| T::of(v)).collect(),
        w_n: w_n.iter().map(|&v| T::of(v)).collect(),
        sigmoids,
        noise_link: config.noise_link,
        eps,
    };
    inst.y = inst.reconstruct();
    Ok(inst)
}

/// MSE after centering `z_hat` to the mean of `z_true`.
pub fn reconstruction_mse<T: Real>(z_hat: ArrayView1<'_, T>, z_true: ArrayView1<'_, T>) -> Result<T, SynthError> {
    if z_hat.len() != z_true.len() {
        return Err(SynthError::LengthMismatch(z_hat.len(), z_true.len()));
    }
    let c = center(z_hat, stats::mean(z_true));
    Ok(stats::mse(c.view(), z_true))
}

/// One `(sweep value, method)` cell of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub method: String,
    pub mean_mse: f64,
    pub stderr_mse: Option<f64>,
    pub trials: usize,
    /// Per-trial MSE, in trial order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Settings shared by both sweeps.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub trials: usize,
    /// Trial `t` uses an instance seed derived from `(seed, t)`, the same at
    /// every grid point.
    pub seed: u64,
    pub base: SynthConfig,
    pub regressor: RegressorConfig,
}

impl SweepSettings {
    pub fn new(trials: usize, seed: u64, regressor: RegressorConfig) -> Self {
        Self {
            trials,
            seed,
            base: SynthConfig::default(),
            regressor,
        }
    }
}

/// (3QS MSE, HS MSE) for species 1 of one instance.
fn score_instance(inst: &SynthInstance<f64>, cfg: &RegressorConfig) -> Result<(f64, f64), EstimateError> {
    let x = inst.covariates();
    let y1 = inst.y.column(0);
    let others = inst.y.slice(s![.., 1..]);
    let z1 = inst.z.column(0);
    let tqs = tqs_eq2(y1, x.view(), others, cfg, cfg)?;
    let hs = hs_estimate(y1, others, cfg)?;
    let mse = |v: &Array1<f64>| reconstruction_mse(v.view(), z1).expect("same length");
    Ok((mse(&tqs), mse(&hs)))
}

fn sweep(
    values: &[f64],
    settings: &SweepSettings,
    configure: impl Fn(&mut SynthConfig, f64) + Sync,
) -> Result<Vec<SweepRow>, SynthError> {
    if settings.trials == 0 {
        return Err(SynthError::InvalidConfig("trials must be ≥ 1".into()));
    }
    let cells: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..settings.trials).map(move |t| (v, t)))
        .collect();
    let scores: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(v, t)| {
            let mut cfg = settings.base.clone();
            configure(&mut cfg, values[v]);
            cfg.seed = stats::derive_seed(settings.seed, &[t as u64]);
            let inst = generate::<f64>(&cfg)?;
            let regressor = settings
                .regressor
                .clone()
                .with_seed(stats::derive_seed(settings.seed, &[t as u64, v as u64, 1]));
            score_instance(&inst, &regressor).map_err(|source| SynthError::Trial {
                trial: t,
                sweep_value: values[v],
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(values.len() * 2);
    for (v, chunk) in scores.chunks(settings.trials).enumerate() {
        for (method, pick) in [("3qs", 0usize), ("hs", 1)] {
            let samples: Vec<f64> = chunk.iter().map(|s| if pick == 0 { s.0 } else { s.1 }).collect();
            let (mean_mse, stderr_mse) = stats::mean_and_stderr(&samples);
            rows.push(SweepRow {
                sweep_value: values[v],
                method: method.to_string(),
                mean_mse,
                stderr_mse,
                trials: samples.len(),
                samples,
            });
        }
    }
    Ok(rows)
}

/// Varies the number of species with `sigma_eps = 0`.
pub fn run_species_sweep(ns: &[usize], settings: &SweepSettings) -> Result<Vec<SweepRow>, SynthError> {
    if let Some(&bad) = ns.iter().find(|&&n| n < 2) {
        return Err(SynthError::InvalidConfig(format!("species counts must be ≥ 2, got {bad}")));
    }
    let values: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    sweep(&values, settings, |cfg, v| {
        cfg.n_species = v as usize;
        cfg.sigma_eps = 0.0;
    })
}

/// Varies `sigma_eps` with two species sharing one noise function.
pub fn run_noise_sweep(sigmas: &[f64], settings: &SweepSettings) -> Result<Vec<SweepRow>, SynthError> {
    if let Some(&bad) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(SynthError::InvalidConfig(format!("noise levels must be ≥ 0, got {bad}")));
    }
    sweep(sigmas, settings, |cfg, v| {
        cfg.n_species = 2;
        cfg.tie_noise_functions = true;
        cfg.sigma_eps = v;
    })
}

/// Writes `sweep_value,method,mean_mse,stderr_mse,trials`; an absent
/// standard error is an empty field.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SynthError::Io(e.to_string());
    w.write_record(["sweep_value", "method", "mean_mse", "stderr_mse", "trials"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.method.clone(),
            r.mean_mse.to_string(),
            r.stderr_mse.map(|v| v.to_string()).unwrap_or_default(),
            r.trials.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| SynthError::Io(e.to_string()))
}

//! Conditional-mean regression backends.
//!
//! Every conditional expectation the estimators need is approximated by
//! fitting one of these backends and reading its predictions. All three are
//! deterministic given their configuration and seed.

pub mod kernel;
pub mod spline;
pub mod trees;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::stats;

pub use kernel::{Bandwidth, KernelModel, KernelParams};
pub use spline::{Penalty, SplineModel, SplineParams};
pub use trees::{TreeEnsemble, TreeParams};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RegressError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least one feature column")]
    NoFeatures,
    #[error("{features} feature rows but {targets} targets")]
    RowMismatch { features: usize, targets: usize },
    #[error("model was trained on {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("spline_gam smooths a single feature, got {0}")]
    SplineNeedsOneFeature(usize),
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("{backend}: linear system is singular after regularization ({detail})")]
    Singular { backend: RegressorKind, detail: String },
    #[error("invalid regressor configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    SplineGam,
    BoostedTrees,
    KernelRidge,
}

impl RegressorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SplineGam => "spline_gam",
            Self::BoostedTrees => "boosted_trees",
            Self::KernelRidge => "kernel_ridge",
        }
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for RegressorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spline_gam" => Ok(Self::SplineGam),
            "boosted_trees" => Ok(Self::BoostedTrees),
            "kernel_ridge" => Ok(Self::KernelRidge),
            other => Err(format!(
                "unknown regressor kind {other:?} (expected spline_gam, boosted_trees or kernel_ridge)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    SplineGam(SplineParams),
    BoostedTrees(TreeParams),
    KernelRidge(KernelParams),
}

/// A backend with its hyperparameters and the seed for any randomness it
/// uses (only boosted-tree subsampling draws random numbers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub backend: Backend,
    pub seed: u64,
}

impl RegressorConfig {
    pub fn spline_gam() -> Self {
        Self::from_backend(Backend::SplineGam(SplineParams::default()))
    }

    pub fn boosted_trees() -> Self {
        Self::from_backend(Backend::BoostedTrees(TreeParams::default()))
    }

    pub fn kernel_ridge() -> Self {
        Self::from_backend(Backend::KernelRidge(KernelParams::default()))
    }

    /// Default hyperparameters for `kind`.
    pub fn of_kind(kind: RegressorKind) -> Self {
        match kind {
            RegressorKind::SplineGam => Self::spline_gam(),
            RegressorKind::BoostedTrees => Self::boosted_trees(),
            RegressorKind::KernelRidge => Self::kernel_ridge(),
        }
    }

    pub fn from_backend(backend: Backend) -> Self {
        Self { backend, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> RegressorKind {
        match self.backend {
            Backend::SplineGam(_) => RegressorKind::SplineGam,
            Backend::BoostedTrees(_) => RegressorKind::BoostedTrees,
            Backend::KernelRidge(_) => RegressorKind::KernelRidge,
        }
    }

    pub fn validate(&self) -> Result<(), RegressError> {
        match &self.backend {
            Backend::SplineGam(p) => p.validate(),
            Backend::BoostedTrees(p) => p.validate(),
            Backend::KernelRidge(p) => p.validate(),
        }
    }

    pub fn fit<T: Real>(
        &self,
        features: ArrayView2<'_, T>,
        targets: ArrayView1<'_, T>,
    ) -> Result<FittedRegressor<T>, RegressError> {
        fit(self, features, targets)
    }
}

#[derive(Debug, Clone)]
enum Model<T> {
    Spline(SplineModel<T>),
    Trees(TreeEnsemble<T>),
    Kernel(KernelModel<T>),
}

/// A trained conditional-mean model.
#[derive(Debug, Clone)]
pub struct FittedRegressor<T> {
    model: Model<T>,
    dim: usize,
    fitted: Array1<T>,
    training_mse: f64,
}

/// Trains `config` on `features` (m × d) and `targets` (m).
pub fn fit<T: Real>(
    config: &RegressorConfig,
    features: ArrayView2<'_, T>,
    targets: ArrayView1<'_, T>,
) -> Result<FittedRegressor<T>, RegressError> {
    config.validate()?;
    let (m, d) = features.dim();
    if m != targets.len() {
        return Err(RegressError::RowMismatch {
            features: m,
            targets: targets.len(),
        });
    }
    if m < 2 {
        return Err(RegressError::TooFewRows(m));
    }
    if d == 0 {
        return Err(RegressError::NoFeatures);
    }
    if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite);
    }
    let (model, fitted) = match &config.backend {
        Backend::SplineGam(p) => {
            if d != 1 {
                return Err(RegressError::SplineNeedsOneFeature(d));
            }
            let (model, fitted) = spline::fit(p, features.column(0), targets)?;
            (Model::Spline(model), fitted)
        }
        Backend::BoostedTrees(p) => {
            let (model, fitted) = trees::fit(p, config.seed, features, targets)?;
            (Model::Trees(model), fitted)
        }
        Backend::KernelRidge(p) => {
            let (model, fitted) = kernel::fit(p, features, targets)?;
            (Model::Kernel(model), fitted)
        }
    };
    let training_mse = stats::mse(fitted.view(), targets).as_f64();
    Ok(FittedRegressor {
        model,
        dim: d,
        fitted,
        training_mse,
    })
}

impl<T: Real> FittedRegressor<T> {
    pub fn kind(&self) -> RegressorKind {
        match self.model {
            Model::Spline(_) => RegressorKind::SplineGam,
            Model::Trees(_) => RegressorKind::BoostedTrees,
            Model::Kernel(_) => RegressorKind::KernelRidge,
        }
    }

    /// Training feature dimensionality.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Predictions at the training rows, computed during fitting.
    pub fn fitted(&self) -> ArrayView1<'_, T> {
        self.fitted.view()
    }

    pub fn training_mse(&self) -> f64 {
        self.training_mse
    }

    pub fn predict(&self, features: ArrayView2<'_, T>) -> Result<Array1<T>, RegressError> {
        if features.ncols() != self.dim {
            return Err(RegressError::DimensionMismatch {
                expected: self.dim,
                got: features.ncols(),
            });
        }
        Ok(match &self.model {
            Model::Spline(m) => features.column(0).mapv(|x| m.eval(x)),
            Model::Trees(m) => m.predict(features),
            Model::Kernel(m) => m.predict(features),
        })
    }

    pub fn as_spline(&self) -> Option<&SplineModel<T>> {
        match &self.model {
            Model::Spline(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_trees(&self) -> Option<&TreeEnsemble<T>> {
        match &self.model {
            Model::Trees(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_kernel(&self) -> Option<&KernelModel<T>> {
        match &self.model {
            Model::Kernel(m) => Some(m),
            _ => None,
        }
    }
}

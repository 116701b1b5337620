//! Removal of shared systematic measurement error from simultaneous
//! observations of several dependent quantities.
//!
//! The central estimator subtracts from each measurement the part of its
//! residual (after regressing on observed common causes) that the other
//! measurements can predict. See [`estimators`] for the estimators,
//! [`oracle`] for exact verification on finite joint distributions,
//! [`synth`] and [`eval`] for the benchmark and survey-evaluation harnesses.

pub mod data;
pub mod estimators;
pub mod eval;
pub mod linalg;
pub mod oracle;
pub mod regress;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use scalar::{Field, Real};

/// Observation table with `f64` entries.
pub type Table = data::ObservationTable<f64>;
/// Denoising output in `f64`.
pub type Denoised = estimators::DenoiseResult<f64>;
/// Fitted conditional-mean model in `f64`.
pub type Fitted = regress::FittedRegressor<f64>;
/// Finite joint distribution with floating-point probabilities.
pub type FloatJoint = oracle::DiscreteJoint<f64>;
/// Arbitrary-precision rational, the exact [`Field`].
pub type Exact = num_rational::BigRational;
/// Finite joint distribution with exact rational probabilities.
pub type ExactJoint = oracle::DiscreteJoint<Exact>;
/// Synthetic benchmark instance in `f64`.
pub type Instance = synth::SynthInstance<f64>;

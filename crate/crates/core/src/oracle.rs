//! Exact enumeration over small finite joint distributions of
//! `(X, Z1, Z2, N)` with deterministic measurements `Y1`, `Y2`.
//!
//! The joint factorises as `p(x) p(z1|x) p(z2|x) p(n)`. Conditional
//! expectations are computed by grouping outcomes on the conditioning
//! values, so no regression is involved. Generic over [`Field`]: `f64` gives
//! answers up to rounding, `BigRational` gives them exactly.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::scalar::Field;
use crate::stats;

/// Tolerance for every exact comparison in this module.
pub const TOLERANCE: f64 = 1e-12;
/// Largest support the constructor accepts.
pub const MAX_SUPPORT: usize = 10_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error("{what} probabilities sum to {sum}, not 1")]
    Unnormalized { what: String, sum: f64 },
    #[error("{what} has a negative probability {p}")]
    NegativeProbability { what: String, p: f64 },
    #[error("{what} is empty")]
    EmptySupport { what: String },
    #[error("support has {0} outcomes, more than {MAX_SUPPORT}")]
    SupportTooLarge(usize),
    #[error("E[Y1|X] != E[Z1|X] at x = {x}: {e_y1} vs {e_z1}")]
    MeanMismatch { x: f64, e_y1: f64, e_z1: f64 },
    #[error("joint is not additive (Y1 != Z1 + f(N))")]
    NonAdditive,
    #[error("f(N) is not a function of (X, Y2) on this support")]
    NotRecoverable,
    #[error("the two estimator forms disagree at outcome {outcome}: {eq1} vs {eq2}")]
    FormsDisagree { outcome: usize, eq1: f64, eq2: f64 },
}

/// Finite distribution as `(value, probability)` pairs.
pub type Dist<T> = Vec<(T, T)>;

/// Deterministic map `(z, n) -> y` for a measurement. `f` is `f(n)`.
pub type MeasureFn<T> = Arc<dyn Fn(&T, &T, &T) -> T + Send + Sync>;

/// How a latent value and the noise combine into a measurement.
#[derive(Clone)]
pub enum Measure<T> {
    /// `y = z + f(n)`
    Additive,
    /// `y = z`
    Clean,
    /// `y = g(z, n, f(n))`
    Custom(MeasureFn<T>),
}

impl<T: Field> Measure<T> {
    fn apply(&self, z: &T, n: &T, f: &T) -> T {
        match self {
            Self::Additive => z.clone() + f.clone(),
            Self::Clean => z.clone(),
            Self::Custom(g) => g(z, n, f),
        }
    }
}

impl<T> std::fmt::Debug for Measure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Additive => f.write_str("Additive"),
            Self::Clean => f.write_str("Clean"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub x: T,
    pub z1: T,
    pub z2: T,
    pub n: T,
    /// `f(n)`
    pub f: T,
    pub y1: T,
    pub y2: T,
    pub prob: T,
}

#[derive(Debug, Clone)]
pub struct DiscreteJoint<T> {
    outcomes: Vec<Outcome<T>>,
    additive: bool,
}

fn check_dist<T: Field>(d: &[(T, T)], what: &str) -> Result<(), OracleError> {
    if d.is_empty() {
        return Err(OracleError::EmptySupport { what: what.to_string() });
    }
    let mut sum = T::zero();
    for (_, p) in d {
        if *p < T::zero() {
            return Err(OracleError::NegativeProbability {
                what: what.to_string(),
                p: p.to_f64(),
            });
        }
        sum = sum + p.clone();
    }
    let err = (sum.clone() - T::one()).abs().to_f64();
    if !(err <= TOLERANCE) {
        return Err(OracleError::Unnormalized {
            what: what.to_string(),
            sum: sum.to_f64(),
        });
    }
    Ok(())
}

/// Builds `p(x) p(z1|x) p(z2|x) p(n)` with measurements `y1 = m1(z1, n)` and
/// `y2 = m2(z2, n)`. Zero-probability outcomes are dropped.
pub fn build_joint<T: Field>(
    px: &[(T, T)],
    pz1_given_x: impl Fn(&T) -> Dist<T>,
    pz2_given_x: impl Fn(&T) -> Dist<T>,
    pn: &[(T, T)],
    f: impl Fn(&T) -> T,
    y1: Measure<T>,
    y2: Measure<T>,
) -> Result<DiscreteJoint<T>, OracleError> {
    check_dist(px, "p(x)")?;
    check_dist(pn, "p(n)")?;
    let fs: Vec<T> = pn.iter().map(|(n, _)| f(n)).collect();
    let mut outcomes = Vec::new();
    for (x, p_x) in px {
        let d1 = pz1_given_x(x);
        let d2 = pz2_given_x(x);
        check_dist(&d1, "p(z1|x)")?;
        check_dist(&d2, "p(z2|x)")?;
        let size = px.len() * d1.len() * d2.len() * pn.len();
        if size > MAX_SUPPORT {
            return Err(OracleError::SupportTooLarge(size));
        }
        for (z1, p1) in &d1 {
            for (z2, p2) in &d2 {
                for ((n, p_n), fv) in pn.iter().zip(&fs) {
                    let prob = p_x.clone() * p1.clone() * p2.clone() * p_n.clone();
                    if prob.is_zero() {
                        continue;
                    }
                    outcomes.push(Outcome {
                        x: x.clone(),
                        z1: z1.clone(),
                        z2: z2.clone(),
                        n: n.clone(),
                        f: fv.clone(),
                        y1: y1.apply(z1, n, fv),
                        y2: y2.apply(z2, n, fv),
                        prob,
                    });
                }
            }
        }
    }
    if outcomes.is_empty() {
        return Err(OracleError::EmptySupport { what: "joint".into() });
    }
    if outcomes.len() > MAX_SUPPORT {
        return Err(OracleError::SupportTooLarge(outcomes.len()));
    }
    Ok(DiscreteJoint {
        outcomes,
        additive: matches!(y1, Measure::Additive),
    })
}

impl<T: Field> DiscreteJoint<T> {
    pub fn outcomes(&self) -> &[Outcome<T>] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Whether `Y1 = Z1 + f(N)`.
    pub fn is_additive(&self) -> bool {
        self.additive
    }

    /// `E[g]`.
    pub fn expectation(&self, g: impl Fn(&Outcome<T>) -> T) -> T {
        self.outcomes
            .iter()
            .fold(T::zero(), |acc, o| acc + o.prob.clone() * g(o))
    }

    /// `E[g]` where `g` is given per outcome.
    pub fn expectation_of(&self, values: &[T]) -> T {
        self.outcomes
            .iter()
            .zip(values)
            .fold(T::zero(), |acc, (o, v)| acc + o.prob.clone() * v.clone())
    }
}

/// Outcome → real map used as a conditioning or target variable.
pub type Var<'a, T> = &'a dyn Fn(&Outcome<T>) -> T;

pub fn var_x<T: Field>(o: &Outcome<T>) -> T {
    o.x.clone()
}
pub fn var_y1<T: Field>(o: &Outcome<T>) -> T {
    o.y1.clone()
}
pub fn var_y2<T: Field>(o: &Outcome<T>) -> T {
    o.y2.clone()
}
pub fn var_z1<T: Field>(o: &Outcome<T>) -> T {
    o.z1.clone()
}
pub fn var_f<T: Field>(o: &Outcome<T>) -> T {
    o.f.clone()
}

/// Conditional expectation table: one entry per attained conditioning value.
#[derive(Debug, Clone)]
pub struct CondTable<T> {
    /// `(given values, probability of the event, conditional mean)`, sorted
    /// by the given values.
    pub entries: Vec<(Vec<T>, T, T)>,
    /// Entry index for each outcome of the joint.
    pub index: Vec<usize>,
}

impl<T: Field> CondTable<T> {
    pub fn get(&self, given: &[T]) -> Option<&T> {
        self.entries
            .binary_search_by(|(k, _, _)| cmp_keys(k, given))
            .ok()
            .map(|i| &self.entries[i].2)
    }

    /// Conditional mean evaluated at every outcome.
    pub fn at_outcomes(&self) -> Vec<T> {
        self.index.iter().map(|&i| self.entries[i].2.clone()).collect()
    }
}

fn cmp_keys<T: PartialOrd>(a: &[T], b: &[T]) -> Ordering {
    for (u, v) in a.iter().zip(b) {
        match u.partial_cmp(v).expect("comparable values") {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// `E[target | given]` as a table over the attained values of `given`.
pub fn exact_cond_expectation<T: Field>(
    joint: &DiscreteJoint<T>,
    target: Var<'_, T>,
    given: &[Var<'_, T>],
) -> CondTable<T> {
    let targets: Vec<T> = joint.outcomes.iter().map(target).collect();
    cond_expectation_of(joint, &targets, given)
}

fn cond_expectation_of<T: Field>(joint: &DiscreteJoint<T>, targets: &[T], given: &[Var<'_, T>]) -> CondTable<T> {
    let keys: Vec<Vec<T>> = joint
        .outcomes
        .iter()
        .map(|o| given.iter().map(|g| g(o)).collect())
        .collect();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| cmp_keys(&keys[a], &keys[b]));

    let mut entries: Vec<(Vec<T>, T, T)> = Vec::new();
    let mut index = vec![0; keys.len()];
    let mut start = 0;
    while start < order.len() {
        let key = &keys[order[start]];
        let mut end = start;
        let mut mass = T::zero();
        let mut weighted = T::zero();
        while end < order.len() && cmp_keys(&keys[order[end]], key) == Ordering::Equal {
            let i = order[end];
            let p = joint.outcomes[i].prob.clone();
            weighted = weighted + p.clone() * targets[i].clone();
            mass = mass + p;
            index[i] = entries.len();
            end += 1;
        }
        let mean = weighted / mass.clone();
        entries.push((key.clone(), mass, mean));
        start = end;
    }
    CondTable { entries, index }
}

/// Both estimator forms at every outcome.
#[derive(Debug, Clone)]
pub struct TqsValues<T> {
    /// `Y1 - E[Y1 - E[Y1|X] | X, Y2]`
    pub residual_form: Vec<T>,
    /// `Y1 - E[Y1 | X, Y2] + E[Y1 | X]`
    pub difference_form: Vec<T>,
}

impl<T: Field> TqsValues<T> {
    /// Largest pointwise gap between the two forms.
    pub fn max_gap(&self) -> T {
        self.residual_form
            .iter()
            .zip(&self.difference_form)
            .map(|(a, b)| (a.clone() - b.clone()).abs())
            .fold(T::zero(), |m, v| if v > m { v } else { m })
    }
}

/// Evaluates the estimator with exact expectations, in both forms.
/// `corrupt` drops the `E[Y1|X]` term of the difference form; it exists so
/// that callers can test their own failure paths.
pub fn exact_tqs_forms<T: Field>(joint: &DiscreteJoint<T>, corrupt: bool) -> TqsValues<T> {
    let on_x = exact_cond_expectation(joint, &var_y1, &[&var_x]).at_outcomes();
    let given: [Var<'_, T>; 2] = [&var_x, &var_y2];
    let residual: Vec<T> = joint
        .outcomes
        .iter()
        .zip(&on_x)
        .map(|(o, e)| o.y1.clone() - e.clone())
        .collect();
    let resid_on_joint = cond_expectation_of(joint, &residual, &given).at_outcomes();
    let y_on_joint = exact_cond_expectation(joint, &var_y1, &given).at_outcomes();
    let mut residual_form = Vec::with_capacity(joint.len());
    let mut difference_form = Vec::with_capacity(joint.len());
    for (i, o) in joint.outcomes.iter().enumerate() {
        residual_form.push(o.y1.clone() - resid_on_joint[i].clone());
        let mut d = o.y1.clone() - y_on_joint[i].clone();
        if !corrupt {
            d = d + on_x[i].clone();
        }
        difference_form.push(d);
    }
    TqsValues {
        residual_form,
        difference_form,
    }
}

/// Exact estimator values per outcome, from the residual form. Fails if the
/// difference form disagrees anywhere by more than [`TOLERANCE`].
pub fn exact_tqs<T: Field>(joint: &DiscreteJoint<T>) -> Result<Vec<T>, OracleError> {
    let v = exact_tqs_forms(joint, false);
    check_forms(&v)?;
    Ok(v.residual_form)
}

fn check_forms<T: Field>(v: &TqsValues<T>) -> Result<(), OracleError> {
    for (i, (a, b)) in v.residual_form.iter().zip(&v.difference_form).enumerate() {
        if !((a.clone() - b.clone()).abs().to_f64() <= TOLERANCE) {
            return Err(OracleError::FormsDisagree {
                outcome: i,
                eq1: a.to_f64(),
                eq2: b.to_f64(),
            });
        }
    }
    Ok(())
}

/// Exact half-sibling values `Y1 - E[Y1 | Y2]` per outcome.
pub fn exact_hs<T: Field>(joint: &DiscreteJoint<T>) -> Vec<T> {
    let e = exact_cond_expectation(joint, &var_y1, &[&var_y2]).at_outcomes();
    joint
        .outcomes
        .iter()
        .zip(e)
        .map(|(o, e)| o.y1.clone() - e)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
}

impl CheckReport {
    fn from_slack(lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            lhs,
            rhs,
            satisfied: slack >= -TOLERANCE,
            slack,
        }
    }
}

fn check_mean_precondition<T: Field>(joint: &DiscreteJoint<T>) -> Result<(), OracleError> {
    let e_y = exact_cond_expectation(joint, &var_y1, &[&var_x]);
    let e_z = exact_cond_expectation(joint, &var_z1, &[&var_x]);
    for ((key, _, a), (_, _, b)) in e_y.entries.iter().zip(&e_z.entries) {
        if !((a.clone() - b.clone()).abs().to_f64() <= TOLERANCE) {
            return Err(OracleError::MeanMismatch {
                x: key[0].to_f64(),
                e_y1: a.to_f64(),
                e_z1: b.to_f64(),
            });
        }
    }
    Ok(())
}

fn second_moment_error<T: Field>(joint: &DiscreteJoint<T>, est: &[T], target: impl Fn(&Outcome<T>) -> T) -> T {
    let sq: Vec<T> = joint
        .outcomes
        .iter()
        .zip(est)
        .map(|(o, e)| {
            let d = e.clone() - target(o);
            d.clone() * d
        })
        .collect();
    joint.expectation_of(&sq)
}

fn mse_inequality_with<T: Field>(joint: &DiscreteJoint<T>, z_hat: &[T]) -> Result<CheckReport, OracleError> {
    check_mean_precondition(joint)?;
    let lhs = second_moment_error(joint, z_hat, |o| o.z1.clone());
    let rhs = joint.expectation(|o| {
        let d = o.y1.clone() - o.z1.clone();
        d.clone() * d
    });
    let slack = rhs.clone() - lhs.clone();
    Ok(CheckReport::from_slack(lhs.to_f64(), rhs.to_f64(), slack.to_f64()))
}

/// `E[(Ẑ1 - Z1)^2] <= E[(Y1 - Z1)^2]`, given `E[Y1|X] = E[Z1|X]`.
pub fn verify_mse_inequality<T: Field>(joint: &DiscreteJoint<T>) -> Result<CheckReport, OracleError> {
    mse_inequality_with(joint, &exact_tqs(joint)?)
}

fn conditional_variance_with<T: Field>(joint: &DiscreteJoint<T>, z_hat: &[T]) -> Result<CheckReport, OracleError> {
    if !joint.additive {
        return Err(OracleError::NonAdditive);
    }
    let ef = joint.expectation(var_f);
    let lhs = second_moment_error(joint, z_hat, |o| o.z1.clone() + ef.clone());
    let f_on_joint = exact_cond_expectation(joint, &var_f, &[&var_x, &var_y2]).at_outcomes();
    let rhs = second_moment_error(joint, &f_on_joint, |o| o.f.clone());
    let gap = (lhs.clone() - rhs.clone()).abs();
    let slack = -gap.to_f64();
    Ok(CheckReport::from_slack(lhs.to_f64(), rhs.to_f64(), slack))
}

/// `E[(Ẑ1 - (Z1 + E f(N)))^2] = E[Var(f(N) | X, Y2)]` for additive joints.
pub fn verify_conditional_variance<T: Field>(joint: &DiscreteJoint<T>) -> Result<CheckReport, OracleError> {
    conditional_variance_with(joint, &exact_tqs(joint)?)
}

/// Whether `f(N)` is constant on every `(X, Y2)` event.
pub fn noise_recoverable<T: Field>(joint: &DiscreteJoint<T>) -> bool {
    let given: [Var<'_, T>; 2] = [&var_x, &var_y2];
    let e = exact_cond_expectation(joint, &var_f, &given);
    joint
        .outcomes
        .iter()
        .zip(&e.index)
        .all(|(o, &i)| (o.f.clone() - e.entries[i].2.clone()).abs().to_f64() <= TOLERANCE)
}

fn exact_recovery_with<T: Field>(joint: &DiscreteJoint<T>, z_hat: &[T]) -> Result<CheckReport, OracleError> {
    if !joint.additive {
        return Err(OracleError::NonAdditive);
    }
    if !noise_recoverable(joint) {
        return Err(OracleError::NotRecoverable);
    }
    let ef = joint.expectation(var_f);
    let worst = joint
        .outcomes
        .iter()
        .zip(z_hat)
        .map(|(o, e)| (e.clone() - o.z1.clone() - ef.clone()).abs())
        .fold(T::zero(), |m, v| if v > m { v } else { m });
    let w = worst.to_f64();
    Ok(CheckReport::from_slack(w, 0.0, -w))
}

/// When `f(N) = ψ(X, Y2)`, the estimator equals `Z1 + E f(N)` pointwise.
/// `lhs` is the largest pointwise deviation.
pub fn verify_exact_recovery<T: Field>(joint: &DiscreteJoint<T>) -> Result<CheckReport, OracleError> {
    exact_recovery_with(joint, &exact_tqs(joint)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndependenceCheck {
    pub noise_independent_of_x: bool,
    pub latents_independent_given_x: bool,
}

fn marginal<T: Field>(joint: &DiscreteJoint<T>, vars: &[Var<'_, T>]) -> CondTable<T> {
    // conditional table of the constant 1 carries the event probabilities
    let ones = vec![T::one(); joint.len()];
    cond_expectation_of(joint, &ones, vars)
}

fn prob_of<T: Field>(t: &CondTable<T>, key: &[T]) -> T {
    t.entries
        .binary_search_by(|(k, _, _)| cmp_keys(k, key))
        .map(|i| t.entries[i].1.clone())
        .unwrap_or_else(|_| T::zero())
}

fn close<T: Field>(a: &T, b: &T) -> bool {
    (a.clone() - b.clone()).abs().to_f64() <= TOLERANCE
}

/// Checks `N ⊥ X` and `Z1 ⊥ Z2 | X` on the full product of attained values.
pub fn check_independence<T: Field>(joint: &DiscreteJoint<T>) -> IndependenceCheck {
    let z2 = |o: &Outcome<T>| o.z2.clone();
    let n = |o: &Outcome<T>| o.n.clone();
    let px = marginal(joint, &[&var_x]);
    let pn = marginal(joint, &[&n]);
    let pxn = marginal(joint, &[&var_x, &n]);
    let noise_ok = px.entries.iter().all(|(kx, p_x, _)| {
        pn.entries.iter().all(|(kn, p_n, _)| {
            let joint_p = prob_of(&pxn, &[kx[0].clone(), kn[0].clone()]);
            close(&joint_p, &(p_x.clone() * p_n.clone()))
        })
    });
    let pxz1 = marginal(joint, &[&var_x, &var_z1]);
    let pxz2 = marginal(joint, &[&var_x, &z2]);
    let pxz12 = marginal(joint, &[&var_x, &var_z1, &z2]);
    let latents_ok = px.entries.iter().all(|(kx, p_x, _)| {
        let x = &kx[0];
        let z1s = pxz1.entries.iter().filter(|(k, _, _)| &k[0] == x);
        z1s.into_iter().all(|(k1, p1, _)| {
            pxz2.entries.iter().filter(|(k, _, _)| &k[0] == x).all(|(k2, p2, _)| {
                let p12 = prob_of(&pxz12, &[x.clone(), k1[1].clone(), k2[1].clone()]);
                // p(z1, z2 | x) = p(z1|x) p(z2|x)
                close(&(p12 * p_x.clone()), &(p1.clone() * p2.clone()))
            })
        })
    });
    IndependenceCheck {
        noise_independent_of_x: noise_ok,
        latents_independent_given_x: latents_ok,
    }
}

/// Families of random joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    /// `Y_i = Z_i + f(N)` with `E f(N) = 0`.
    AdditiveZeroMean,
    /// `Y_i = Z_i + f(N)` with an arbitrary `f`.
    Additive,
    /// `Y_i = Z_i + f(N)` with `Z2` a function of `X`, so `f(N) = Y2 - Z2(X)`.
    Recoverable,
    /// `Y1 = Z1 + f(N)(1 + Z1^2)` with `E f(N) = 0`: not additive, but
    /// `E[Y1|X] = E[Z1|X]` still holds.
    MeanMatched,
}

impl JointKind {
    pub const ALL: [JointKind; 4] = [Self::AdditiveZeroMean, Self::Additive, Self::Recoverable, Self::MeanMatched];
}

fn draw_values<R: Rng>(rng: &mut R, k: usize) -> Vec<i64> {
    let mut pool = vec![-2i64, -1, 0, 1, 2];
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

fn draw_dist<T: Field, R: Rng>(rng: &mut R, size: Option<usize>) -> Dist<T> {
    let k = size.unwrap_or_else(|| rng.random_range(2..=4));
    let values = draw_values(rng, k);
    // symmetric Dirichlet(1): normalised unit exponentials
    let raw: Vec<T> = (0..k)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            T::from_f64(e)
        })
        .collect();
    let total = raw.iter().fold(T::zero(), |a, b| a + b.clone());
    values
        .into_iter()
        .zip(raw)
        .map(|(v, w)| (T::from_f64(v as f64), w / total.clone()))
        .collect()
}

/// Random joint of the given family, fully determined by `seed`.
pub fn random_joint<T: Field>(kind: JointKind, seed: u64) -> DiscreteJoint<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px: Dist<T> = draw_dist(&mut rng, None);
    let mut pn: Dist<T> = draw_dist(&mut rng, None);
    let z1_tables: Vec<Dist<T>> = px.iter().map(|_| draw_dist(&mut rng, None)).collect();
    let z2_tables: Vec<Dist<T>> = px
        .iter()
        .map(|_| draw_dist(&mut rng, (kind == JointKind::Recoverable).then_some(1)))
        .collect();
    let zero_mean = matches!(kind, JointKind::AdditiveZeroMean | JointKind::MeanMatched);
    let f_ints: Vec<i64> = loop {
        let v: Vec<i64> = pn.iter().map(|_| rng.random_range(-2i64..=2)).collect();
        let mixed = v.iter().any(|&f| f > 0) && v.iter().any(|&f| f < 0);
        if !zero_mean || mixed || v.iter().all(|&f| f == 0) {
            break v;
        }
    };
    let f_values: Vec<T> = f_ints.iter().map(|&f| T::from_f64(f as f64)).collect();
    if zero_mean {
        // Reweight the positive side so E f(N) = 0 while f stays integer
        // valued; integer measurements keep float conditioning keys exact.
        let side = |positive: bool| {
            pn.iter()
                .zip(&f_values)
                .filter(|(_, f)| if positive { **f > T::zero() } else { **f < T::zero() })
                .fold(T::zero(), |a, ((_, p), f)| a + p.clone() * f.clone())
        };
        let (pos, neg) = (side(true), side(false));
        if !pos.is_zero() {
            let scale = -neg / pos;
            for ((_, p), f) in pn.iter_mut().zip(&f_values) {
                if *f > T::zero() {
                    *p = p.clone() * scale.clone();
                }
            }
            let total = pn.iter().fold(T::zero(), |a, (_, p)| a + p.clone());
            for (_, p) in &mut pn {
                *p = p.clone() / total.clone();
            }
        }
    }
    let lookup = |tables: &[Dist<T>], x: &T| -> Dist<T> {
        let i = px.iter().position(|(v, _)| v == x).expect("x in support");
        tables[i].clone()
    };
    let f = |n: &T| {
        let i = pn.iter().position(|(v, _)| v == n).expect("n in support");
        f_values[i].clone()
    };
    let y1 = if kind == JointKind::MeanMatched {
        Measure::Custom(Arc::new(|z: &T, _n: &T, f: &T| z.clone() + f.clone() * (T::one() + z.clone() * z.clone())))
    } else {
        Measure::Additive
    };
    build_joint(
        &px,
        |x| lookup(&z1_tables, x),
        |x| lookup(&z2_tables, x),
        &pn,
        f,
        y1,
        Measure::Additive,
    )
    .expect("generated distributions are normalised")
}

/// Results for one random joint. Checks that do not apply to its family are
/// absent.
#[derive(Debug, Clone, Serialize)]
pub struct JointReport {
    pub index: usize,
    pub seed: u64,
    pub kind: JointKind,
    pub outcomes: usize,
    /// `lhs` is the largest gap between the two estimator forms.
    pub forms_agree: CheckReport,
    pub mse_inequality: Option<CheckReport>,
    pub conditional_variance: Option<CheckReport>,
    pub exact_recovery: Option<CheckReport>,
    pub independence: IndependenceCheck,
}

impl JointReport {
    pub fn satisfied(&self) -> bool {
        self.forms_agree.satisfied
            && [self.mse_inequality, self.conditional_variance, self.exact_recovery]
                .iter()
                .flatten()
                .all(|r| r.satisfied)
            && self.independence.noise_independent_of_x
            && self.independence.latents_independent_given_x
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub joints: Vec<JointReport>,
    pub satisfied: usize,
    pub all_satisfied: bool,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &JointReport> {
        self.joints.iter().filter(|j| !j.satisfied())
    }
}

/// Checks one joint with the given estimator values.
pub fn check_joint<T: Field>(joint: &DiscreteJoint<T>, kind: JointKind, index: usize, seed: u64, corrupt: bool) -> JointReport {
    let forms = exact_tqs_forms(joint, corrupt);
    let gap = forms.max_gap().to_f64();
    let forms_agree = CheckReport::from_slack(gap, 0.0, -gap);
    // a corrupted run scores the corrupted form throughout
    let z_hat = if corrupt { &forms.difference_form } else { &forms.residual_form };
    let mse_inequality = mse_inequality_with(joint, z_hat).ok();
    let conditional_variance = conditional_variance_with(joint, z_hat).ok();
    let exact_recovery = exact_recovery_with(joint, z_hat).ok();
    JointReport {
        index,
        seed,
        kind,
        outcomes: joint.len(),
        forms_agree,
        mse_inequality,
        conditional_variance,
        exact_recovery,
        independence: check_independence(joint),
    }
}

/// Runs every check on `n_joints` random joints cycling through the
/// families. Joint `i` uses a seed derived from `(seed, i)`.
pub fn run_suite<T: Field>(n_joints: usize, seed: u64, corrupt: bool) -> SuiteReport {
    run_suite_of::<T>(n_joints, seed, corrupt, &JointKind::ALL)
}

/// As [`run_suite`], restricted to the given families.
pub fn run_suite_of<T: Field>(n_joints: usize, seed: u64, corrupt: bool, kinds: &[JointKind]) -> SuiteReport {
    let joints: Vec<JointReport> = (0..n_joints)
        .into_par_iter()
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let s = stats::derive_seed(seed, &[i as u64]);
            let joint = random_joint::<T>(kind, s);
            check_joint(&joint, kind, i, s, corrupt)
        })
        .collect();
    let satisfied = joints.iter().filter(|j| j.satisfied()).count();
    SuiteReport {
        seed,
        all_satisfied: satisfied == joints.len(),
        satisfied,
        joints,
    }
}

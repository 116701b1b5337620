//! One-dimensional penalized cubic B-spline smoother.
//!
//! Uniform knots are extended past the data range so that the Greville
//! abscissae are equally spaced; the second-order difference penalty then
//! leaves exactly the straight lines unpenalized. The penalty weight is either
//! fixed or picked by generalized cross-validation over a log grid.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{RegressError, RegressorKind};
use crate::linalg::{dot, Cholesky};
use crate::scalar::Real;
use crate::stats;

const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Fixed(f64),
    /// Pick the candidate minimizing the GCV score.
    Gcv(Vec<f64>),
}

impl Penalty {
    /// 13 points, `1e-3 ..= 1e3`, half a decade apart.
    pub fn default_grid() -> Vec<f64> {
        (0..13).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineParams {
    /// Interior knots, equally spaced over the training range.
    pub interior_knots: usize,
    pub penalty: Penalty,
}

impl Default for SplineParams {
    fn default() -> Self {
        Self {
            interior_knots: 20,
            penalty: Penalty::Gcv(Penalty::default_grid()),
        }
    }
}

impl SplineParams {
    pub fn with_penalty(lambda: f64) -> Self {
        Self {
            penalty: Penalty::Fixed(lambda),
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<(), RegressError> {
        if self.interior_knots == 0 {
            return Err(RegressError::InvalidConfig("spline_gam needs at least one interior knot".into()));
        }
        let grid: &[f64] = match &self.penalty {
            Penalty::Fixed(l) => std::slice::from_ref(l),
            Penalty::Gcv(g) => g,
        };
        if grid.is_empty() {
            return Err(RegressError::InvalidConfig("spline_gam penalty grid is empty".into()));
        }
        if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(RegressError::InvalidConfig(format!(
                "spline_gam penalty must be positive, got {bad}"
            )));
        }
        Ok(())
    }
}

/// Fitted smoother.
#[derive(Debug, Clone)]
pub struct SplineModel<T> {
    knots: Vec<T>,
    coefs: Vec<T>,
    lo: T,
    hi: T,
    lambda: f64,
    edf: f64,
    // Value and slope at each end, for linear extension.
    lo_value: T,
    lo_slope: T,
    hi_value: T,
    hi_slope: T,
}

impl<T: Real> SplineModel<T> {
    /// Full knot vector (length = coefficients + 4).
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coefs
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    /// Training range `[lo, hi]`.
    pub fn range(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    /// Penalty weight actually used.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Effective degrees of freedom, `tr(H)`.
    pub fn edf(&self) -> f64 {
        self.edf
    }

    pub fn eval(&self, x: T) -> T {
        if x < self.lo {
            return self.lo_value + self.lo_slope * (x - self.lo);
        }
        if x > self.hi {
            return self.hi_value + self.hi_slope * (x - self.hi);
        }
        self.eval_inside(x)
    }

    fn eval_inside(&self, x: T) -> T {
        let span = find_span(&self.knots, self.coefs.len(), x);
        let basis = basis_funs(&self.knots, span, x, DEGREE);
        (0..=DEGREE)
            .map(|r| basis[r] * self.coefs[span - DEGREE + r])
            .sum()
    }

    fn slope_inside(&self, x: T) -> T {
        let span = find_span(&self.knots, self.coefs.len(), x);
        let lower = basis_funs(&self.knots, span, x, DEGREE - 1);
        let p = T::of_usize(DEGREE);
        // N_{j,p-1} for j = span-p+1 ..= span
        (0..DEGREE)
            .map(|r| {
                let j = span - DEGREE + 1 + r;
                let w = p / (self.knots[j + DEGREE] - self.knots[j]);
                lower[r] * w * (self.coefs[j] - self.coefs[j - 1])
            })
            .sum()
    }
}

/// Index `i` with `t_i <= x < t_{i+1}`, clamped to the valid spans.
fn find_span<T: Real>(knots: &[T], n_coefs: usize, x: T) -> usize {
    let last = n_coefs - 1;
    if x >= knots[last + 1] {
        return last;
    }
    if x <= knots[DEGREE] {
        return DEGREE;
    }
    // binary search in [DEGREE, last]
    let (mut low, mut high) = (DEGREE, last + 1);
    while high - low > 1 {
        let mid = (low + high) / 2;
        if x < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
    }
    low
}

/// Nonzero B-spline basis values of degree `p` at `x` in span `i`:
/// `N_{i-p,p}(x) ..= N_{i,p}(x)` (Cox-de Boor triangle).
fn basis_funs<T: Real>(knots: &[T], i: usize, x: T, p: usize) -> Vec<T> {
    let mut n = vec![T::zero(); p + 1];
    let mut left = vec![T::zero(); p + 1];
    let mut right = vec![T::zero(); p + 1];
    n[0] = T::one();
    for j in 1..=p {
        left[j] = x - knots[i + 1 - j];
        right[j] = knots[i + j] - x;
        let mut saved = T::zero();
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

struct Design<T> {
    // Per row: first nonzero column and the four basis values.
    rows: Vec<(usize, [T; DEGREE + 1])>,
    n_coefs: usize,
}

impl<T: Real> Design<T> {
    fn new(knots: &[T], n_coefs: usize, x: ArrayView1<'_, T>) -> Self {
        let rows = x
            .iter()
            .map(|&xi| {
                let span = find_span(knots, n_coefs, xi);
                let b = basis_funs(knots, span, xi, DEGREE);
                (span - DEGREE, [b[0], b[1], b[2], b[3]])
            })
            .collect();
        Self { rows, n_coefs }
    }

    fn gram(&self) -> Array2<T> {
        let mut g = Array2::zeros((self.n_coefs, self.n_coefs));
        for (first, b) in &self.rows {
            for r in 0..=DEGREE {
                for s in 0..=DEGREE {
                    g[[first + r, first + s]] = g[[first + r, first + s]] + b[r] * b[s];
                }
            }
        }
        g
    }

    fn t_mul(&self, y: ArrayView1<'_, T>) -> Array1<T> {
        let mut out = Array1::zeros(self.n_coefs);
        for ((first, b), &yi) in self.rows.iter().zip(y.iter()) {
            for r in 0..=DEGREE {
                out[first + r] = out[first + r] + b[r] * yi;
            }
        }
        out
    }

    fn mul(&self, coefs: &[T]) -> Array1<T> {
        self.rows
            .iter()
            .map(|(first, b)| dot(b, &coefs[*first..*first + DEGREE + 1]))
            .collect()
    }
}

/// `DᵀD` for the second-order difference operator.
fn difference_penalty<T: Real>(n: usize) -> Array2<T> {
    let mut p = Array2::zeros((n, n));
    let stencil = [T::one(), -T::of(2.0), T::one()];
    for k in 0..n.saturating_sub(2) {
        for a in 0..3 {
            for b in 0..3 {
                p[[k + a, k + b]] = p[[k + a, k + b]] + stencil[a] * stencil[b];
            }
        }
    }
    p
}

pub(crate) fn fit<T: Real>(
    params: &SplineParams,
    x: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
) -> Result<(SplineModel<T>, Array1<T>), RegressError> {
    let m = x.len();
    let lo = x.iter().copied().fold(T::infinity(), T::min);
    let hi = x.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return Err(RegressError::Singular {
            backend: RegressorKind::SplineGam,
            detail: "all feature values are equal".into(),
        });
    }
    let segments = params.interior_knots + 1;
    let n_coefs = segments + DEGREE;
    let h = (hi - lo) / T::of_usize(segments);
    let mut knots: Vec<T> = (0..n_coefs + DEGREE + 1)
        .map(|j| lo + h * (T::of_usize(j) - T::of_usize(DEGREE)))
        .collect();
    // Pin the range ends exactly.
    knots[DEGREE] = lo;
    knots[n_coefs] = hi;

    // Constants lie in the penalty null space, so fitting centered targets
    // and shifting the coefficients back is the same optimum.
    let y_mean = stats::mean(y);
    let yc = y.mapv(|v| v - y_mean);

    let design = Design::new(&knots, n_coefs, x);
    let btb = design.gram();
    let bty = design.t_mul(yc.view());
    let pen = difference_penalty::<T>(n_coefs);

    let candidates: Vec<f64> = match &params.penalty {
        Penalty::Fixed(l) => vec![*l],
        Penalty::Gcv(grid) => grid.clone(),
    };
    let select = candidates.len() > 1;
    let mut best: Option<(f64, f64, f64, Vec<T>)> = None; // (score, lambda, edf, coefs)
    let mut last_err = None;
    for &lambda in &candidates {
        let a = &btb + &(&pen * T::of(lambda));
        let chol = match Cholesky::factor(a.view()) {
            Ok(c) => c,
            Err(e) => {
                last_err = Some(format!("pivot {} at penalty {lambda}", e.pivot));
                continue;
            }
        };
        let beta = chol.solve(bty.view()).to_vec();
        let hat = chol.solve_matrix(btb.view());
        let edf = (0..n_coefs).map(|i| hat[[i, i]].as_f64()).sum::<f64>();
        let score = if select {
            let fitted = design.mul(&beta);
            let rss: f64 = fitted
                .iter()
                .zip(yc.iter())
                .map(|(f, t)| (*f - *t).as_f64().powi(2))
                .sum();
            let denom = m as f64 - edf;
            if denom <= 0.0 {
                f64::INFINITY
            } else {
                m as f64 * rss / (denom * denom)
            }
        } else {
            0.0
        };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, lambda, edf, beta));
        }
    }
    let (_, lambda, edf, mut coefs) = best.ok_or_else(|| RegressError::Singular {
        backend: RegressorKind::SplineGam,
        detail: last_err.unwrap_or_default(),
    })?;
    for c in coefs.iter_mut() {
        *c = *c + y_mean;
    }
    let fitted = design.mul(&coefs);

    let mut model = SplineModel {
        knots,
        coefs,
        lo,
        hi,
        lambda,
        edf,
        lo_value: T::zero(),
        lo_slope: T::zero(),
        hi_value: T::zero(),
        hi_slope: T::zero(),
    };
    model.lo_value = model.eval_inside(lo);
    model.lo_slope = model.slope_inside(lo);
    model.hi_value = model.eval_inside(hi);
    model.hi_slope = model.slope_inside(hi);
    Ok((model, fitted))
}

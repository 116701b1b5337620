//! Kernel ridge regression with a Gaussian (RBF) kernel.
//!
//! The intercept is the target mean and is not penalized; the remaining
//! coefficients solve `(K + λI) α = y - ȳ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{RegressError, RegressorKind};
use crate::linalg::{dot, Cholesky};
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median Euclidean distance between distinct training rows.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lambda: f64,
    pub bandwidth: Bandwidth,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            bandwidth: Bandwidth::Median,
        }
    }
}

impl KernelParams {
    pub(crate) fn validate(&self) -> Result<(), RegressError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(RegressError::InvalidConfig(format!(
                "kernel_ridge penalty must be positive, got {}",
                self.lambda
            )));
        }
        if let Bandwidth::Fixed(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(RegressError::InvalidConfig(format!(
                    "kernel bandwidth must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KernelModel<T> {
    support: Array2<T>,
    alpha: Array1<T>,
    intercept: T,
    bandwidth: T,
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| (u - v) * (u - v))
        .fold(T::zero(), |s, t| s + t)
}

/// Median of the pairwise distances between rows, ignoring exact duplicates.
pub fn median_distance<T: Real>(x: ArrayView2<'_, T>) -> Option<T> {
    let m = x.nrows();
    let x = x.as_standard_layout();
    let d = x.ncols();
    let flat = x.as_slice().expect("standard layout");
    let mut dists = Vec::with_capacity(m * (m.saturating_sub(1)) / 2);
    for i in 0..m {
        let a = &flat[i * d..(i + 1) * d];
        for j in (i + 1)..m {
            let s = sq_dist(a, &flat[j * d..(j + 1) * d]);
            if s > T::zero() {
                dists.push(s);
            }
        }
    }
    if dists.is_empty() {
        return None;
    }
    let mid = dists.len() / 2;
    let (_, v, _) = dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite"));
    Some(v.sqrt())
}

impl<T: Real> KernelModel<T> {
    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn intercept(&self) -> T {
        self.intercept
    }

    pub fn dual_coefficients(&self) -> ArrayView1<'_, T> {
        self.alpha.view()
    }

    pub fn predict(&self, features: ArrayView2<'_, T>) -> Array1<T> {
        let gamma = gamma(self.bandwidth);
        let features = features.as_standard_layout();
        let d = features.ncols();
        let q = features.as_slice().expect("standard layout");
        let s = self.support.as_slice().expect("standard layout");
        let alpha = self.alpha.as_slice().expect("contiguous");
        let mut k_row = vec![T::zero(); self.support.nrows()];
        (0..features.nrows())
            .map(|i| {
                let a = &q[i * d..(i + 1) * d];
                for (j, k) in k_row.iter_mut().enumerate() {
                    *k = (-gamma * sq_dist(a, &s[j * d..(j + 1) * d])).exp();
                }
                self.intercept + dot(&k_row, alpha)
            })
            .collect()
    }
}

fn gamma<T: Real>(bandwidth: T) -> T {
    T::one() / (T::of(2.0) * bandwidth * bandwidth)
}

pub(crate) fn fit<T: Real>(
    params: &KernelParams,
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
) -> Result<(KernelModel<T>, Array1<T>), RegressError> {
    let m = x.nrows();
    let bandwidth = match params.bandwidth {
        Bandwidth::Fixed(b) => T::of(b),
        Bandwidth::Median => median_distance(x).unwrap_or_else(T::one),
    };
    let g = gamma(bandwidth);
    let support = x.as_standard_layout().into_owned();
    let d = support.ncols();
    let flat = support.as_slice().expect("standard layout");
    let mut k = Array2::<T>::zeros((m, m));
    for i in 0..m {
        k[[i, i]] = T::one();
        for j in 0..i {
            let v = (-g * sq_dist(&flat[i * d..(i + 1) * d], &flat[j * d..(j + 1) * d])).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    let intercept = stats::mean(y);
    let centered = y.mapv(|v| v - intercept);
    let lambda = T::of(params.lambda);
    let mut system = k.clone();
    for i in 0..m {
        system[[i, i]] = system[[i, i]] + lambda;
    }
    let chol = Cholesky::factor(system.view()).map_err(|e| RegressError::Singular {
        backend: RegressorKind::KernelRidge,
        detail: format!("pivot {} with penalty {}", e.pivot, params.lambda),
    })?;
    let alpha = chol.solve(centered.view());
    let alpha_s = alpha.as_slice().expect("contiguous");
    let fitted: Array1<T> = (0..m)
        .map(|i| intercept + dot(k.row(i).as_slice().expect("standard layout"), alpha_s))
        .collect();
    Ok((
        KernelModel {
            support,
            alpha,
            intercept,
            bandwidth,
        },
        fitted,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{Backend, RegressorConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn cfg(lambda: f64, bandwidth: Bandwidth) -> RegressorConfig {
        RegressorConfig::from_backend(Backend::KernelRidge(KernelParams { lambda, bandwidth }))
    }

    /// 3x3 solve by Cramer's rule.
    fn cramer(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut mc = a;
            for r in 0..3 {
                mc[r][c] = b[r];
            }
            out[c] = det(mc) / d;
        }
        out
    }

    #[test]
    fn three_points_match_closed_form() {
        let x = [0.0, 0.7, 2.0];
        let y = [1.0, -0.5, 2.5];
        let (lambda, sigma) = (0.3, 0.9);
        let model = cfg(lambda, Bandwidth::Fixed(sigma))
            .fit(array![[x[0]], [x[1]], [x[2]]].view(), array![y[0], y[1], y[2]].view())
            .unwrap();

        let kern = |a: f64, b: f64| (-(a - b).powi(2) / (2.0 * sigma * sigma)).exp();
        let ybar = (y[0] + y[1] + y[2]) / 3.0;
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = kern(x[i], x[j]) + if i == j { lambda } else { 0.0 };
            }
        }
        let alpha = cramer(a, [y[0] - ybar, y[1] - ybar, y[2] - ybar]);
        for i in 0..3 {
            let expect = ybar + (0..3).map(|j| kern(x[i], x[j]) * alpha[j]).sum::<f64>();
            assert_abs_diff_eq!(model.fitted()[i], expect, epsilon = 1e-12);
        }
        let q = 1.3;
        let expect = ybar + (0..3).map(|j| kern(q, x[j]) * alpha[j]).sum::<f64>();
        assert_abs_diff_eq!(model.predict(array![[q]].view()).unwrap()[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn tiny_penalty_interpolates() {
        let x = array![[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [2.0, 2.0], [-1.0, 0.5]];
        let y = array![0.5, -1.0, 2.0, 0.0, 1.5];
        let model = cfg(1e-10, Bandwidth::Median).fit(x.view(), y.view()).unwrap();
        for (f, t) in model.fitted().iter().zip(y.iter()) {
            assert_abs_diff_eq!(f, t, epsilon = 1e-4);
        }
    }

    #[test]
    fn median_heuristic() {
        // distances: 1, 2, 3 -> median 2
        let x = array![[0.0], [1.0], [3.0]];
        assert_eq!(median_distance(x.view()), Some(2.0));
        assert_eq!(median_distance(array![[1.0], [1.0]].view()), None);
        let model = cfg(1.0, Bandwidth::Median).fit(x.view(), array![0.0, 1.0, 0.0].view()).unwrap();
        assert_eq!(model.as_kernel().unwrap().bandwidth(), 2.0);
    }

    #[test]
    fn invalid_params() {
        assert!(KernelParams { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(KernelParams { lambda: 1.0, bandwidth: Bandwidth::Fixed(0.0) }.validate().is_err());
    }
}

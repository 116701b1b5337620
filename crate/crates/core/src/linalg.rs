//! Small dense linear algebra on row-major `ndarray` matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::scalar::Real;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

/// Raised when the factorized matrix is not numerically positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self, NotPositiveDefinite> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        // Largest diagonal entry sets the scale for the definiteness check.
        let scale = (0..n).map(|i| a[[i, i]].abs()).fold(T::zero(), T::max);
        let floor = scale * T::epsilon() * T::of_usize(n.max(1));
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            let (head, tail) = l.split_at_mut(i * n);
            let row_i = &mut tail[..n];
            for j in 0..i {
                let row_j = &head[j * n..j * n + n];
                let s = a[[i, j]] - dot(&row_i[..j], &row_j[..j]);
                row_i[j] = s / row_j[j];
            }
            let s = a[[i, i]] - dot(&row_i[..i], &row_i[..i]);
            if !(s > floor) {
                return Err(NotPositiveDefinite { pivot: i });
            }
            row_i[i] = s.sqrt();
        }
        let lower = Array2::from_shape_vec((n, n), l).expect("shape matches");
        Ok(Cholesky { lower })
    }

    pub fn lower(&self) -> ArrayView2<'_, T> {
        self.lower.view()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.lower.nrows();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.to_owned();
        for i in 0..n {
            let row = l.row(i);
            let row = row.as_slice().expect("standard layout");
            let s = dot(&row[..i], &y.as_slice().expect("contiguous")[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// `Aᵀ A` for a tall matrix.
pub fn gram<T: Real>(a: ArrayView2<'_, T>) -> Array2<T> {
    let p = a.ncols();
    let mut g = Array2::zeros((p, p));
    for row in a.rows() {
        for i in 0..p {
            let ri = row[i];
            if ri == T::zero() {
                continue;
            }
            for j in i..p {
                g[[i, j]] = g[[i, j]] + ri * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let chol = Cholesky::factor(a.view()).unwrap();
        let x = chol.solve(b.view());
        let back = a.dot(&x);
        for i in 0..3 {
            assert_abs_diff_eq!(back[i], b[i], epsilon = 1e-12);
        }
        let l = chol.lower();
        let llt = l.dot(&l.t());
        for (u, v) in llt.iter().zip(a.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(
            Cholesky::factor(a.view()).unwrap_err(),
            NotPositiveDefinite { pivot: 1 }
        );
    }

    #[test]
    fn gram_matches_ndarray() {
        let a = array![[1.0f32, 2.0], [0.0, -1.0], [3.0, 0.5]];
        assert_eq!(gram(a.view()), a.t().dot(&a));
    }
}

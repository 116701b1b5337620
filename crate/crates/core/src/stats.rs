//! Descriptive statistics and seed derivation shared across modules.

use ndarray::ArrayView1;

use crate::scalar::Real;

pub fn mean<T: Real>(v: ArrayView1<'_, T>) -> T {
    assert!(!v.is_empty(), "mean of an empty vector");
    v.iter().copied().sum::<T>() / T::of_usize(v.len())
}

/// Population variance (divides by `n`).
pub fn variance<T: Real>(v: ArrayView1<'_, T>) -> T {
    let m = mean(v);
    v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::of_usize(v.len())
}

pub fn std_dev<T: Real>(v: ArrayView1<'_, T>) -> T {
    variance(v).sqrt()
}

pub fn mse<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    assert_eq!(a.len(), b.len());
    let n = T::of_usize(a.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Option<T> {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            out[k] = rank;
        }
        start = end;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra = ndarray::Array1::from(ranks(a));
    let rb = ndarray::Array1::from(ranks(b));
    pearson(ra.view(), rb.view())
}

/// Mean and standard error of the mean. The standard error is `None` for a
/// single sample.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (m, None);
    }
    let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, Some((var / n).sqrt()))
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a child stream identified by a path of integers.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Seed for a child stream identified by a label (FNV-1a over the bytes).
pub fn derive_seed_from_label(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(master, &[h])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn moments() {
        let v = array![1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(v.view()), 2.5);
        assert_eq!(variance(v.view()), 1.25);
        assert_eq!(mse(v.view(), array![1.0, 2.0, 3.0, 6.0].view()), 1.0);
    }

    #[test]
    fn pearson_extremes() {
        let a = array![1.0, 2.0, 3.0];
        assert_abs_diff_eq!(pearson(a.view(), (&a * 2.0).view()).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(a.view(), (-&a).view()).unwrap(), -1.0, epsilon = 1e-15);
        assert!(pearson(a.view(), array![5.0, 5.0, 5.0].view()).is_none());
    }

    #[test]
    fn spearman_with_one_swap() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0, 5.0];
        assert_abs_diff_eq!(spearman(&x, &y).unwrap(), 0.9, epsilon = 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn stderr_of_single_sample_is_absent() {
        assert_eq!(mean_and_stderr(&[3.0]), (3.0, None));
        let (m, se) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_abs_diff_eq!(se.unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn seeds_differ_by_path() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(9, &[3]), derive_seed(9, &[3]));
        assert_ne!(derive_seed_from_label(0, "a"), derive_seed_from_label(0, "b"));
    }
}

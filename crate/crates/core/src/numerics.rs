//! Dense row-major matrices and the numerically stable scalar functions
//! shared by the model, the scores and the losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The one generator type used for all randomness. Callers pass it
/// explicitly; nothing in the crate draws from a global source.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw a child seed from `rng`. Used to give each sample of a batch its own
/// stream so that per-sample work can run in any order.
pub fn child_seed(rng: &mut SeededRng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}

/// Seed for an independent stream `tag` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data. Rejects wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data length {} != {rows} x {cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!(
                "non-finite matrix entry at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Stack equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::usage(format!(
                "row {i} has length {}, expected {cols}",
                r.len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on 0
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// Select rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self * x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.row_iter().map(|r| dot(r, x)).collect()
    }

    /// `self^T * v` for `v` of length `rows`.
    pub fn matvec_transposed(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in self.row_iter().zip(v) {
            for (o, &w) in out.iter_mut().zip(r) {
                *o += w * vr;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exponential linear unit with unit scale.
pub fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_derivative_scalar(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn elu(x: &Matrix) -> Matrix {
    x.map(elu_scalar)
}

/// Elementwise derivative of [`elu`] evaluated at the pre-activation `x`.
pub fn elu_derivative(x: &Matrix) -> Matrix {
    x.map(elu_derivative_scalar)
}

/// Softmax with max subtraction.
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Negative Shannon entropy `sum p ln p` with `0 ln 0 = 0`.
pub fn negative_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distance between equally long vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(squared_distance(a, b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn elu_values() {
        assert_eq!(elu_scalar(0.0), 0.0);
        assert_eq!(elu_scalar(2.0), 2.0);
        // exp(-1) - 1
        assert!((elu_scalar(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        let m = Matrix::new(1, 3, vec![-50.0, 0.0, 3.0]).unwrap();
        let out = elu(&m);
        assert!(out.as_slice().iter().all(|&v| v >= -1.0));
    }

    #[test]
    fn elu_derivative_matches_central_differences() {
        let mut rng = seeded_rng(11);
        let h = 1e-5;
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-5.0..5.0);
            // skip the kink at 0 where the one-sided slopes differ
            if x.abs() < 2.0 * h {
                continue;
            }
            let fd = (elu_scalar(x + h) - elu_scalar(x - h)) / (2.0 * h);
            let an = elu_derivative_scalar(x);
            assert!((fd - an).abs() / an.abs().max(1e-12) < 1e-6, "x={x}");
        }
    }

    #[test]
    fn softmax_examples() {
        let p = stable_softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for c in [-7.0, 0.0, 123.4] {
            let p = stable_softmax(&[c, c + 2f64.ln()]);
            assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        }
        let p = stable_softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn distance_examples() {
        let v = [1.5, -2.0, 7.0];
        assert_eq!(euclidean_distance(&v, &v).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_distance(&[0.0], &[0.0, 1.0]).is_err());

        let mut rng = seeded_rng(3);
        let a: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut acc = 0.0;
        for i in 0..10 {
            let d = a[i] - b[i];
            acc += d * d;
        }
        assert!((euclidean_distance(&a, &b).unwrap() - acc.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn entropy_convention() {
        assert_eq!(negative_entropy(&[1.0, 0.0]), 0.0);
        assert!((negative_entropy(&[0.5, 0.5]) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn matrix_validation() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(m.matvec_transposed(&[1.0, 1.0]), vec![4.0, 6.0]);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            z in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in -1000.0f64..1000.0,
        ) {
            let p = stable_softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = stable_softmax(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(*a > 0.0 && *a <= 1.0);
            }
        }

        #[test]
        fn distance_is_a_metric(
            pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 3),
        ) {
            let (a, b, c) = (&pts[0], &pts[1], &pts[2]);
            let ab = euclidean_distance(a, b).unwrap();
            let ba = euclidean_distance(b, a).unwrap();
            let bc = euclidean_distance(b, c).unwrap();
            let ac = euclidean_distance(a, c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_ZCA_REGULARIZER: f64 = 1e-5;
const GCN_STD_FLOOR: f64 = 1e-8;

/// Per-row standardization: each row gets mean 0 and (population) std 1.
pub fn global_contrast_normalize(features: &Matrix) -> Result<Matrix> {
    let d = features.cols();
    if d < 2 {
        return Err(Error::usage(format!(
            "contrast normalization needs at least 2 features, got {d}"
        )));
    }
    let mut data = Vec::with_capacity(features.rows() * d);
    for row in features.row_iter() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let std = var.sqrt().max(GCN_STD_FLOOR);
        data.extend(row.iter().map(|v| (v - mean) / std));
    }
    Matrix::new(features.rows(), d, data)
}

/// Whitening fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub mean: Vec<f64>,
    /// Symmetric `d x d`.
    pub whitening: Matrix,
    pub regularizer: f64,
}

/// `W = U diag(1/sqrt(lambda + reg)) U^T` from the covariance `U diag(lambda) U^T`.
pub fn fit_zca(train: &Matrix, regularizer: f64) -> Result<ZcaTransform> {
    let (n, d) = (train.rows(), train.cols());
    if n == 0 {
        return Err(Error::usage("cannot fit ZCA on an empty set"));
    }
    if !(regularizer >= 0.0 && regularizer.is_finite()) {
        return Err(Error::usage(format!(
            "ZCA regularizer must be >= 0, got {regularizer}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in train.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in train.row_iter() {
        let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let denom = (lambda.max(0.0) + regularizer).sqrt();
        if denom == 0.0 {
            return Err(Error::usage(
                "rank-deficient covariance with zero regularizer; use a positive regularizer",
            ));
        }
        scaled.column_mut(k).scale_mut(1.0 / denom);
    }
    let w = &scaled * eig.eigenvectors.transpose();
    let mut data = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            data.push(0.5 * (w[(i, j)] + w[(j, i)]));
        }
    }
    let whitening =
        Matrix::new(d, d, data).map_err(|_| Error::usage("ZCA produced non-finite values"))?;
    Ok(ZcaTransform {
        mean,
        whitening,
        regularizer,
    })
}

/// `(x - mean) W` for each row; reads nothing but `t` and `features`.
pub fn apply_zca(t: &ZcaTransform, features: &Matrix) -> Result<Matrix> {
    if features.cols() != t.mean.len() {
        return Err(Error::usage(format!(
            "ZCA fitted on {} features, got {}",
            t.mean.len(),
            features.cols()
        )));
    }
    let mut data = Vec::with_capacity(features.rows() * features.cols());
    for row in features.row_iter() {
        let c: Vec<f64> = row.iter().zip(&t.mean).map(|(v, m)| v - m).collect();
        // W symmetric, so (x - mean) W = W (x - mean)
        data.extend(t.whitening.matvec(&c));
    }
    Matrix::new(features.rows(), features.cols(), data)
}

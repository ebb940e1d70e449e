//! Synthetic Gaussian-cluster datasets.
//!
//! All generators are pure functions of their arguments. Class geometry of
//! [`make_overlap_with`] and [`make_novelty_pair`] does not depend on the seed,
//! so calling twice with different seeds yields independent train and test
//! samples from the same distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Matrix, SeededRng};

/// Isotropic Gaussian clusters.
///
/// Without explicit `centers`, centers are drawn uniformly from `[-10, 10]^dim`
/// using `seed`.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    centers: Option<&Matrix>,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 {
        return Err(Error::usage(
            "make_blobs needs at least one class and one dimension",
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::usage(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = seeded_rng(seed);
    let owned;
    let centers = match centers {
        Some(c) => {
            if c.rows() != classes || c.cols() != dim {
                return Err(Error::usage(format!(
                    "centers are {}x{}, expected {classes}x{dim}",
                    c.rows(),
                    c.cols()
                )));
            }
            c
        }
        None => {
            let data = (0..classes * dim)
                .map(|_| rng.random_range(-10.0..10.0))
                .collect();
            owned = Matrix::new(classes, dim, data)?;
            &owned
        }
    };
    sample_clusters(
        centers,
        per_class,
        spread,
        classes,
        Split::Train,
        0,
        &mut rng,
    )
}

/// Parameters for [`make_overlap_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapParams {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// 0 = well separated, 1 = all classes share one center.
    pub overlap: f64,
    /// Pairwise center distance at `overlap = 0`, in units of the noise std.
    pub separation: f64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        OverlapParams {
            classes: 5,
            per_class: 200,
            dim: 32,
            overlap: 0.5,
            separation: 10.0,
        }
    }
}

/// Unit-variance Gaussian classes whose centers are scaled coordinate axes;
/// every pair of centers is `separation * (1 - overlap)` apart.
pub fn make_overlap(classes: usize, per_class: usize, overlap: f64, seed: u64) -> Result<Dataset> {
    make_overlap_with(
        &OverlapParams {
            classes,
            per_class,
            overlap,
            ..OverlapParams::default()
        },
        seed,
    )
}

pub fn make_overlap_with(p: &OverlapParams, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p.overlap) {
        return Err(Error::usage(format!(
            "overlap must be in [0,1], got {}",
            p.overlap
        )));
    }
    if p.classes == 0 || p.classes > p.dim {
        return Err(Error::usage(format!(
            "need 1 <= classes <= dim, got {} classes in {} dims",
            p.classes, p.dim
        )));
    }
    let radius = p.separation * (1.0 - p.overlap) / std::f64::consts::SQRT_2;
    let centers = axis_centers(0, p.classes, p.dim, radius);
    sample_clusters(
        &centers,
        p.per_class,
        1.0,
        p.classes,
        Split::Train,
        0,
        &mut seeded_rng(seed),
    )
}

/// Parameters for [`make_novelty_pair`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyParams {
    pub known_classes: usize,
    pub novel_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Pairwise distance between known centers.
    pub separation: f64,
    /// Novel centers sit on held-out axes at `novel_scale` times the known radius.
    pub novel_scale: f64,
}

impl Default for NoveltyParams {
    fn default() -> Self {
        NoveltyParams {
            known_classes: 5,
            novel_classes: 3,
            per_class: 200,
            dim: 32,
            separation: 10.0,
            novel_scale: 1.0,
        }
    }
}

/// Known classes on axes `0..C`, novel clusters on held-out axes `C..C+K`.
///
/// Returns `(known, novel)`; the known set is tagged `Test` and has `C`
/// classes, the novel set is tagged `Novel` with labels `C..C+K`.
pub fn make_novelty_pair(p: &NoveltyParams, seed: u64) -> Result<(Dataset, Dataset)> {
    let total = p.known_classes + p.novel_classes;
    if p.known_classes == 0 || p.novel_classes == 0 || total > p.dim {
        return Err(Error::usage(format!(
            "need known, novel >= 1 and known + novel <= dim, got {} + {} in {} dims",
            p.known_classes, p.novel_classes, p.dim
        )));
    }
    let radius = p.separation / std::f64::consts::SQRT_2;
    let known_centers = axis_centers(0, p.known_classes, p.dim, radius);
    let novel_centers = axis_centers(
        p.known_classes,
        p.novel_classes,
        p.dim,
        radius * p.novel_scale,
    );
    let mut rng = seeded_rng(seed);
    let known = sample_clusters(
        &known_centers,
        p.per_class,
        1.0,
        p.known_classes,
        Split::Test,
        0,
        &mut rng,
    )?;
    let novel = sample_clusters(
        &novel_centers,
        p.per_class,
        1.0,
        total,
        Split::Novel,
        p.known_classes,
        &mut rng,
    )?;
    Ok((known, novel))
}

fn axis_centers(first_axis: usize, count: usize, dim: usize, radius: f64) -> Matrix {
    let mut m = vec![0.0; count * dim];
    for c in 0..count {
        m[c * dim + first_axis + c] = radius;
    }
    Matrix::new(count, dim, m).expect("finite")
}

fn sample_clusters(
    centers: &Matrix,
    per_class: usize,
    spread: f64,
    num_classes: usize,
    split: Split,
    label_offset: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let dim = centers.cols();
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::with_capacity(centers.rows() * per_class);
    for (c, center) in centers.row_iter().enumerate() {
        for _ in 0..per_class {
            let x = center
                .iter()
                .map(|&mu| mu + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push((x, c + label_offset));
        }
    }
    samples.shuffle(rng);
    let mut data = Vec::with_capacity(samples.len() * dim);
    let mut labels = Vec::with_capacity(samples.len());
    for (x, y) in samples {
        data.extend(x);
        labels.push(y);
    }
    Dataset::new(
        Matrix::new(labels.len(), dim, data)?,
        labels,
        num_classes,
        split,
    )
}

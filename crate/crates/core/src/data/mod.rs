//! Datasets, preprocessing, and synthetic generators.

mod csv;
mod preprocess;
mod synthetic;

use std::fmt;
use std::str::FromStr;

pub use self::csv::{load_csv, save_csv, write_csv, CsvSchema};
pub use preprocess::{
    apply_zca, fit_zca, global_contrast_normalize, ZcaTransform, DEFAULT_ZCA_REGULARIZER,
};
pub use synthetic::{
    make_blobs, make_novelty_pair, make_overlap, make_overlap_with, NoveltyParams, OverlapParams,
};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Novel,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "novel" => Ok(Split::Novel),
            other => Err(Error::usage(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Novel => "novel",
        })
    }
}

/// Feature matrix (one row per sample) with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    /// Labels must lie in `[0, num_classes)`; a training split must contain
    /// every class.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::usage(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::usage(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        if split == Split::Train && !labels.is_empty() {
            let mut seen = vec![false; num_classes];
            labels.iter().for_each(|&y| seen[y] = true);
            if let Some(c) = seen.iter().position(|s| !s) {
                return Err(Error::usage(format!(
                    "class {c} missing from training split"
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Same samples under a different split tag.
    pub fn with_split(self, split: Split) -> Result<Self> {
        Dataset::new(self.features, self.labels, self.num_classes, split)
    }

    /// Replace the features (same row count), e.g. after preprocessing.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Dataset::new(features, self.labels.clone(), self.num_classes, self.split)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts
    }
}

/// Fitted preprocessing: per-row contrast normalization, then ZCA with
/// statistics from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub gcn: bool,
    pub zca: Option<ZcaTransform>,
}

impl Preprocessor {
    pub fn fit(train: &Dataset, gcn: bool, zca_regularizer: Option<f64>) -> Result<Self> {
        let feats = if gcn {
            global_contrast_normalize(train.features())?
        } else {
            train.features().clone()
        };
        let zca = zca_regularizer.map(|r| fit_zca(&feats, r)).transpose()?;
        Ok(Preprocessor { gcn, zca })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let mut feats = if self.gcn {
            global_contrast_normalize(data.features())?
        } else {
            data.features().clone()
        };
        if let Some(z) = &self.zca {
            feats = apply_zca(z, &feats)?;
        }
        data.with_features(feats)
    }
}

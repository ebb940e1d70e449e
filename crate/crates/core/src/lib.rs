//! Distance-based confidence scores for neural network classifiers.
//!
//! A trained classifier's penultimate layer defines an embedding. The
//! confidence in a prediction is estimated from the labels of the query's
//! nearest training points in that embedding, weighted by `exp(-distance)`.
//! The crate also contains the two training regimes that shape embeddings
//! for this purpose (a pairwise hinge loss and fast-gradient-sign
//! adversarial training), the usual softmax baselines, MC-dropout, Hart
//! condensation of the index, ensemble combiners, and the evaluation
//! protocols (error prediction, ensemble accuracy, novelty detection).
//!
//! Batch loops run on rayon when the `parallel` feature is enabled (the
//! default). Results are identical with and without it: work is split per
//! sample and reduced in index order.

mod codec;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod index;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
pub use numerics::{Matrix, SeededRng};

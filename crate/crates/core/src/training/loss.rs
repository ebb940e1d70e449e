//! Classification and pairwise embedding losses, and batch backpropagation.

use super::pairs::PairBatch;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ForwardMode, ForwardResult, Gradients, MlpModel};
use crate::numerics::{log_sum_exp, seeded_rng, squared_distance, stable_softmax, Matrix};

/// Mean cross-entropy of `logits` (one row per sample) against `labels`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::usage(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::usage("empty batch"));
    }
    let mut total = 0.0;
    for (row, &y) in logits.row_iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::usage(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        total += log_sum_exp(row) - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Mean over pairs of `||e_i - e_j||` (same label) or `max(0, m - ||e_i - e_j||)`.
pub fn pairwise_distance_loss(
    embeddings: &Matrix,
    labels: &[usize],
    pairs: &PairBatch,
    margin: f64,
) -> Result<f64> {
    Ok(pairwise_distance_loss_and_grad(embeddings, labels, pairs, margin)?.0)
}

/// Loss and its gradient with respect to each embedding row.
///
/// At zero distance the gradient is taken as 0 (subgradient).
pub fn pairwise_distance_loss_and_grad(
    embeddings: &Matrix,
    labels: &[usize],
    pairs: &PairBatch,
    margin: f64,
) -> Result<(f64, Matrix)> {
    if pairs.is_empty() {
        return Err(Error::usage(
            "pairwise distance loss needs at least one pair",
        ));
    }
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::usage(format!(
            "{n} embeddings for {} labels",
            labels.len()
        )));
    }
    let mut grad = Matrix::zeros(n, embeddings.cols());
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for &(a, b) in &pairs.pairs {
        if a >= n || b >= n {
            return Err(Error::usage(format!(
                "pair ({a}, {b}) outside batch of {n}"
            )));
        }
        let (ea, eb) = (embeddings.row(a), embeddings.row(b));
        let d = squared_distance(ea, eb).sqrt();
        // dL/d e_a = coef * (e_a - e_b) / d
        let coef = if labels[a] == labels[b] {
            total += d;
            1.0
        } else if d < margin {
            total += margin - d;
            -1.0
        } else {
            0.0
        };
        if coef != 0.0 && d > 0.0 {
            let f = coef * scale / d;
            let diff: Vec<f64> = ea.iter().zip(eb).map(|(x, y)| f * (x - y)).collect();
            for (g, v) in grad.row_mut(a).iter_mut().zip(&diff) {
                *g += v;
            }
            for (g, v) in grad.row_mut(b).iter_mut().zip(&diff) {
                *g -= v;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Which objective [`backward`] differentiates.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    CrossEntropy,
    /// `L_class + alpha * L_dist`
    Distance {
        alpha: f64,
        margin: f64,
        pairs: &'a PairBatch,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub class: f64,
    pub dist: f64,
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: LossBreakdown,
    pub grads: Gradients,
    /// Logits of the forward pass the gradients were taken at.
    pub logits: Matrix,
}

const GRAD_CHUNK: usize = 16;

/// Gradient of the batch loss with respect to every parameter.
///
/// With `dropout_seeds`, sample `i` uses a dropout mask drawn from its own
/// seed; otherwise the forward pass is deterministic. Per-sample gradients
/// are summed in a fixed order, so the result does not depend on `exec`.
///
/// Non-finite logits are reported as [`Error::NonFiniteLoss`] with zero
/// epoch/batch; the training loop fills in its position.
pub fn backward(
    model: &MlpModel,
    xs: &Matrix,
    labels: &[usize],
    spec: LossSpec<'_>,
    dropout_seeds: Option<&[u64]>,
    exec: Execution,
) -> Result<BatchGradients> {
    let n = xs.rows();
    if n == 0 || labels.len() != n {
        return Err(Error::usage(format!(
            "batch of {n} rows with {} labels",
            labels.len()
        )));
    }
    if xs.cols() != model.input_dim() {
        return Err(Error::usage(format!(
            "batch has dimension {}, model expects {}",
            xs.cols(),
            model.input_dim()
        )));
    }
    if let Some(s) = dropout_seeds {
        if s.len() != n {
            return Err(Error::usage("one dropout seed per sample required"));
        }
    }
    let classes = model.num_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::usage(format!(
            "label {y} out of range for {classes} classes"
        )));
    }

    let forwards: Vec<ForwardResult> = exec.map(n, |i| match dropout_seeds {
        Some(seeds) => {
            let mut rng = seeded_rng(seeds[i]);
            model.forward_unchecked(xs.row(i), ForwardMode::Dropout(&mut rng))
        }
        None => model.forward_unchecked(xs.row(i), ForwardMode::Deterministic),
    });

    if let Some(bad) = forwards
        .iter()
        .flat_map(|f| &f.logits)
        .find(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            loss: *bad,
        });
    }
    let logits = Matrix::from_rows(
        &forwards
            .iter()
            .map(|f| f.logits.clone())
            .collect::<Vec<_>>(),
    )?;
    let class = cross_entropy_loss(&logits, labels)?;

    let inv_n = 1.0 / n as f64;
    let grad_logits: Vec<Vec<f64>> = forwards
        .iter()
        .zip(labels)
        .map(|(f, &y)| {
            let mut g = stable_softmax(&f.logits);
            g[y] -= 1.0;
            g.iter_mut().for_each(|v| *v *= inv_n);
            g
        })
        .collect();

    let (dist, alpha, emb_grad) = match spec {
        LossSpec::CrossEntropy => (0.0, 0.0, None),
        LossSpec::Distance {
            alpha,
            margin,
            pairs,
        } => {
            let emb = Matrix::from_rows(
                &forwards
                    .iter()
                    .map(|f| f.embedding.clone())
                    .collect::<Vec<_>>(),
            )?;
            let (d, g) = pairwise_distance_loss_and_grad(&emb, labels, pairs, margin)?;
            (
                d,
                alpha,
                if alpha != 0.0 {
                    Some(g.map(|v| alpha * v))
                } else {
                    None
                },
            )
        }
    };

    // Fixed chunk boundaries keep the summation order independent of `exec`.
    let partial: Vec<Gradients> = exec.map(n.div_ceil(GRAD_CHUNK), |c| {
        let mut g = Gradients::zeros_like(model);
        for i in c * GRAD_CHUNK..n.min((c + 1) * GRAD_CHUNK) {
            let ge = emb_grad.as_ref().map(|e| e.row(i));
            model.backprop_into(&forwards[i].cache, &grad_logits[i], ge, &mut g);
        }
        g
    });
    let mut partial = partial.into_iter();
    let mut grads = partial.next().expect("n > 0");
    for g in partial {
        grads.add_scaled(&g, 1.0);
    }

    Ok(BatchGradients {
        loss: LossBreakdown {
            total: class + alpha * dist,
            class,
            dist,
        },
        grads,
        logits,
    })
}

/// Loss value only, for the same objective as [`backward`].
pub fn batch_loss(
    model: &MlpModel,
    xs: &Matrix,
    labels: &[usize],
    spec: LossSpec<'_>,
    dropout_seeds: Option<&[u64]>,
) -> Result<LossBreakdown> {
    Ok(backward(
        model,
        xs,
        labels,
        spec,
        dropout_seeds,
        Execution::Sequential,
    )?
    .loss)
}

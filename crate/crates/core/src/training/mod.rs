//! Training regimes: plain cross-entropy, cross-entropy plus the pairwise
//! embedding loss, and fast-gradient-sign adversarial training.

mod adversarial;
mod loss;
mod mc_dropout;
mod pairs;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;

pub use adversarial::{fgsm_perturb, input_gradient};
pub use loss::{
    backward, batch_loss, cross_entropy_loss, pairwise_distance_loss,
    pairwise_distance_loss_and_grad, BatchGradients, LossBreakdown, LossSpec,
};
pub use mc_dropout::{mc_dropout_predict, mc_dropout_predict_batch};
pub use pairs::{sample_pairs, PairBatch};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Gradients, MlpModel};
use crate::numerics::{argmax, child_seed, derive_seed, seeded_rng, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Plain,
    Distance,
    Adversarial,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "regular" => Ok(Regime::Plain),
            "distance" => Ok(Regime::Distance),
            "adversarial" | "at" => Ok(Regime::Adversarial),
            s if s.contains("distance") && (s.contains("adversarial") || s.contains("at")) => {
                Err(Error::config(
                    "train.regime",
                    "combining the distance loss with adversarial training is not supported",
                ))
            }
            other => Err(Error::config(
                "train.regime",
                format!("unknown regime `{other}` (plain|distance|adversarial)"),
            )),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Plain => "plain",
            Regime::Distance => "distance",
            Regime::Adversarial => "adversarial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Weight of the pairwise loss.
    pub alpha: f64,
    /// Hinge margin for different-class pairs.
    pub margin: f64,
    /// FGSM step size.
    pub epsilon: f64,
    /// Minimum share of same-class pairs per minibatch.
    pub same_class_pair_fraction: f64,
    /// Weight of the clean loss in the adversarial regime; the adversarial
    /// loss gets `1 - clean_weight`.
    pub clean_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `(first_step, rate)` entries, ascending; a rate holds until the next entry.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Plain,
            alpha: 0.2,
            margin: 25.0,
            epsilon: 0.1,
            same_class_pair_fraction: 0.2,
            clean_weight: 0.5,
            batch_size: 100,
            epochs: 30,
            lr_schedule: vec![(0, 0.01)],
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::config(k, m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("train.alpha", format!("must be >= 0, got {}", self.alpha));
        }
        if self.regime == Regime::Distance && self.alpha <= 0.0 {
            return bad("train.alpha", "regime=distance requires alpha > 0".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("train.margin", format!("must be > 0, got {}", self.margin));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(
                "train.epsilon",
                format!("must be >= 0, got {}", self.epsilon),
            );
        }
        if !(0.0..=1.0).contains(&self.same_class_pair_fraction) {
            return bad(
                "train.same_class_pair_fraction",
                format!("must be in [0,1], got {}", self.same_class_pair_fraction),
            );
        }
        if !(0.0..=1.0).contains(&self.clean_weight) {
            return bad(
                "train.clean_weight",
                format!("must be in [0,1], got {}", self.clean_weight),
            );
        }
        if self.batch_size == 0 || (self.regime == Regime::Distance && self.batch_size < 2) {
            return bad(
                "train.batch_size",
                format!("too small: {}", self.batch_size),
            );
        }
        if self.epochs == 0 {
            return bad("train.epochs", "must be >= 1".into());
        }
        if self.lr_schedule.first().map(|e| e.0) != Some(0) {
            return bad("train.lr_schedule", "must start at step 0".into());
        }
        for w in self.lr_schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(
                    "train.lr_schedule",
                    "steps must be strictly ascending".into(),
                );
            }
        }
        if let Some(&(_, r)) = self
            .lr_schedule
            .iter()
            .find(|(_, r)| !(*r > 0.0 && r.is_finite()))
        {
            return bad("train.lr_schedule", format!("rate {r} must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(
                "train.momentum",
                format!("must be in [0,1), got {}", self.momentum),
            );
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map_or(self.lr_schedule[0].1, |&(_, r)| r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total_loss: f64,
    pub class_loss: f64,
    pub dist_loss: f64,
    /// Accuracy of the clean training forward passes during the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: Vec<EpochStats>,
}

/// SGD with momentum: `v = mu v + g; theta -= lr v`.
struct Momentum {
    velocity: Vec<f64>,
    mu: f64,
}

impl Momentum {
    fn new(n: usize, mu: f64) -> Self {
        Momentum {
            velocity: vec![0.0; n],
            mu,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        let (v, mu) = (&mut self.velocity, self.mu);
        model.for_each_parameter(grads, |i, p, g| {
            v[i] = mu * v[i] + g;
            *p -= lr * v[i];
        });
    }
}

// Independent streams so that changing one consumer (pairs, dropout masks)
// does not shift the others.
const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_DROPOUT: u64 = 0x4452_4f50;
const STREAM_PAIRS: u64 = 0x5041_4952;

fn stream(seed: u64, tag: u64) -> SeededRng {
    seeded_rng(derive_seed(seed, tag))
}

/// Train `model` on `dataset` under `config`. Deterministic given the seed.
pub fn train(
    model: MlpModel,
    dataset: &Dataset,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    train_unvalidated(model, dataset, config, exec)
}

pub(crate) fn train_unvalidated(
    mut model: MlpModel,
    dataset: &Dataset,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::usage("training set is empty"));
    }
    if dataset.dim() != model.input_dim() {
        return Err(Error::usage(format!(
            "dataset dimension {} != model input {}",
            dataset.dim(),
            model.input_dim()
        )));
    }
    if dataset.num_classes() > model.num_classes() {
        return Err(Error::usage(format!(
            "dataset has {} classes, model outputs {}",
            dataset.num_classes(),
            model.num_classes()
        )));
    }

    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut pair_rng = stream(config.seed, STREAM_PAIRS);
    let mut opt = Momentum::new(model.num_parameters(), config.momentum);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let use_dropout = model.has_dropout();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_total, mut sum_class, mut sum_dist) = (0.0, 0.0, 0.0);
        let (mut batches, mut correct) = (0usize, 0usize);

        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let xs = dataset.features().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
            let mut seeds = || -> Option<Vec<u64>> {
                use_dropout.then(|| chunk.iter().map(|_| child_seed(&mut dropout_rng)).collect())
            };

            let at = |e: Error| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss,
                },
                e => e,
            };
            let (loss, grads, logits) = match config.regime {
                Regime::Plain => {
                    let s = seeds();
                    let bg = backward(
                        &model,
                        &xs,
                        &labels,
                        LossSpec::CrossEntropy,
                        s.as_deref(),
                        exec,
                    )
                    .map_err(at)?;
                    (bg.loss, bg.grads, bg.logits)
                }
                Regime::Distance => {
                    let pairs =
                        sample_pairs(&labels, config.same_class_pair_fraction, &mut pair_rng);
                    let s = seeds();
                    let spec = if pairs.is_empty() {
                        LossSpec::CrossEntropy
                    } else {
                        LossSpec::Distance {
                            alpha: config.alpha,
                            margin: config.margin,
                            pairs: &pairs,
                        }
                    };
                    let bg =
                        backward(&model, &xs, &labels, spec, s.as_deref(), exec).map_err(at)?;
                    (bg.loss, bg.grads, bg.logits)
                }
                Regime::Adversarial => {
                    let adv_rows = exec.try_map(chunk.len(), |i| {
                        fgsm_perturb(&model, xs.row(i), labels[i], config.epsilon)
                    })?;
                    let adv = Matrix::from_rows(&adv_rows).map_err(|_| Error::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        loss: f64::NAN,
                    })?;
                    let s_clean = seeds();
                    let s_adv = seeds();
                    let clean = backward(
                        &model,
                        &xs,
                        &labels,
                        LossSpec::CrossEntropy,
                        s_clean.as_deref(),
                        exec,
                    )
                    .map_err(at)?;
                    let perturbed = backward(
                        &model,
                        &adv,
                        &labels,
                        LossSpec::CrossEntropy,
                        s_adv.as_deref(),
                        exec,
                    )
                    .map_err(at)?;
                    let w = config.clean_weight;
                    let mut grads = Gradients::zeros_like(&model);
                    grads.add_scaled(&clean.grads, w);
                    grads.add_scaled(&perturbed.grads, 1.0 - w);
                    let class = w * clean.loss.class + (1.0 - w) * perturbed.loss.class;
                    let loss = LossBreakdown {
                        total: class,
                        class,
                        dist: 0.0,
                    };
                    (loss, grads, clean.logits)
                }
            };

            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss: loss.total,
                });
            }
            opt.step(&mut model, &grads, config.learning_rate(step));
            step += 1;

            sum_total += loss.total;
            sum_class += loss.class;
            sum_dist += loss.dist;
            batches += 1;
            correct += logits
                .row_iter()
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
        }

        let nb = batches as f64;
        history.push(EpochStats {
            epoch,
            total_loss: sum_total / nb,
            class_loss: sum_class / nb,
            dist_loss: sum_dist / nb,
            train_accuracy: correct as f64 / n as f64,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// CSV with header `epoch,total_loss,class_loss,dist_loss,train_accuracy`.
pub fn write_loss_history_csv(history: &[EpochStats], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,total_loss,class_loss,dist_loss,train_accuracy")?;
    for h in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            h.epoch, h.total_loss, h.class_loss, h.dist_loss, h.train_accuracy
        )?;
    }
    Ok(())
}

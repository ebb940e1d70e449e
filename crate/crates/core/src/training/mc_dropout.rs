//! Monte-Carlo dropout inference.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ForwardMode, MlpModel};
use crate::numerics::{child_seed, seeded_rng, stable_softmax, Matrix, SeededRng};

/// Mean softmax output over `passes` forward passes with dropout active.
pub fn mc_dropout_predict(
    model: &MlpModel,
    x: &[f64],
    passes: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if !model.has_dropout() {
        return Err(Error::usage(
            "MC-dropout needs a model with a nonzero dropout probability",
        ));
    }
    if passes == 0 {
        return Err(Error::usage("MC-dropout needs at least one pass"));
    }
    let mut mean = vec![0.0; model.num_classes()];
    for _ in 0..passes {
        let p = stable_softmax(&model.forward(x, ForwardMode::Dropout(rng))?.logits);
        for (m, v) in mean.iter_mut().zip(&p) {
            *m += v;
        }
    }
    let inv = 1.0 / passes as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// [`mc_dropout_predict`] for every row of `xs`. Row `i` draws from its own
/// child seed of `seed`, so the output does not depend on `exec`.
pub fn mc_dropout_predict_batch(
    model: &MlpModel,
    xs: &Matrix,
    passes: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let mut master = seeded_rng(seed);
    let seeds: Vec<u64> = (0..xs.rows()).map(|_| child_seed(&mut master)).collect();
    exec.try_map(xs.rows(), |i| {
        mc_dropout_predict(model, xs.row(i), passes, &mut seeded_rng(seeds[i]))
    })
}

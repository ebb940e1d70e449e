//! Fast gradient sign perturbations.

use crate::error::{Error, Result};
use crate::model::{ForwardMode, MlpModel};
use crate::numerics::stable_softmax;

/// Gradient of the cross-entropy loss with respect to the input.
pub fn input_gradient(model: &MlpModel, x: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= model.num_classes() {
        return Err(Error::usage(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    let fwd = model.forward(x, ForwardMode::Deterministic)?;
    let mut g = stable_softmax(&fwd.logits);
    g[label] -= 1.0;
    Ok(model.backprop_input(&fwd.cache, &g))
}

/// `x + epsilon * sign(grad_x L_class)`, with `sign(0) = 0`.
///
/// The gradient is taken in deterministic mode at the current parameters.
pub fn fgsm_perturb(model: &MlpModel, x: &[f64], label: usize, epsilon: f64) -> Result<Vec<f64>> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::usage(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    let g = input_gradient(model, x, label)?;
    Ok(x.iter()
        .zip(&g)
        .map(|(&xi, &gi)| xi + epsilon * sign(gi))
        .collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use crate::numerics::Matrix;

    fn linear_two_class() -> MlpModel {
        // identity hidden layer on positive inputs, then a linear head
        let l0 = Layer {
            weights: Matrix::from_rows(&[
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ])
            .unwrap(),
            bias: vec![0.0; 3],
        };
        let l1 = Layer {
            weights: Matrix::from_rows(&[vec![0.5, -2.0, 0.0], vec![-0.5, 1.0, 0.0]]).unwrap(),
            bias: vec![0.0; 2],
        };
        MlpModel::from_layers(vec![l0, l1], vec![0.0]).unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = linear_two_class();
        let x = [0.3, 0.7, 1.1];
        assert_eq!(fgsm_perturb(&m, &x, 0, 0.0).unwrap(), x.to_vec());
    }

    #[test]
    fn sign_pattern_matches_logistic_gradient() {
        // two-class softmax on a linear model: dL/dx = (p0 - y0) (w0 - w1),
        // so for label 0 the sign is -sign(w0 - w1) = -sign([1, -3, 0]).
        let m = linear_two_class();
        let x = [0.3, 0.7, 1.1];
        let out = fgsm_perturb(&m, &x, 0, 0.25).unwrap();
        assert_eq!(out, vec![0.3 - 0.25, 0.7 + 0.25, 1.1]);
        let out = fgsm_perturb(&m, &x, 1, 0.25).unwrap();
        assert_eq!(out, vec![0.3 + 0.25, 0.7 - 0.25, 1.1]);
    }

    #[test]
    fn rejects_negative_epsilon() {
        let m = linear_two_class();
        assert!(fgsm_perturb(&m, &[0.1, 0.2, 0.3], 0, -0.1).is_err());
    }
}

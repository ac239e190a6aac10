//! Shared logistic-regression machinery: the loss, its gradient, and a
//! deterministic single-example SGD loop. Both the token tagger and the
//! ensemble meta-classifier train through this module.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::FeatureVector;
use crate::rng::SeededRng;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

pub fn raw_score(weights: &[f64], bias: f64, features: &FeatureVector) -> f64 {
    let mut z = bias;
    for (j, x) in features.iter() {
        z += weights[j] * x;
    }
    z
}

pub fn predict_prob(weights: &[f64], bias: f64, features: &FeatureVector) -> f64 {
    sigmoid(raw_score(weights, bias, features))
}

/// Per-example objective: binary cross-entropy plus `l2/2 * ||w||^2`.
/// The bias is not regularized. Computed in the overflow-safe form
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn example_loss(
    weights: &[f64],
    bias: f64,
    features: &FeatureVector,
    target: f64,
    l2: f64,
) -> f64 {
    let z = raw_score(weights, bias, features);
    let bce = z.max(0.0) - z * target + libm::log1p(libm::exp(-libm::fabs(z)));
    let reg = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    bce + reg
}

/// Dense gradient of [`example_loss`]: `(p - y) * x + l2 * w` per weight and
/// `p - y` for the bias.
pub fn example_gradient(
    weights: &[f64],
    bias: f64,
    features: &FeatureVector,
    target: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let p = predict_prob(weights, bias, features);
    let residual = p - target;
    let mut grad: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    for (j, x) in features.iter() {
        grad[j] += residual * x;
    }
    (grad, residual)
}

/// Final state of an SGD run.
pub struct SgdRun {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub steps: usize,
}

/// Single-example SGD on [`example_loss`], visiting the examples in a fresh
/// seeded shuffle each epoch. Weights start at zero: the objective is convex,
/// so no random initialization is needed and determinism is preserved.
///
/// The dense L2 shrink is folded into a scale factor so each step costs only
/// the example's non-zeros; the update is algebraically identical to
/// `w <- (1 - lr*l2) * w - lr * (p - y) * x`.
///
/// When `eval_every` is set, `on_checkpoint(step, weights, bias)` fires after
/// every such number of steps and once more at the end if the last step was
/// not on the boundary.
pub fn sgd_train<F>(
    examples: &[(FeatureVector, f64)],
    dim: usize,
    learning_rate: f64,
    l2: f64,
    epochs: usize,
    eval_every: Option<usize>,
    rng: &mut SeededRng,
    mut on_checkpoint: F,
) -> SgdRun
where
    F: FnMut(usize, &[f64], f64),
{
    let shrink = 1.0 - learning_rate * l2;
    assert!(shrink > 0.0, "learning_rate * l2 must be below 1");

    let mut scaled = vec![0.0f64; dim];
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;
    let mut checkpointed_at = usize::MAX;

    let materialize = |scaled: &[f64], scale: f64| -> Vec<f64> {
        scaled.iter().map(|v| v * scale).collect()
    };

    for _epoch in 0..epochs {
        rng.shuffle(&mut order);
        for &idx in &order {
            let (features, target) = &examples[idx];
            let mut z = bias;
            for (j, x) in features.iter() {
                z += scale * scaled[j] * x;
            }
            let residual = sigmoid(z) - target;

            scale *= shrink;
            if scale < 1e-9 {
                for v in scaled.iter_mut() {
                    *v *= scale;
                }
                scale = 1.0;
            }
            let step_size = learning_rate * residual / scale;
            for (j, x) in features.iter() {
                scaled[j] -= step_size * x;
            }
            bias -= learning_rate * residual;

            step += 1;
            if let Some(every) = eval_every {
                if step.is_multiple_of(every) {
                    on_checkpoint(step, &materialize(&scaled, scale), bias);
                    checkpointed_at = step;
                }
            }
        }
    }

    let weights = materialize(&scaled, scale);
    if eval_every.is_some() && checkpointed_at != step {
        on_checkpoint(step, &weights, bias);
    }
    SgdRun { weights, bias, steps: step }
}

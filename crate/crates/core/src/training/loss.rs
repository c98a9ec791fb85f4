use crate::error::{Error, Result};
use crate::models::{ModelOutput, ScoreKind, Strategy};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mixture probabilities below this are clamped before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean loss over the batch.
    pub value: f64,
    /// Gradient of `value` with respect to the model's scores.
    pub grad: Tensor<T>,
    /// Samples whose true-class mixture probability was clamped.
    pub clamped: usize,
}

/// Cross-entropy over raw scores for early and late fusion; negative log of
/// the mixture probability of the true class for the mixture of experts.
pub fn loss<T: Scalar>(strategy: Strategy, output: &ModelOutput<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    let (batch, classes) = output.scores.dims2();
    if labels.len() != batch || batch == 0 {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Shape(format!("label {bad} out of range for {classes} classes")));
    }
    let expected = match strategy {
        Strategy::Early | Strategy::Late => ScoreKind::Logits,
        Strategy::Moe => ScoreKind::Probabilities,
    };
    if output.kind != expected {
        return Err(Error::Shape(format!("{strategy} loss expects {expected:?} scores")));
    }
    let inv_b = 1.0 / batch as f64;
    let mut grad = Tensor::zeros(&[batch, classes]);
    let mut total = 0.0;
    let mut clamped = 0;
    for (b, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = output.scores.row(b).iter().map(|v| v.to_f64_lossy()).collect();
        let g = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        match strategy {
            Strategy::Early | Strategy::Late => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
                total += max + sum.ln() - row[y];
                for (c, gc) in g.iter_mut().enumerate() {
                    let p = (row[c] - max).exp() / sum;
                    let target = if c == y { 1.0 } else { 0.0 };
                    *gc = T::lit((p - target) * inv_b);
                }
            }
            Strategy::Moe => {
                let p = row[y];
                if p < PROB_FLOOR {
                    clamped += 1;
                    total -= PROB_FLOOR.ln();
                } else {
                    total -= p.ln();
                    g[y] = T::lit(-inv_b / p);
                }
            }
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} mixture probabilities at {PROB_FLOOR:e}");
    }
    Ok(LossOutput {
        value: total * inv_b,
        grad,
        clamped,
    })
}

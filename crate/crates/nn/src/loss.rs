use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Clamp applied to probabilities before taking logarithms in binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    Mae,
    Bce,
}

fn check(prediction: &Tensor, target: &Tensor) -> Result<()> {
    if prediction.shape() != target.shape() {
        return Err(NnError::Dimension(format!(
            "loss: prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    if prediction.is_empty() {
        return Err(NnError::Argument("loss of an empty tensor".into()));
    }
    Ok(())
}

impl Loss {
    /// Mean loss over all elements.
    pub fn value(self, prediction: &Tensor, target: &Tensor) -> Result<f64> {
        check(prediction, target)?;
        let n = prediction.len() as f64;
        let pairs = prediction.data().iter().zip(target.data());
        let total: f64 = match self {
            Loss::Mse => pairs.map(|(p, t)| (p - t) * (p - t)).sum(),
            Loss::Mae => pairs.map(|(p, t)| (p - t).abs()).sum(),
            Loss::Bce => pairs
                .map(|(p, t)| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum(),
        };
        if !total.is_finite() {
            return Err(NnError::Numeric(format!("{self:?} loss is not finite")));
        }
        Ok(total / n)
    }

    /// Gradient of [`Loss::value`] with respect to the prediction.
    pub fn gradient(self, prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
        check(prediction, target)?;
        let n = prediction.len() as f64;
        let mut g = Tensor::zeros(prediction.shape());
        let pairs = prediction.data().iter().zip(target.data());
        for (out, (p, t)) in g.data_mut().iter_mut().zip(pairs) {
            *out = match self {
                Loss::Mse => 2.0 * (p - t) / n,
                Loss::Mae => {
                    let d = p - t;
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                Loss::Bce => {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    (-t / p + (1.0 - t) / (1.0 - p)) / n
                }
            };
        }
        Ok(g)
    }
}

/// Free-function form of [`Loss::value`].
pub fn loss(kind: Loss, prediction: &Tensor, target: &Tensor) -> Result<f64> {
    kind.value(prediction, target)
}

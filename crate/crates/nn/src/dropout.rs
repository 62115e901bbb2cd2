use rand::Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Per-element scale factors applied by a training-mode dropout pass.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl DropoutMask {
    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        if dy.len() != self.scale.len() {
            return Err(NnError::Dimension("dropout gradient size mismatch".into()));
        }
        let mut dx = dy.clone();
        dx.data_mut()
            .iter_mut()
            .zip(&self.scale)
            .for_each(|(d, s)| *d *= s);
        Ok(dx)
    }

    pub fn kept_fraction(&self) -> f64 {
        let kept = self.scale.iter().filter(|s| **s != 0.0).count();
        kept as f64 / self.scale.len().max(1) as f64
    }
}

/// Inverted dropout. Outside training (or with rate 0) the input is passed through.
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Tensor, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Argument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .zip(&scale)
        .for_each(|(v, s)| *v *= s);
    Ok((y, Some(DropoutMask { scale })))
}

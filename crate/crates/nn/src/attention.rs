//! Additive attention pooling over a sequence of feature vectors.
//!
//! `e_i = tanh(W_h h_i)`, `α = softmax(wᵀ e_i)`, `c = Σ α_i h_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::init::{glorot_bound, uniform};
use crate::linalg::gemm;
use crate::tensor::Tensor;
use crate::Parameterized;

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub w_h: Tensor,
    pub w: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub feature_dim: usize,
}

pub struct AttentionCache {
    inputs: Vec<Tensor>,
    energies: Vec<Vec<f64>>,
    /// `[batch, steps]`
    alphas: Vec<f64>,
}

/// Numerically stable softmax of a slice, written into `out`.
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Softmax over a one-dimensional tensor.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    z.expect_rank(1, "softmax input")?;
    if z.is_empty() {
        return Err(NnError::Argument("softmax of an empty vector".into()));
    }
    if z.data().iter().any(|v| v.is_nan()) {
        return Err(NnError::Numeric("softmax input contains NaN".into()));
    }
    let mut out = Tensor::zeros(z.shape());
    softmax_into(z.data(), out.data_mut());
    Ok(out)
}

impl Attention {
    pub fn new(feature_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_h: uniform(
                &[feature_dim, feature_dim],
                glorot_bound(feature_dim, feature_dim),
                rng,
            ),
            w: uniform(&[feature_dim], glorot_bound(feature_dim, 1), rng),
        }
    }

    pub fn zeroed(feature_dim: usize) -> Self {
        Self {
            w_h: Tensor::zeros(&[feature_dim, feature_dim]),
            w: Tensor::zeros(&[feature_dim]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w.len()
    }

    pub fn spec(&self) -> AttentionSpec {
        AttentionSpec {
            feature_dim: self.feature_dim(),
        }
    }

    /// Pools `hs` (each `[batch, feature_dim]`) into a `[batch, feature_dim]` context.
    ///
    /// Also returns the `[batch, steps]` attention weights.
    pub fn forward(&self, hs: &[Tensor]) -> Result<(Tensor, Tensor, AttentionCache)> {
        if hs.is_empty() {
            return Err(NnError::Argument("attention over an empty sequence".into()));
        }
        let dim = self.feature_dim();
        let batch = hs[0].dim(0);
        let steps = hs.len();
        let mut energies = Vec::with_capacity(steps);
        let mut scores = vec![0.0; batch * steps];
        for (t, h) in hs.iter().enumerate() {
            h.expect_shape(&[batch, dim], "attention input step")?;
            let mut e = vec![0.0; batch * dim];
            gemm(batch, dim, dim, h.data(), false, self.w_h.data(), true, &mut e, 0.0);
            e.iter_mut().for_each(|v| *v = v.tanh());
            for b in 0..batch {
                scores[b * steps + t] = e[b * dim..(b + 1) * dim]
                    .iter()
                    .zip(self.w.data())
                    .map(|(x, y)| x * y)
                    .sum();
            }
            energies.push(e);
        }
        let mut alphas = vec![0.0; batch * steps];
        for b in 0..batch {
            softmax_into(
                &scores[b * steps..(b + 1) * steps],
                &mut alphas[b * steps..(b + 1) * steps],
            );
        }
        let mut context = Tensor::zeros(&[batch, dim]);
        let c = context.data_mut();
        for (t, h) in hs.iter().enumerate() {
            for b in 0..batch {
                let a = alphas[b * steps + t];
                c[b * dim..(b + 1) * dim]
                    .iter_mut()
                    .zip(h.row(b))
                    .for_each(|(acc, v)| *acc += a * v);
            }
        }
        let alpha_tensor = Tensor::new(vec![batch, steps], alphas.clone())?;
        Ok((
            context,
            alpha_tensor,
            AttentionCache {
                inputs: hs.to_vec(),
                energies,
                alphas,
            },
        ))
    }

    /// Accumulates parameter gradients and returns one input gradient per step.
    pub fn backward(&mut self, cache: &AttentionCache, d_context: &Tensor) -> Result<Vec<Tensor>> {
        let dim = self.feature_dim();
        let steps = cache.inputs.len();
        let batch = cache.inputs[0].dim(0);
        d_context.expect_shape(&[batch, dim], "attention context gradient")?;
        let dc = d_context.data();
        let mut d_inputs: Vec<Tensor> = Vec::with_capacity(steps);
        let mut d_alpha = vec![0.0; batch * steps];
        for (t, h) in cache.inputs.iter().enumerate() {
            let mut dh = Tensor::zeros(&[batch, dim]);
            for b in 0..batch {
                let a = cache.alphas[b * steps + t];
                let dcb = &dc[b * dim..(b + 1) * dim];
                d_alpha[b * steps + t] = dcb.iter().zip(h.row(b)).map(|(x, y)| x * y).sum();
                dh.data_mut()[b * dim..(b + 1) * dim]
                    .iter_mut()
                    .zip(dcb)
                    .for_each(|(d, v)| *d = a * v);
            }
            d_inputs.push(dh);
        }
        let mut d_scores = vec![0.0; batch * steps];
        for b in 0..batch {
            let a = &cache.alphas[b * steps..(b + 1) * steps];
            let da = &d_alpha[b * steps..(b + 1) * steps];
            let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
            for t in 0..steps {
                d_scores[b * steps + t] = a[t] * (da[t] - dot);
            }
        }
        for (t, e) in cache.energies.iter().enumerate() {
            let mut d_pre = vec![0.0; batch * dim];
            {
                let w = self.w.data().to_vec();
                let dw = self.w.grad_mut();
                for b in 0..batch {
                    let ds = d_scores[b * steps + t];
                    for j in 0..dim {
                        let ev = e[b * dim + j];
                        dw[j] += ds * ev;
                        d_pre[b * dim + j] = ds * w[j] * (1.0 - ev * ev);
                    }
                }
            }
            let h = &cache.inputs[t];
            gemm(dim, batch, dim, &d_pre, true, h.data(), false, self.w_h.grad_mut(), 1.0);
            gemm(
                batch,
                dim,
                dim,
                &d_pre,
                false,
                self.w_h.data(),
                false,
                d_inputs[t].data_mut(),
                1.0,
            );
        }
        Ok(d_inputs)
    }
}

impl Parameterized for Attention {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![("w_h".into(), &self.w_h), ("w".into(), &self.w)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_h, &mut self.w]
    }
}

/// Unbatched attention over a `[k, feature_dim]` matrix; returns `(c, α)`.
pub fn attention_forward(params: &Attention, h: &Tensor) -> Result<(Tensor, Tensor)> {
    h.expect_rank(2, "attention_forward input")?;
    let (k, dim) = (h.dim(0), h.dim(1));
    if k == 0 {
        return Err(NnError::Argument("attention over zero rows".into()));
    }
    if dim != params.feature_dim() {
        return Err(NnError::Dimension(format!(
            "attention expects feature dim {}, got {dim}",
            params.feature_dim()
        )));
    }
    let hs: Vec<Tensor> = (0..k)
        .map(|i| Tensor::new(vec![1, dim], h.row(i).to_vec()))
        .collect::<Result<_>>()?;
    let (c, a, _) = params.forward(&hs)?;
    Ok((c.reshape(vec![dim])?, a.reshape(vec![k])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_reference_values() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1000.0, 1000.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        assert!(close(s.data(), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0], 1e-15));
        let s = softmax(&Tensor::vector(vec![2f64.ln(), 0.0])).unwrap();
        assert!(close(s.data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(
            softmax(&Tensor::vector(vec![0.0, f64::NAN])),
            Err(NnError::Numeric(_))
        ));
    }

    #[test]
    fn zero_scoring_vector_gives_mean() {
        let mut rng = crate::seeded_rng(1);
        let mut att = Attention::new(2, &mut rng);
        att.w = Tensor::zeros(&[2]);
        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let (c, a) = attention_forward(&att, &h).unwrap();
        assert!(close(a.data(), &[1.0 / 3.0; 3], 1e-15));
        assert!(close(c.data(), &[3.0, 5.0], 1e-12));
    }

    #[test]
    fn single_row_is_returned_verbatim() {
        let mut rng = crate::seeded_rng(4);
        let att = Attention::new(3, &mut rng);
        let h = Tensor::matrix(1, 3, vec![0.2, -0.7, 1.1]).unwrap();
        let (c, a) = attention_forward(&att, &h).unwrap();
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(c.data(), h.data());
    }

    #[test]
    fn scores_ln2_and_zero_give_two_thirds() {
        // One-dimensional features: W_h = 1 so e_i = tanh(h_i); choose h with
        // w·tanh(h_1) = ln 2 and w·tanh(h_2) = 0.
        let mut att = Attention::zeroed(1);
        att.w_h.data_mut()[0] = 1.0;
        att.w.data_mut()[0] = 1.0;
        let h1 = 2f64.ln().atanh();
        let h = Tensor::matrix(2, 1, vec![h1, 0.0]).unwrap();
        let (_, a) = attention_forward(&att, &h).unwrap();
        assert!(close(a.data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-12));
    }
}

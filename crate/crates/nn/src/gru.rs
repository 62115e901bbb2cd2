//! Gated recurrent unit.
//!
//! Gate equations, with `[a; b]` denoting column concatenation:
//!
//! ```text
//! z_t  = σ(W_z [x_t; h_{t-1}] + b_z)
//! r_t  = σ(W_r [x_t; h_{t-1}] + b_r)
//! h̃_t = tanh(W_h [x_t; r_t ∘ h_{t-1}] + b_h)
//! h_t  = z_t ∘ h_{t-1} + (1 - z_t) ∘ h̃_t
//! ```
//!
//! Note the update gate weights the *previous* state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::sigmoid;
use crate::error::{NnError, Result};
use crate::init::{recurrent_bound, uniform};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm};
use crate::tensor::Tensor;
use crate::Parameterized;

#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
    input_size: usize,
    hidden_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input_size: usize,
    pub hidden_size: usize,
}

struct GruStepCache {
    xh: Vec<f64>,
    xrh: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    h_prev: Vec<f64>,
}

/// Per-step activations recorded by [`Gru::forward`].
pub struct GruCache {
    batch: usize,
    steps: Vec<GruStepCache>,
}

fn concat_rows(batch: usize, a: &[f64], aw: usize, b: &[f64], bw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (aw + bw));
    for i in 0..batch {
        out.extend_from_slice(&a[i * aw..(i + 1) * aw]);
        out.extend_from_slice(&b[i * bw..(i + 1) * bw]);
    }
    out
}

impl Gru {
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let bound = recurrent_bound(hidden_size);
        let cols = input_size + hidden_size;
        Self {
            w_z: uniform(&[hidden_size, cols], bound, rng),
            w_r: uniform(&[hidden_size, cols], bound, rng),
            w_h: uniform(&[hidden_size, cols], bound, rng),
            b_z: Tensor::zeros(&[hidden_size]),
            b_r: Tensor::zeros(&[hidden_size]),
            b_h: Tensor::zeros(&[hidden_size]),
            input_size,
            hidden_size,
        }
    }

    pub fn zeroed(input_size: usize, hidden_size: usize) -> Self {
        let cols = input_size + hidden_size;
        Self {
            w_z: Tensor::zeros(&[hidden_size, cols]),
            w_r: Tensor::zeros(&[hidden_size, cols]),
            w_h: Tensor::zeros(&[hidden_size, cols]),
            b_z: Tensor::zeros(&[hidden_size]),
            b_r: Tensor::zeros(&[hidden_size]),
            b_h: Tensor::zeros(&[hidden_size]),
            input_size,
            hidden_size,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn spec(&self) -> GruSpec {
        GruSpec {
            input_size: self.input_size,
            hidden_size: self.hidden_size,
        }
    }

    /// Runs the cell over `xs` (each `[batch, input_size]`) from `h0` (`[batch, hidden_size]`).
    ///
    /// Returns every hidden state `h_1 … h_T`.
    pub fn forward(&self, xs: &[Tensor], h0: &Tensor) -> Result<(Vec<Tensor>, GruCache)> {
        if xs.is_empty() {
            return Err(NnError::Argument("GRU input sequence is empty".into()));
        }
        let batch = xs[0].dim(0);
        let (ni, nh) = (self.input_size, self.hidden_size);
        h0.expect_shape(&[batch, nh], "GRU initial state")?;
        let cols = ni + nh;
        let mut states = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        let mut h_prev = h0.data().to_vec();
        for x in xs {
            x.expect_shape(&[batch, ni], "GRU input step")?;
            let xh = concat_rows(batch, x.data(), ni, &h_prev, nh);
            let mut z = vec![0.0; batch * nh];
            let mut r = vec![0.0; batch * nh];
            gemm(batch, cols, nh, &xh, false, self.w_z.data(), true, &mut z, 0.0);
            gemm(batch, cols, nh, &xh, false, self.w_r.data(), true, &mut r, 0.0);
            add_row_bias(&mut z, self.b_z.data());
            add_row_bias(&mut r, self.b_r.data());
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
            r.iter_mut().for_each(|v| *v = sigmoid(*v));
            let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
            let xrh = concat_rows(batch, x.data(), ni, &rh, nh);
            let mut cand = vec![0.0; batch * nh];
            gemm(batch, cols, nh, &xrh, false, self.w_h.data(), true, &mut cand, 0.0);
            add_row_bias(&mut cand, self.b_h.data());
            cand.iter_mut().for_each(|v| *v = v.tanh());
            let h: Vec<f64> = (0..batch * nh)
                .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * cand[i])
                .collect();
            states.push(Tensor::new(vec![batch, nh], h.clone())?);
            steps.push(GruStepCache {
                xh,
                xrh,
                z,
                r,
                cand,
                h_prev: std::mem::replace(&mut h_prev, h),
            });
        }
        Ok((states, GruCache { batch, steps }))
    }

    /// Back-propagates `d_states` (one `[batch, hidden]` gradient per output state).
    ///
    /// Accumulates parameter gradients; returns the input gradients and `dL/dh0`.
    pub fn backward(
        &mut self,
        cache: &GruCache,
        d_states: &[Tensor],
    ) -> Result<(Vec<Tensor>, Tensor)> {
        if d_states.len() != cache.steps.len() {
            return Err(NnError::Dimension(format!(
                "GRU backward got {} state gradients for {} steps",
                d_states.len(),
                cache.steps.len()
            )));
        }
        let batch = cache.batch;
        let (ni, nh) = (self.input_size, self.hidden_size);
        let cols = ni + nh;
        let n = batch * nh;
        let mut dxs = vec![Tensor::zeros(&[batch, ni]); cache.steps.len()];
        let mut dh_next = vec![0.0; n];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            d_states[t].expect_shape(&[batch, nh], "GRU state gradient")?;
            let dh: Vec<f64> = d_states[t]
                .data()
                .iter()
                .zip(&dh_next)
                .map(|(a, b)| a + b)
                .collect();
            let mut dh_prev: Vec<f64> = (0..n).map(|i| dh[i] * step.z[i]).collect();
            let da_z: Vec<f64> = (0..n)
                .map(|i| {
                    let dz = dh[i] * (step.h_prev[i] - step.cand[i]);
                    dz * step.z[i] * (1.0 - step.z[i])
                })
                .collect();
            let da_h: Vec<f64> = (0..n)
                .map(|i| dh[i] * (1.0 - step.z[i]) * (1.0 - step.cand[i] * step.cand[i]))
                .collect();

            gemm(nh, batch, cols, &da_h, true, &step.xrh, false, self.w_h.grad_mut(), 1.0);
            accumulate_col_sums(self.b_h.grad_mut(), &da_h);
            let mut dxrh = vec![0.0; batch * cols];
            gemm(batch, nh, cols, &da_h, false, self.w_h.data(), false, &mut dxrh, 0.0);

            let mut da_r = vec![0.0; n];
            let dx = dxs[t].data_mut();
            for b in 0..batch {
                let row = &dxrh[b * cols..(b + 1) * cols];
                dx[b * ni..(b + 1) * ni].copy_from_slice(&row[..ni]);
                for j in 0..nh {
                    let i = b * nh + j;
                    let d_rh = row[ni + j];
                    dh_prev[i] += d_rh * step.r[i];
                    da_r[i] = d_rh * step.h_prev[i] * step.r[i] * (1.0 - step.r[i]);
                }
            }

            gemm(nh, batch, cols, &da_z, true, &step.xh, false, self.w_z.grad_mut(), 1.0);
            gemm(nh, batch, cols, &da_r, true, &step.xh, false, self.w_r.grad_mut(), 1.0);
            accumulate_col_sums(self.b_z.grad_mut(), &da_z);
            accumulate_col_sums(self.b_r.grad_mut(), &da_r);
            let mut dxh = vec![0.0; batch * cols];
            gemm(batch, nh, cols, &da_z, false, self.w_z.data(), false, &mut dxh, 0.0);
            gemm(batch, nh, cols, &da_r, false, self.w_r.data(), false, &mut dxh, 1.0);
            for b in 0..batch {
                let row = &dxh[b * cols..(b + 1) * cols];
                dx[b * ni..(b + 1) * ni]
                    .iter_mut()
                    .zip(&row[..ni])
                    .for_each(|(d, v)| *d += v);
                dh_prev[b * nh..(b + 1) * nh]
                    .iter_mut()
                    .zip(&row[ni..])
                    .for_each(|(d, v)| *d += v);
            }
            dh_next = dh_prev;
        }
        Ok((dxs, Tensor::new(vec![batch, nh], dh_next)?))
    }
}

impl Parameterized for Gru {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_z".into(), &self.w_z),
            ("w_r".into(), &self.w_r),
            ("w_h".into(), &self.w_h),
            ("b_z".into(), &self.b_z),
            ("b_r".into(), &self.b_r),
            ("b_h".into(), &self.b_h),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Single GRU update for one unbatched input vector.
pub fn gru_step(params: &Gru, x_t: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    x_t.expect_shape(&[params.input_size], "gru_step input")?;
    h_prev.expect_shape(&[params.hidden_size], "gru_step state")?;
    let x = x_t.clone().reshape(vec![1, params.input_size])?;
    let h = h_prev.clone().reshape(vec![1, params.hidden_size])?;
    let (mut states, _) = params.forward(&[x], &h)?;
    states.pop().expect("one step").reshape(vec![params.hidden_size])
}

/// Runs the cell over a `[T, input_size]` sequence and returns the `[T, hidden_size]` states.
pub fn gru_forward(params: &Gru, sequence: &Tensor, h0: &Tensor) -> Result<Tensor> {
    sequence.expect_rank(2, "gru_forward sequence")?;
    if sequence.dim(0) == 0 {
        return Err(NnError::Argument("gru_forward on an empty sequence".into()));
    }
    if sequence.dim(1) != params.input_size {
        return Err(NnError::Dimension(format!(
            "gru_forward expects {} features per step, got {}",
            params.input_size,
            sequence.dim(1)
        )));
    }
    h0.expect_shape(&[params.hidden_size], "gru_forward initial state")?;
    let xs: Vec<Tensor> = (0..sequence.dim(0))
        .map(|t| Tensor::new(vec![1, params.input_size], sequence.row(t).to_vec()))
        .collect::<Result<_>>()?;
    let h = h0.clone().reshape(vec![1, params.hidden_size])?;
    let (states, _) = params.forward(&xs, &h)?;
    let data = states.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(vec![sequence.dim(0), params.hidden_size], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn zero_weights_closed_form() {
        let cell = Gru::zeroed(2, 1);
        let x = Tensor::vector(vec![0.7, -3.0]);
        let h = gru_step(&cell, &x, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(h.data(), &[0.5]);
        let h = gru_step(&cell, &x, &Tensor::vector(vec![0.0])).unwrap();
        assert_eq!(h.data(), &[0.0]);
    }

    #[test]
    fn zero_weights_halve_state_each_step() {
        let cell = Gru::zeroed(1, 1);
        let seq = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let out = gru_forward(&cell, &seq, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.25, 0.125]);
    }

    #[test]
    fn single_step_sequence_equals_step() {
        let mut rng = seeded_rng(11);
        let cell = Gru::new(2, 3, &mut rng);
        let x = Tensor::vector(vec![0.3, -0.8]);
        let h0 = Tensor::vector(vec![0.1, -0.2, 0.4]);
        let a = gru_step(&cell, &x, &h0).unwrap();
        let b = gru_forward(&cell, &x.clone().reshape(vec![1, 2]).unwrap(), &h0).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn states_stay_inside_unit_interval() {
        let mut rng = seeded_rng(5);
        let cell = Gru::new(1, 3, &mut rng);
        let seq = Tensor::matrix(6, 1, vec![5.0, -4.0, 10.0, 0.0, 3.0, -7.0]).unwrap();
        let out = gru_forward(&cell, &seq, &Tensor::zeros(&[3])).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn later_inputs_do_not_affect_earlier_states() {
        let mut rng = seeded_rng(9);
        let cell = Gru::new(1, 4, &mut rng);
        let seq = Tensor::matrix(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut perturbed = seq.clone();
        perturbed.data_mut()[2] = 9.0;
        let a = gru_forward(&cell, &seq, &Tensor::zeros(&[4])).unwrap();
        let b = gru_forward(&cell, &perturbed, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn errors() {
        let cell = Gru::zeroed(1, 2);
        let empty = Tensor::zeros(&[0, 1]);
        assert!(matches!(
            gru_forward(&cell, &empty, &Tensor::zeros(&[2])),
            Err(NnError::Argument(_))
        ));
        assert!(matches!(
            gru_step(&cell, &Tensor::vector(vec![1.0, 2.0]), &Tensor::zeros(&[2])),
            Err(NnError::Dimension(_))
        ));
    }
}

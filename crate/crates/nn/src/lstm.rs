//! Long short-term memory cell (standard formulation, no peepholes).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::sigmoid;
use crate::error::{NnError, Result};
use crate::init::{recurrent_bound, uniform};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm};
use crate::tensor::Tensor;
use crate::Parameterized;

/// Gate weights are `[hidden, input + hidden]` acting on `[x_t; h_{t-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_g: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_g: Tensor,
    input_size: usize,
    hidden_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_size: usize,
    pub hidden_size: usize,
}

struct LstmStepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    c_tanh: Vec<f64>,
}

pub struct LstmCache {
    batch: usize,
    steps: Vec<LstmStepCache>,
}

impl Lstm {
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let bound = recurrent_bound(hidden_size);
        let shape = [hidden_size, input_size + hidden_size];
        Self {
            w_i: uniform(&shape, bound, rng),
            w_f: uniform(&shape, bound, rng),
            w_o: uniform(&shape, bound, rng),
            w_g: uniform(&shape, bound, rng),
            b_i: Tensor::zeros(&[hidden_size]),
            b_f: Tensor::zeros(&[hidden_size]),
            b_o: Tensor::zeros(&[hidden_size]),
            b_g: Tensor::zeros(&[hidden_size]),
            input_size,
            hidden_size,
        }
    }

    pub fn zeroed(input_size: usize, hidden_size: usize) -> Self {
        let shape = [hidden_size, input_size + hidden_size];
        Self {
            w_i: Tensor::zeros(&shape),
            w_f: Tensor::zeros(&shape),
            w_o: Tensor::zeros(&shape),
            w_g: Tensor::zeros(&shape),
            b_i: Tensor::zeros(&[hidden_size]),
            b_f: Tensor::zeros(&[hidden_size]),
            b_o: Tensor::zeros(&[hidden_size]),
            b_g: Tensor::zeros(&[hidden_size]),
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

    pub fn spec(&self) -> LstmSpec {
        LstmSpec {
            input_size: self.input_size,
            hidden_size: self.hidden_size,
        }
    }

    fn gate(&self, w: &Tensor, b: &Tensor, xh: &[f64], batch: usize) -> Vec<f64> {
        let cols = self.input_size + self.hidden_size;
        let mut a = vec![0.0; batch * self.hidden_size];
        gemm(batch, cols, self.hidden_size, xh, false, w.data(), true, &mut a, 0.0);
        add_row_bias(&mut a, b.data());
        a
    }

    /// Runs the cell from `(h0, c0)`; returns the hidden states and the final cell state.
    pub fn forward(
        &self,
        xs: &[Tensor],
        h0: &Tensor,
        c0: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor, LstmCache)> {
        if xs.is_empty() {
            return Err(NnError::Argument("LSTM input sequence is empty".into()));
        }
        let batch = xs[0].dim(0);
        let (ni, nh) = (self.input_size, self.hidden_size);
        h0.expect_shape(&[batch, nh], "LSTM initial hidden state")?;
        c0.expect_shape(&[batch, nh], "LSTM initial cell state")?;
        let mut h_prev = h0.data().to_vec();
        let mut c_prev = c0.data().to_vec();
        let mut states = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            x.expect_shape(&[batch, ni], "LSTM input step")?;
            let mut xh = Vec::with_capacity(batch * (ni + nh));
            for b in 0..batch {
                xh.extend_from_slice(x.row(b));
                xh.extend_from_slice(&h_prev[b * nh..(b + 1) * nh]);
            }
            let mut i = self.gate(&self.w_i, &self.b_i, &xh, batch);
            let mut f = self.gate(&self.w_f, &self.b_f, &xh, batch);
            let mut o = self.gate(&self.w_o, &self.b_o, &xh, batch);
            let mut g = self.gate(&self.w_g, &self.b_g, &xh, batch);
            for v in i.iter_mut().chain(f.iter_mut()).chain(o.iter_mut()) {
                *v = sigmoid(*v);
            }
            g.iter_mut().for_each(|v| *v = v.tanh());
            let c: Vec<f64> = (0..batch * nh)
                .map(|k| f[k] * c_prev[k] + i[k] * g[k])
                .collect();
            let c_tanh: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h: Vec<f64> = o.iter().zip(&c_tanh).map(|(a, b)| a * b).collect();
            states.push(Tensor::new(vec![batch, nh], h.clone())?);
            steps.push(LstmStepCache {
                xh,
                i,
                f,
                o,
                g,
                c_prev: std::mem::replace(&mut c_prev, c),
                c_tanh,
            });
            h_prev = h;
        }
        let c_last = Tensor::new(vec![batch, nh], c_prev)?;
        Ok((states, c_last, LstmCache { batch, steps }))
    }

    /// Back-propagates hidden-state gradients; returns input gradients.
    pub fn backward(&mut self, cache: &LstmCache, d_states: &[Tensor]) -> Result<Vec<Tensor>> {
        if d_states.len() != cache.steps.len() {
            return Err(NnError::Dimension(format!(
                "LSTM backward got {} state gradients for {} steps",
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
        let mut dc_next = vec![0.0; n];
        for (t, s) in cache.steps.iter().enumerate().rev() {
            d_states[t].expect_shape(&[batch, nh], "LSTM state gradient")?;
            let mut da_i = vec![0.0; n];
            let mut da_f = vec![0.0; n];
            let mut da_o = vec![0.0; n];
            let mut da_g = vec![0.0; n];
            for k in 0..n {
                let dh = d_states[t].data()[k] + dh_next[k];
                let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.c_tanh[k] * s.c_tanh[k]);
                da_o[k] = dh * s.c_tanh[k] * s.o[k] * (1.0 - s.o[k]);
                da_i[k] = dc * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                da_f[k] = dc * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
                da_g[k] = dc * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                dc_next[k] = dc * s.f[k];
            }
            let mut dxh = vec![0.0; batch * cols];
            let gates: [(&mut Tensor, &mut Tensor, &Vec<f64>); 4] = [
                (&mut self.w_i, &mut self.b_i, &da_i),
                (&mut self.w_f, &mut self.b_f, &da_f),
                (&mut self.w_o, &mut self.b_o, &da_o),
                (&mut self.w_g, &mut self.b_g, &da_g),
            ];
            for (w, b, da) in gates {
                gemm(nh, batch, cols, da, true, &s.xh, false, w.grad_mut(), 1.0);
                accumulate_col_sums(b.grad_mut(), da);
                gemm(batch, nh, cols, da, false, w.data(), false, &mut dxh, 1.0);
            }
            let dx = dxs[t].data_mut();
            for b in 0..batch {
                let row = &dxh[b * cols..(b + 1) * cols];
                dx[b * ni..(b + 1) * ni].copy_from_slice(&row[..ni]);
                dh_next[b * nh..(b + 1) * nh].copy_from_slice(&row[ni..]);
            }
        }
        Ok(dxs)
    }
}

impl Parameterized for Lstm {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_i".into(), &self.w_i),
            ("w_f".into(), &self.w_f),
            ("w_o".into(), &self.w_o),
            ("w_g".into(), &self.w_g),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_o".into(), &self.b_o),
            ("b_g".into(), &self.b_g),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_g,
        ]
    }
}

/// One unbatched LSTM update; returns `(h_t, c_t)`.
pub fn lstm_step(
    params: &Lstm,
    x_t: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let nh = params.hidden_size;
    x_t.expect_shape(&[params.input_size], "lstm_step input")?;
    h_prev.expect_shape(&[nh], "lstm_step hidden state")?;
    c_prev.expect_shape(&[nh], "lstm_step cell state")?;
    let x = x_t.clone().reshape(vec![1, params.input_size])?;
    let (mut hs, c, _) = params.forward(
        &[x],
        &h_prev.clone().reshape(vec![1, nh])?,
        &c_prev.clone().reshape(vec![1, nh])?,
    )?;
    Ok((hs.pop().expect("one step").reshape(vec![nh])?, c.reshape(vec![nh])?))
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{NnError, Result};
use crate::init::{glorot_bound, uniform};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm};
use crate::tensor::Tensor;
use crate::Parameterized;

/// Fully connected layer `y = act(x Wᵀ + b)` over a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform(&[outputs, inputs], glorot_bound(inputs, outputs), rng),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn zeroed(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn spec(&self) -> DenseSpec {
        DenseSpec {
            inputs: self.inputs(),
            outputs: self.outputs(),
            activation: self.activation,
        }
    }

    /// `x` is `[batch, inputs]`; returns `[batch, outputs]` and the backward cache.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        x.expect_rank(2, "dense input")?;
        let (batch, inputs) = (x.dim(0), x.dim(1));
        if inputs != self.inputs() {
            return Err(NnError::Dimension(format!(
                "dense expects {} inputs, got {inputs}",
                self.inputs()
            )));
        }
        let outputs = self.outputs();
        let mut y = Tensor::zeros(&[batch, outputs]);
        gemm(
            batch,
            inputs,
            outputs,
            x.data(),
            false,
            self.weight.data(),
            true,
            y.data_mut(),
            0.0,
        );
        add_row_bias(y.data_mut(), self.bias.data());
        self.activation.apply_in_place(y.data_mut());
        Ok((
            y.clone(),
            DenseCache {
                input: x.clone(),
                output: y,
            },
        ))
    }

    /// Inference-only forward.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, cache: &DenseCache, dy: &Tensor) -> Result<Tensor> {
        dy.expect_shape(cache.output.shape(), "dense upstream gradient")?;
        let (batch, inputs, outputs) = (cache.input.dim(0), self.inputs(), self.outputs());
        let mut dz = dy.clone();
        self.activation
            .backprop_in_place(cache.output.data(), dz.data_mut());
        gemm(
            outputs,
            batch,
            inputs,
            dz.data(),
            true,
            cache.input.data(),
            false,
            self.weight.grad_mut(),
            1.0,
        );
        accumulate_col_sums(self.bias.grad_mut(), dz.data());
        let mut dx = Tensor::zeros(&[batch, inputs]);
        gemm(
            batch,
            outputs,
            inputs,
            dz.data(),
            false,
            self.weight.data(),
            false,
            dx.data_mut(),
            0.0,
        );
        Ok(dx)
    }
}

impl Parameterized for Dense {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

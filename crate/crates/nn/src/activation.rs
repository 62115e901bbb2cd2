use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Negative-side slope used by [`Activation::LeakyRelu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => leaky_relu(x, LEAKY_RELU_SLOPE),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    ///
    /// Every supported activation is monotone, so the output determines which
    /// branch the input was on.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if y >= 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub(crate) fn apply_in_place(self, xs: &mut [f64]) {
        if self != Activation::None {
            xs.iter_mut().for_each(|v| *v = self.eval(*v));
        }
    }

    /// Multiplies `grad` by the activation derivative evaluated at `outputs`.
    pub(crate) fn backprop_in_place(self, outputs: &[f64], grad: &mut [f64]) {
        if self != Activation::None {
            grad.iter_mut()
                .zip(outputs)
                .for_each(|(g, y)| *g *= self.derivative_from_output(*y));
        }
    }
}

/// Elementwise activation returning a new tensor of the same shape.
pub fn apply_activation(kind: Activation, x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    out.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(o, v)| *o = kind.eval(*v));
    out
}

/// Leaky ReLU with an explicit negative slope.
pub fn apply_leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    out.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(o, v)| *o = leaky_relu(*v, slope));
    out
}

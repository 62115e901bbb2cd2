//! One-dimensional convolution and transposed convolution over `[batch, length, channels]`.
//!
//! Both use the cross-correlation convention with symmetric zero padding. The kernel
//! array is always `[out_channels, in_channels, kernel_len]` from the layer's own view.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{NnError, Result};
use crate::init::{glorot_bound, uniform};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm};
use crate::tensor::Tensor;
use crate::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_len: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
    pub activation: Activation,
}

pub struct Conv1dCache {
    batch: usize,
    in_len: usize,
    /// Regular conv: im2col matrix. Transposed conv: the input itself.
    lhs: Vec<f64>,
    /// Transposed conv only: kernel rearranged to `[in, out * k]`.
    kernel_t: Vec<f64>,
    output: Tensor,
}

/// Output length of a strided convolution, or `None` when the window does not fit.
pub fn conv_output_len(len: usize, kernel_len: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel_len || stride == 0 {
        return None;
    }
    Some((padded - kernel_len) / stride + 1)
}

/// Output length of a transposed convolution, or `None` when it would be empty.
pub fn conv_transpose_output_len(
    len: usize,
    kernel_len: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let full = (len - 1) * stride + kernel_len;
    (full > 2 * padding).then(|| full - 2 * padding)
}

impl Conv1d {
    pub fn new(spec: Conv1dSpec, rng: &mut impl Rng) -> Result<Self> {
        Self::validate(&spec)?;
        let k = spec.kernel_len;
        let bound = glorot_bound(spec.in_channels * k, spec.out_channels * k);
        Ok(Self {
            kernel: uniform(&[spec.out_channels, spec.in_channels, k], bound, rng),
            bias: Tensor::zeros(&[spec.out_channels]),
            stride: spec.stride,
            padding: spec.padding,
            transposed: spec.transposed,
            activation: spec.activation,
        })
    }

    pub fn zeroed(spec: Conv1dSpec) -> Result<Self> {
        Self::validate(&spec)?;
        Ok(Self {
            kernel: Tensor::zeros(&[spec.out_channels, spec.in_channels, spec.kernel_len]),
            bias: Tensor::zeros(&[spec.out_channels]),
            stride: spec.stride,
            padding: spec.padding,
            transposed: spec.transposed,
            activation: spec.activation,
        })
    }

    fn validate(spec: &Conv1dSpec) -> Result<()> {
        if spec.kernel_len == 0 || spec.stride == 0 || spec.in_channels == 0 || spec.out_channels == 0
        {
            return Err(NnError::Argument(format!("invalid conv spec {spec:?}")));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim(1)
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.dim(2)
    }

    pub fn spec(&self) -> Conv1dSpec {
        Conv1dSpec {
            in_channels: self.in_channels(),
            out_channels: self.out_channels(),
            kernel_len: self.kernel_len(),
            stride: self.stride,
            padding: self.padding,
            transposed: self.transposed,
            activation: self.activation,
        }
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        if self.transposed {
            conv_transpose_output_len(len, self.kernel_len(), self.stride, self.padding)
        } else {
            conv_output_len(len, self.kernel_len(), self.stride, self.padding)
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        x.expect_rank(3, "conv input")?;
        let (batch, len, ch) = (x.dim(0), x.dim(1), x.dim(2));
        if ch != self.in_channels() {
            return Err(NnError::Dimension(format!(
                "conv expects {} input channels, got {ch}",
                self.in_channels()
            )));
        }
        let out_len = self.output_len(len).ok_or_else(|| {
            NnError::Dimension(format!(
                "conv output would be empty for input length {len} (kernel {}, stride {}, padding {})",
                self.kernel_len(),
                self.stride,
                self.padding
            ))
        })?;
        Ok((batch, len, out_len))
    }

    /// `x` is `[batch, length, in_channels]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Conv1dCache)> {
        let (batch, len, out_len) = self.check_input(x)?;
        let (ci, co, k) = (self.in_channels(), self.out_channels(), self.kernel_len());
        let (s, p) = (self.stride, self.padding);
        let mut y = Tensor::zeros(&[batch, out_len, co]);
        let cache = if !self.transposed {
            let width = ci * k;
            let mut cols = vec![0.0; batch * out_len * width];
            for b in 0..batch {
                for o in 0..out_len {
                    let row = &mut cols[(b * out_len + o) * width..(b * out_len + o + 1) * width];
                    for kk in 0..k {
                        let pos = (o * s + kk) as isize - p as isize;
                        if pos < 0 || pos >= len as isize {
                            continue;
                        }
                        let src = &x.data()[(b * len + pos as usize) * ci..][..ci];
                        for (c, v) in src.iter().enumerate() {
                            row[c * k + kk] = *v;
                        }
                    }
                }
            }
            gemm(
                batch * out_len,
                width,
                co,
                &cols,
                false,
                self.kernel.data(),
                true,
                y.data_mut(),
                0.0,
            );
            Conv1dCache {
                batch,
                in_len: len,
                lhs: cols,
                kernel_t: Vec::new(),
                output: Tensor::zeros(&[0]),
            }
        } else {
            let kernel_t = self.transposed_kernel();
            let width = co * k;
            let mut contrib = vec![0.0; batch * len * width];
            gemm(
                batch * len,
                ci,
                width,
                x.data(),
                false,
                &kernel_t,
                false,
                &mut contrib,
                0.0,
            );
            let out = y.data_mut();
            for b in 0..batch {
                for i in 0..len {
                    let row = &contrib[(b * len + i) * width..(b * len + i + 1) * width];
                    for kk in 0..k {
                        let pos = (i * s + kk) as isize - p as isize;
                        if pos < 0 || pos >= out_len as isize {
                            continue;
                        }
                        let dst = &mut out[(b * out_len + pos as usize) * co..][..co];
                        for (c, d) in dst.iter_mut().enumerate() {
                            *d += row[c * k + kk];
                        }
                    }
                }
            }
            Conv1dCache {
                batch,
                in_len: len,
                lhs: x.data().to_vec(),
                kernel_t,
                output: Tensor::zeros(&[0]),
            }
        };
        add_row_bias(y.data_mut(), self.bias.data());
        self.activation.apply_in_place(y.data_mut());
        let mut cache = cache;
        cache.output = y.clone();
        Ok((y, cache))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// `[in, out * k]` with entry `(c_in, c_out * k + j) = kernel[c_out, c_in, j]`.
    fn transposed_kernel(&self) -> Vec<f64> {
        let (ci, co, k) = (self.in_channels(), self.out_channels(), self.kernel_len());
        let mut m = vec![0.0; ci * co * k];
        let w = self.kernel.data();
        for o in 0..co {
            for i in 0..ci {
                for j in 0..k {
                    m[i * co * k + o * k + j] = w[(o * ci + i) * k + j];
                }
            }
        }
        m
    }

    pub fn backward(&mut self, cache: &Conv1dCache, dy: &Tensor) -> Result<Tensor> {
        dy.expect_shape(cache.output.shape(), "conv upstream gradient")?;
        let (ci, co, k) = (self.in_channels(), self.out_channels(), self.kernel_len());
        let (s, p) = (self.stride, self.padding);
        let (batch, len) = (cache.batch, cache.in_len);
        let out_len = cache.output.dim(1);
        let mut dz = dy.clone();
        self.activation
            .backprop_in_place(cache.output.data(), dz.data_mut());
        accumulate_col_sums(self.bias.grad_mut(), dz.data());
        let mut dx = Tensor::zeros(&[batch, len, ci]);
        if !self.transposed {
            let width = ci * k;
            gemm(
                co,
                batch * out_len,
                width,
                dz.data(),
                true,
                &cache.lhs,
                false,
                self.kernel.grad_mut(),
                1.0,
            );
            let mut dcols = vec![0.0; batch * out_len * width];
            gemm(
                batch * out_len,
                co,
                width,
                dz.data(),
                false,
                self.kernel.data(),
                false,
                &mut dcols,
                0.0,
            );
            let dxd = dx.data_mut();
            for b in 0..batch {
                for o in 0..out_len {
                    let row = &dcols[(b * out_len + o) * width..(b * out_len + o + 1) * width];
                    for kk in 0..k {
                        let pos = (o * s + kk) as isize - p as isize;
                        if pos < 0 || pos >= len as isize {
                            continue;
                        }
                        let dst = &mut dxd[(b * len + pos as usize) * ci..][..ci];
                        for (c, d) in dst.iter_mut().enumerate() {
                            *d += row[c * k + kk];
                        }
                    }
                }
            }
        } else {
            let width = co * k;
            let mut dcontrib = vec![0.0; batch * len * width];
            let dzd = dz.data();
            for b in 0..batch {
                for i in 0..len {
                    let row = &mut dcontrib[(b * len + i) * width..(b * len + i + 1) * width];
                    for kk in 0..k {
                        let pos = (i * s + kk) as isize - p as isize;
                        if pos < 0 || pos >= out_len as isize {
                            continue;
                        }
                        let src = &dzd[(b * out_len + pos as usize) * co..][..co];
                        for (c, v) in src.iter().enumerate() {
                            row[c * k + kk] = *v;
                        }
                    }
                }
            }
            let mut dkt = vec![0.0; ci * width];
            gemm(ci, batch * len, width, &cache.lhs, true, &dcontrib, false, &mut dkt, 0.0);
            let g = self.kernel.grad_mut();
            for o in 0..co {
                for i in 0..ci {
                    for j in 0..k {
                        g[(o * ci + i) * k + j] += dkt[i * width + o * k + j];
                    }
                }
            }
            gemm(
                batch * len,
                width,
                ci,
                &dcontrib,
                false,
                &cache.kernel_t,
                true,
                dx.data_mut(),
                0.0,
            );
        }
        Ok(dx)
    }
}

impl Parameterized for Conv1d {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

fn single_sample(params: &Conv1d, input: &Tensor) -> Result<Tensor> {
    input.expect_rank(2, "conv input")?;
    let (len, ch) = (input.dim(0), input.dim(1));
    let x = input.clone().reshape(vec![1, len, ch])?;
    let y = params.infer(&x)?;
    let (out_len, out_ch) = (y.dim(1), y.dim(2));
    y.reshape(vec![out_len, out_ch])
}

/// Regular convolution of one `[L, in_channels]` sample.
pub fn conv1d_forward(params: &Conv1d, input: &Tensor) -> Result<Tensor> {
    if params.transposed {
        return Err(NnError::Argument(
            "conv1d_forward called with transposed parameters".into(),
        ));
    }
    single_sample(params, input)
}

/// Transposed convolution of one `[L, in_channels]` sample.
pub fn conv1d_transpose_forward(params: &Conv1d, input: &Tensor) -> Result<Tensor> {
    if !params.transposed {
        return Err(NnError::Argument(
            "conv1d_transpose_forward called with regular parameters".into(),
        ));
    }
    single_sample(params, input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ci: usize, co: usize, k: usize, s: usize, p: usize, t: bool) -> Conv1dSpec {
        Conv1dSpec {
            in_channels: ci,
            out_channels: co,
            kernel_len: k,
            stride: s,
            padding: p,
            transposed: t,
            activation: Activation::None,
        }
    }

    fn with_kernel(sp: Conv1dSpec, k: &[f64]) -> Conv1d {
        let mut c = Conv1d::zeroed(sp).unwrap();
        c.kernel.data_mut().copy_from_slice(k);
        c
    }

    fn column(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn difference_kernel() {
        let c = with_kernel(spec(1, 1, 3, 1, 0, false), &[1.0, 0.0, -1.0]);
        let y = conv1d_forward(&c, &column(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn identity_kernels() {
        let x = column(&[0.5, -1.0, 2.0, 7.0]);
        let c = with_kernel(spec(1, 1, 1, 1, 0, false), &[1.0]);
        assert_eq!(conv1d_forward(&c, &x).unwrap().data(), x.data());
        let t = with_kernel(spec(1, 1, 1, 1, 0, true), &[1.0]);
        assert_eq!(conv1d_transpose_forward(&t, &x).unwrap().data(), x.data());
    }

    #[test]
    fn output_length_formulae() {
        assert_eq!(conv_output_len(10, 3, 2, 1), Some(5));
        assert_eq!(conv_output_len(2, 3, 1, 0), None);
        assert_eq!(conv_transpose_output_len(5, 4, 2, 1), Some(10));
        assert_eq!(conv_transpose_output_len(2, 3, 2, 0), Some(5));
    }

    #[test]
    fn strided_transpose_sums_shifted_kernel_copies() {
        let t = with_kernel(spec(1, 1, 3, 2, 0, true), &[1.0, 2.0, 3.0]);
        let y = conv1d_transpose_forward(&t, &column(&[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 4.0, 2.0, 3.0]);
    }

    #[test]
    fn too_short_input_is_dimension_error() {
        let c = with_kernel(spec(1, 1, 3, 1, 0, false), &[1.0, 1.0, 1.0]);
        assert!(matches!(
            conv1d_forward(&c, &column(&[1.0, 2.0])),
            Err(NnError::Dimension(_))
        ));
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let c = with_kernel(spec(1, 1, 1, 1, 0, false), &[1.0]);
        assert!(conv1d_transpose_forward(&c, &column(&[1.0])).is_err());
        let t = with_kernel(spec(1, 1, 1, 1, 0, true), &[1.0]);
        assert!(conv1d_forward(&t, &column(&[1.0])).is_err());
    }
}

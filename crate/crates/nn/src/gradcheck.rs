//! Central finite-difference gradient checking.
//!
//! The harness perturbs parameters and inputs directly and only ever calls the
//! forward closure, so it stays independent of the analytic backward path it checks.

use crate::tensor::Tensor;
use crate::Parameterized;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients from
/// dominating on round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic parameter and input gradients against central differences.
///
/// `loss` evaluates the scalar objective. `backward` must zero, then fill, the
/// module's parameter gradients and return `dL/dinput`.
pub fn check_gradients<M: Parameterized>(
    module: &mut M,
    input: &Tensor,
    loss: impl Fn(&M, &Tensor) -> f64,
    backward: impl Fn(&mut M, &Tensor) -> Tensor,
) -> GradCheckReport {
    module.zero_grad();
    let d_input = backward(module, input);
    let analytic: Vec<Vec<f64>> = module
        .parameters()
        .iter()
        .map(|(_, t)| t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, g) in grads.iter().enumerate() {
            let original = module.parameters_mut()[pi].data()[i];
            module.parameters_mut()[pi].data_mut()[i] = original + FD_STEP;
            let up = loss(module, input);
            module.parameters_mut()[pi].data_mut()[i] = original - FD_STEP;
            let down = loss(module, input);
            module.parameters_mut()[pi].data_mut()[i] = original;
            worst = worst.max(relative_error(*g, (up - down) / (2.0 * FD_STEP)));
            count += 1;
        }
    }
    let mut probe = input.clone();
    for i in 0..input.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + FD_STEP;
        let up = loss(module, &probe);
        probe.data_mut()[i] = original - FD_STEP;
        let down = loss(module, &probe);
        probe.data_mut()[i] = original;
        worst = worst.max(relative_error(d_input.data()[i], (up - down) / (2.0 * FD_STEP)));
        count += 1;
    }
    GradCheckReport {
        max_rel_error: worst,
        entries_checked: count,
    }
}

/// Fixed projection `L = Σ r_i y_i` used to turn a tensor output into a scalar.
pub fn projection_loss(output: &Tensor, weights: &[f64]) -> f64 {
    output.data().iter().zip(weights).map(|(y, r)| y * r).sum()
}

use rand::Rng;

use crate::activation::Activation;
use crate::attention::Attention;
use crate::conv::{Conv1d, Conv1dSpec};
use crate::dense::Dense;
use crate::dropout::dropout_forward;
use crate::gru::Gru;
use crate::init::{seeded_rng, uniform};
use crate::lstm::Lstm;

/// Outcome of checking one layer kind over several random shapes.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub shapes: usize,
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

fn split_steps(x: &Tensor) -> Vec<Tensor> {
    let (steps, batch, feat) = (x.dim(0), x.dim(1), x.dim(2));
    (0..steps)
        .map(|t| {
            let chunk = x.data()[t * batch * feat..(t + 1) * batch * feat].to_vec();
            Tensor::new(vec![batch, feat], chunk).expect("step slice")
        })
        .collect()
}

fn join_steps(xs: &[Tensor]) -> Tensor {
    let (batch, feat) = (xs[0].dim(0), xs[0].dim(1));
    let data = xs.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![xs.len(), batch, feat], data).expect("joined steps")
}

fn random_weights(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

const SMOOTH: [Activation; 3] = [Activation::None, Activation::Tanh, Activation::Sigmoid];

fn perturb_biases(t: &mut Tensor, rng: &mut impl Rng) {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-0.5..0.5));
}

pub fn check_dense(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let (batch, inputs, outputs) = (
        rng.random_range(1..4),
        rng.random_range(1..9),
        rng.random_range(1..9),
    );
    let act = SMOOTH[rng.random_range(0..SMOOTH.len())];
    let mut layer = Dense::new(inputs, outputs, act, &mut rng);
    perturb_biases(&mut layer.bias, &mut rng);
    let x = uniform(&[batch, inputs], 1.0, &mut rng);
    let r = random_weights(batch * outputs, &mut rng);
    check_gradients(
        &mut layer,
        &x,
        |m, x| projection_loss(&m.infer(x).unwrap(), &r),
        |m, x| {
            let (y, cache) = m.forward(x).unwrap();
            let dy = Tensor::new(y.shape().to_vec(), r.clone()).unwrap();
            m.backward(&cache, &dy).unwrap()
        },
    )
}

pub fn check_gru(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let (steps, batch, inputs, hidden) = (
        rng.random_range(1..5),
        rng.random_range(1..3),
        rng.random_range(1..4),
        rng.random_range(1..6),
    );
    let mut cell = Gru::new(inputs, hidden, &mut rng);
    for b in [&mut cell.b_z, &mut cell.b_r, &mut cell.b_h] {
        perturb_biases(b, &mut rng);
    }
    let h0 = uniform(&[batch, hidden], 0.5, &mut rng);
    let x = uniform(&[steps, batch, inputs], 1.0, &mut rng);
    let r = random_weights(steps * batch * hidden, &mut rng);
    check_gradients(
        &mut cell,
        &x,
        |m, x| {
            let (hs, _) = m.forward(&split_steps(x), &h0).unwrap();
            projection_loss(&join_steps(&hs), &r)
        },
        |m, x| {
            let (hs, cache) = m.forward(&split_steps(x), &h0).unwrap();
            let d = split_steps(&Tensor::new(join_steps(&hs).shape().to_vec(), r.clone()).unwrap());
            let (dxs, _) = m.backward(&cache, &d).unwrap();
            join_steps(&dxs)
        },
    )
}

pub fn check_lstm(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let (steps, batch, inputs, hidden) = (
        rng.random_range(1..5),
        rng.random_range(1..3),
        rng.random_range(1..4),
        rng.random_range(1..6),
    );
    let mut cell = Lstm::new(inputs, hidden, &mut rng);
    for b in [&mut cell.b_i, &mut cell.b_f, &mut cell.b_o, &mut cell.b_g] {
        perturb_biases(b, &mut rng);
    }
    let h0 = uniform(&[batch, hidden], 0.5, &mut rng);
    let c0 = uniform(&[batch, hidden], 0.5, &mut rng);
    let x = uniform(&[steps, batch, inputs], 1.0, &mut rng);
    let r = random_weights(steps * batch * hidden, &mut rng);
    check_gradients(
        &mut cell,
        &x,
        |m, x| {
            let (hs, _, _) = m.forward(&split_steps(x), &h0, &c0).unwrap();
            projection_loss(&join_steps(&hs), &r)
        },
        |m, x| {
            let (hs, _, cache) = m.forward(&split_steps(x), &h0, &c0).unwrap();
            let d = split_steps(&Tensor::new(join_steps(&hs).shape().to_vec(), r.clone()).unwrap());
            join_steps(&m.backward(&cache, &d).unwrap())
        },
    )
}

pub fn check_attention(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let (steps, batch, dim) = (
        rng.random_range(1..6),
        rng.random_range(1..3),
        rng.random_range(1..6),
    );
    check_attention_shape(seed, steps, batch, dim)
}

/// Attention check at an explicit shape.
pub fn check_attention_shape(seed: u64, steps: usize, batch: usize, dim: usize) -> GradCheckReport {
    let mut rng = seeded_rng(seed ^ 0xa77e);
    let mut att = Attention::new(dim, &mut rng);
    let x = uniform(&[steps, batch, dim], 1.0, &mut rng);
    let r = random_weights(batch * dim, &mut rng);
    check_gradients(
        &mut att,
        &x,
        |m, x| projection_loss(&m.forward(&split_steps(x)).unwrap().0, &r),
        |m, x| {
            let (c, _, cache) = m.forward(&split_steps(x)).unwrap();
            let dc = Tensor::new(c.shape().to_vec(), r.clone()).unwrap();
            join_steps(&m.backward(&cache, &dc).unwrap())
        },
    )
}

fn check_conv_kind(seed: u64, transposed: bool) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let kernel_len = rng.random_range(1..5);
    let stride = rng.random_range(1..4);
    let padding = rng.random_range(0..kernel_len);
    let spec = Conv1dSpec {
        in_channels: rng.random_range(1..5),
        out_channels: rng.random_range(1..5),
        kernel_len,
        stride,
        padding,
        transposed,
        activation: SMOOTH[rng.random_range(0..SMOOTH.len())],
    };
    let mut layer = Conv1d::new(spec, &mut rng).expect("valid spec");
    perturb_biases(&mut layer.bias, &mut rng);
    let mut len = rng.random_range(1..11);
    while layer.output_len(len).is_none() {
        len += 1;
    }
    let batch = rng.random_range(1..3);
    let x = uniform(&[batch, len, spec.in_channels], 1.0, &mut rng);
    let out_len = layer.output_len(len).unwrap();
    let r = random_weights(batch * out_len * spec.out_channels, &mut rng);
    check_gradients(
        &mut layer,
        &x,
        |m, x| projection_loss(&m.infer(x).unwrap(), &r),
        |m, x| {
            let (y, cache) = m.forward(x).unwrap();
            let dy = Tensor::new(y.shape().to_vec(), r.clone()).unwrap();
            m.backward(&cache, &dy).unwrap()
        },
    )
}

pub fn check_conv(seed: u64) -> GradCheckReport {
    check_conv_kind(seed, false)
}

pub fn check_conv_transpose(seed: u64) -> GradCheckReport {
    check_conv_kind(seed, true)
}

/// Dense layer followed by dropout, checked both in inference mode and with a
/// fixed training mask.
pub fn check_dropout(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let (batch, inputs, outputs) = (
        rng.random_range(1..4),
        rng.random_range(1..7),
        rng.random_range(1..7),
    );
    let training = seed % 2 == 1;
    let rate = 0.3;
    let mut layer = Dense::new(inputs, outputs, Activation::Tanh, &mut rng);
    let x = uniform(&[batch, inputs], 1.0, &mut rng);
    let r = random_weights(batch * outputs, &mut rng);
    let mask_seed = seed.wrapping_add(1000);
    check_gradients(
        &mut layer,
        &x,
        |m, x| {
            let y = m.infer(x).unwrap();
            let (y, _) = dropout_forward(&y, rate, training, &mut seeded_rng(mask_seed)).unwrap();
            projection_loss(&y, &r)
        },
        |m, x| {
            let (y, cache) = m.forward(x).unwrap();
            let (y, mask) = dropout_forward(&y, rate, training, &mut seeded_rng(mask_seed)).unwrap();
            let mut dy = Tensor::new(y.shape().to_vec(), r.clone()).unwrap();
            if let Some(mask) = mask {
                dy = mask.backward(&dy).unwrap();
            }
            m.backward(&cache, &dy).unwrap()
        },
    )
}

/// Runs every layer kind over `shapes` seeded random configurations.
pub fn run_layer_suite(shapes: usize) -> Vec<LayerCheck> {
    type Checker = fn(u64) -> GradCheckReport;
    let checks: [(&'static str, Checker); 7] = [
        ("dense", check_dense),
        ("gru", check_gru),
        ("lstm", check_lstm),
        ("conv1d", check_conv),
        ("conv1d_transpose", check_conv_transpose),
        ("attention", check_attention),
        ("dropout", check_dropout),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let reports: Vec<GradCheckReport> = (0..shapes as u64).map(f).collect();
            LayerCheck {
                layer: name,
                shapes,
                max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
                entries_checked: reports.iter().map(|r| r.entries_checked).sum(),
            }
        })
        .collect()
}

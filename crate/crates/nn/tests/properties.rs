use laserpm_nn::{
    attention_forward, init::uniform, seeded_rng, softmax, Activation, Adam, Attention, Conv1d,
    Conv1dSpec, Dense, Gru, Loss, ModelBundle, Parameterized, Tensor,
};
use proptest::prelude::*;
use rand::Rng;

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Kernel of the adjoint map: `[out, in, k]` → `[in, out, k]`.
fn swap_channels(k: &Tensor) -> Tensor {
    let (co, ci, kl) = (k.dim(0), k.dim(1), k.dim(2));
    let mut t = Tensor::zeros(&[ci, co, kl]);
    for o in 0..co {
        for i in 0..ci {
            for j in 0..kl {
                t.data_mut()[(i * co + o) * kl + j] = k.data()[(o * ci + i) * kl + j];
            }
        }
    }
    t
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let len = 10;
    let mut seed = 0u64;
    let mut checked = 0;
    while checked < 20 {
        seed += 1;
        let mut rng = seeded_rng(seed);
        let kernel_len = rng.random_range(1..5);
        let spec = Conv1dSpec {
            in_channels: rng.random_range(1..4),
            out_channels: rng.random_range(1..4),
            kernel_len,
            stride: rng.random_range(1..4),
            padding: rng.random_range(0..kernel_len),
            transposed: false,
            activation: Activation::None,
        };
        // Without an output-padding term the transpose only recovers length `len`
        // when the strided windows tile the padded input exactly.
        if !(len + 2 * spec.padding - spec.kernel_len).is_multiple_of(spec.stride) {
            continue;
        }
        checked += 1;
        let conv = Conv1d::new(spec, &mut rng).unwrap();
        let out_len = conv.output_len(len).unwrap();
        let mut adj = Conv1d::zeroed(Conv1dSpec {
            in_channels: spec.out_channels,
            out_channels: spec.in_channels,
            transposed: true,
            ..spec
        })
        .unwrap();
        adj.kernel = swap_channels(&conv.kernel);

        let x = uniform(&[1, len, spec.in_channels], 1.0, &mut rng);
        let y = uniform(&[1, out_len, spec.out_channels], 1.0, &mut rng);
        let cx = conv.infer(&x).unwrap();
        let aty = adj.infer(&y).unwrap();
        assert_eq!(aty.shape(), x.shape());
        let (lhs, rhs) = (inner(&cx, &y), inner(&x, &aty));
        assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
    }
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        z in proptest::collection::vec(-50.0f64..50.0, 1..12),
        shift in -500.0f64..500.0,
    ) {
        let s = softmax(&Tensor::vector(z.clone())).unwrap();
        let sum: f64 = s.data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(s.data().iter().all(|p| *p >= 0.0));
        let shifted = softmax(&Tensor::vector(z.iter().map(|v| v + shift).collect())).unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_is_permutation_equivariant(
        z in proptest::collection::vec(-20.0f64..20.0, 2..10),
        rot in 0usize..10,
    ) {
        let k = rot % z.len();
        let mut rotated = z.clone();
        rotated.rotate_left(k);
        let a = softmax(&Tensor::vector(z)).unwrap();
        let b = softmax(&Tensor::vector(rotated)).unwrap();
        let mut a_rot = a.data().to_vec();
        a_rot.rotate_left(k);
        for (x, y) in a_rot.iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn attention_context_in_convex_hull(seed in 0u64..1000, k in 1usize..8, dim in 1usize..6) {
        let mut rng = seeded_rng(seed);
        let att = Attention::new(dim, &mut rng);
        let h = uniform(&[k, dim], 3.0, &mut rng);
        let (c, a) = attention_forward(&att, &h).unwrap();
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..dim {
            let col: Vec<f64> = (0..k).map(|i| h.row(i)[j]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c.data()[j] >= lo - 1e-12 && c.data()[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn gru_states_bounded(seed in 0u64..1000, steps in 1usize..10, scale in 0.1f64..20.0) {
        let mut rng = seeded_rng(seed);
        let cell = Gru::new(1, 5, &mut rng);
        let xs: Vec<Tensor> = (0..steps)
            .map(|_| uniform(&[1, 1], scale, &mut rng))
            .collect();
        let (hs, _) = cell.forward(&xs, &Tensor::zeros(&[1, 5])).unwrap();
        prop_assert!(hs.iter().flat_map(|h| h.data()).all(|v| v.abs() < 1.0));
    }

    #[test]
    fn bundle_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..40)) {
        let t = Tensor::vector(values.clone());
        let mut b = ModelBundle::new("probe", 7);
        b.insert_tensor("t", &t);
        let back = ModelBundle::from_json(&b.to_json().unwrap()).unwrap().tensor("t").unwrap();
        let bits: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

fn train_steps(seed: u64, steps: usize) -> Dense {
    let mut rng = seeded_rng(seed);
    let mut layer = Dense::new(3, 2, Activation::Tanh, &mut rng);
    let mut opt = Adam::new(0.01);
    let x = uniform(&[4, 3], 1.0, &mut rng);
    let target = uniform(&[4, 2], 0.5, &mut rng);
    for _ in 0..steps {
        layer.zero_grad();
        let (y, cache) = layer.forward(&x).unwrap();
        let dy = Loss::Mse.gradient(&y, &target).unwrap();
        layer.backward(&cache, &dy).unwrap();
        opt.step(&mut layer.parameters_mut()).unwrap();
    }
    layer
}

#[test]
fn training_is_bit_deterministic() {
    let a = train_steps(17, 50);
    let b = train_steps(17, 50);
    let bits = |d: &Dense| {
        d.parameters()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&train_steps(18, 50)));
}

#[test]
fn bundle_export_import_restores_module() {
    let trained = train_steps(3, 10);
    let mut bundle = ModelBundle::new("dense", 3);
    bundle.export("head", &trained);
    let restored = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    let mut fresh = Dense::zeroed(3, 2, Activation::Tanh);
    restored.import("head", &mut fresh).unwrap();
    assert_eq!(fresh.weight.data(), trained.weight.data());
    assert_eq!(fresh.bias.data(), trained.bias.data());
}

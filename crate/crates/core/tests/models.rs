use laserpm_core::datagen::{
    detect_windows, first_windows, simulate_corpus, stat_features, DetectSample, DetectSelection,
    ForecastSample, RulSample, SimulatorConfig,
};
use laserpm_core::models::autoencoder::AutoencoderConfig;
use laserpm_core::models::forecaster::ForecasterConfig;
use laserpm_core::models::{
    classify, AnomalyVerdict, Autoencoder, Forecaster, Gan, GanConfig, RulConfig, RulModel,
    TrainConfig,
};
use laserpm_core::Error;
use laserpm_nn::{seeded_rng, Loss, ModelBundle, Parameterized, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn fsample(inputs: Vec<f64>, targets: Vec<f64>) -> ForecastSample {
    ForecastSample {
        device_id: "d".into(),
        offset: 0,
        inputs,
        targets,
    }
}

fn ramp_samples(n: usize, horizon: usize) -> Vec<ForecastSample> {
    let mut rng = seeded_rng(3);
    (0..n)
        .map(|_| {
            let start: f64 = rng.random_range(1.0..1.1);
            let slope: f64 = rng.random_range(0.0..0.02);
            let v: Vec<f64> = (0..9 + horizon).map(|k| start + slope * k as f64).collect();
            fsample(v[..9].to_vec(), v[9..].to_vec())
        })
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn forecaster_learns_constant_trace() {
    let samples = vec![fsample(vec![1.0; 9], vec![1.0]); 32];
    let mut m = Forecaster::new(ForecasterConfig::default(), 1).unwrap();
    let report = m.train(&samples, &quick(200)).unwrap();
    let last = report.history.last().unwrap().train_loss;
    assert!(last < 1e-4, "final mse {last}");
    let p = m.predict(&[1.0; 9]).unwrap();
    assert!((p[0] - 1.0).abs() < 0.01, "{p:?}");
}

#[test]
fn forecaster_overfits_single_sample() {
    let samples = ramp_samples(1, 1);
    let mut m = Forecaster::new(ForecasterConfig::default(), 2).unwrap();
    let h = m.train(&samples, &quick(50)).unwrap().history;
    assert_eq!(h.len(), 50);
    let head: f64 = h[..10].iter().map(|e| e.train_loss).sum();
    let tail: f64 = h[40..].iter().map(|e| e.train_loss).sum();
    assert!(tail < head, "head {head} tail {tail}");
    assert!(h.iter().all(|e| e.val_loss.is_none()));
}

#[test]
fn forecaster_training_is_deterministic() {
    let samples = ramp_samples(40, 1);
    let run = || {
        let mut m = Forecaster::new(ForecasterConfig::default(), 5).unwrap();
        let r = m.train(&samples, &quick(5)).unwrap();
        (r.history, m.predict(&samples[0].inputs).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn forecaster_final_loss_not_above_initial() {
    let samples = ramp_samples(64, 1);
    let mut m = Forecaster::new(ForecasterConfig::default(), 9).unwrap();
    let h = m.train(&samples, &quick(30)).unwrap().history;
    assert!(h.last().unwrap().train_loss <= h[0].train_loss);
}

#[test]
fn forecaster_horizons_and_recursion() {
    let mut two = Forecaster::new(ForecasterConfig::with_horizon(2), 1).unwrap();
    two.train(&ramp_samples(40, 2), &quick(2)).unwrap();
    assert_eq!(two.predict(&[1.0; 9]).unwrap().len(), 2);

    let mut one = Forecaster::new(ForecasterConfig::default(), 1).unwrap();
    one.train(&ramp_samples(40, 1), &quick(2)).unwrap();
    let start: Vec<f64> = (0..9).map(|k| 1.0 + 0.01 * k as f64).collect();
    let mut window = start.clone();
    let mut manual = Vec::new();
    for _ in 0..3 {
        let p = one.predict(&window).unwrap()[0];
        manual.push(p);
        window.remove(0);
        window.push(p);
    }
    assert_eq!(one.predict_recursive(&start, 3).unwrap(), manual);
}

#[test]
fn forecaster_rejects_wrong_window_and_untrained_use() {
    let m = Forecaster::new(ForecasterConfig::default(), 1).unwrap();
    assert!(matches!(m.predict(&[1.0; 9]), Err(Error::State(_))));
    let mut m = m;
    let bad = vec![fsample(vec![1.0; 8], vec![1.0])];
    assert!(matches!(m.train(&bad, &quick(1)), Err(Error::Shape(_))));
}

#[test]
fn forecaster_bundle_round_trip() {
    let mut m = Forecaster::new(ForecasterConfig::default(), 4).unwrap();
    m.train(&ramp_samples(20, 1), &quick(3)).unwrap();
    let json = m.to_bundle().unwrap().to_json().unwrap();
    let back = Forecaster::from_bundle(&ModelBundle::from_json(&json).unwrap()).unwrap();
    let w = [1.0, 1.01, 1.02, 1.03, 1.04, 1.05, 1.06, 1.07, 1.08];
    assert_eq!(m.predict(&w).unwrap(), back.predict(&w).unwrap());
    assert_eq!(back.to_bundle().unwrap().to_json().unwrap(), json);
}

#[test]
fn parameter_counts_match_hand_totals() {
    // GRU(i, h) = 3(h(i + h) + h); attention(d) = d² + d; conv = k·i·o + o.
    let gru = |i: usize, h: usize| 3 * (h * (i + h) + h);
    let lstm = |i: usize, h: usize| 4 * (h * (i + h) + h);
    let conv = |k: usize, i: usize, o: usize| k * i * o + o;
    let dense = |i: usize, o: usize| i * o + o;

    let fc = Forecaster::new(ForecasterConfig::default(), 0).unwrap();
    assert_eq!(fc.parameter_count(), gru(1, 64) + gru(64, 32) + 32 * 32 + 32 + dense(32, 1));
    assert_eq!(fc.parameter_count(), 23073);
    let fc2 = Forecaster::new(ForecasterConfig::with_horizon(2), 0).unwrap();
    assert_eq!(fc2.parameter_count(), 23073 + 33);

    let ae = Autoencoder::new(AutoencoderConfig::default(), 0).unwrap();
    let encoder = conv(3, 1, 32) + conv(3, 32, 16) + conv(3, 16, 32);
    let decoder = conv(4, 32, 32) + conv(3, 32, 16) + conv(3, 16, 32) + conv(3, 32, 1);
    assert_eq!(ae.parameter_count(), encoder + decoder);
    assert_eq!(ae.parameter_count(), 10593);

    let full = RulModel::new(RulConfig::default(), 0).unwrap();
    assert_eq!(
        full.parameter_count(),
        gru(1, 64) + gru(64, 32) + 32 * 32 + 32 + dense(3, 32) + dense(64, 32) + dense(32, 1)
    );
    assert_eq!(full.parameter_count(), 25281);
    let plain = RulModel::new(RulConfig::plain_gru(), 0).unwrap();
    assert_eq!(plain.parameter_count(), gru(1, 64) + gru(64, 32) + dense(32, 32) + dense(32, 1));
    let attn = RulModel::new(RulConfig::attention_only(), 0).unwrap();
    assert_eq!(attn.parameter_count(), plain.parameter_count() + 32 * 32 + 32);

    let gan = Gan::new(GanConfig::default()).unwrap();
    let generator = lstm(1, 8) + conv(3, 8, 32) + conv(3, 32, 16) + conv(3, 16, 16) + conv(3, 16, 1);
    assert_eq!(gan.generator.parameter_count(), generator);
    assert_eq!(gan.generator.parameter_count(), 3505);
    let disc = conv(3, 1, 32) + 2 * conv(3, 32, 32) + dense(32 * 10 + 1, 1);
    assert_eq!(gan.discriminator.parameter_count(), disc);
    assert_eq!(gan.discriminator.parameter_count(), 6658);
}

fn normal_windows(n: usize) -> Vec<DetectSample> {
    let corpus = simulate_corpus(&SimulatorConfig {
        device_count: n,
        ..SimulatorConfig::default()
    })
    .unwrap();
    detect_windows(&corpus, 10, DetectSelection::NormalOnly).unwrap().samples
}

#[test]
fn autoencoder_output_shape_and_score_definition() {
    let mut ae = Autoencoder::new(AutoencoderConfig::default(), 3).unwrap();
    ae.train(&normal_windows(30), &quick(2)).unwrap();
    let mut rng = seeded_rng(8);
    for _ in 0..20 {
        let w: Vec<f64> = (0..10).map(|_| rng.random_range(0.8..1.5)).collect();
        let recon = ae.reconstruct_batch(&[&w]).unwrap();
        assert_eq!(recon.len(), 1);
        assert_eq!(recon[0].len(), 10);
        let expected = Loss::Mae
            .value(
                &Tensor::vector(recon[0].clone()),
                &Tensor::vector(w.clone()),
            )
            .unwrap();
        let score = ae.anomaly_score(&w).unwrap();
        assert!((score - expected).abs() < 1e-15);
        assert!(score >= 0.0);
    }
    assert!(matches!(ae.anomaly_score(&[1.0; 9]), Err(Error::Shape(_))));
}

#[test]
fn autoencoder_refuses_anomalous_windows() {
    let mut samples = normal_windows(5);
    samples[0].anomalous = true;
    let mut ae = Autoencoder::new(AutoencoderConfig::default(), 3).unwrap();
    assert!(matches!(ae.train(&samples, &quick(1)), Err(Error::Data(_))));
}

#[test]
fn autoencoder_separates_simulated_anomalies() {
    let corpus = simulate_corpus(&SimulatorConfig {
        device_count: 120,
        seed: 21,
        ..SimulatorConfig::default()
    })
    .unwrap();
    let train = detect_windows(&corpus, 10, DetectSelection::NormalOnly).unwrap().samples;
    let mut ae = Autoencoder::new(AutoencoderConfig::default(), 3).unwrap();
    ae.train(&train, &quick(60)).unwrap();
    let test = simulate_corpus(&SimulatorConfig {
        device_count: 120,
        seed: 22,
        ..SimulatorConfig::default()
    })
    .unwrap();
    let labeled = detect_windows(&test, 10, DetectSelection::Labeled).unwrap().samples;
    let score = |anomalous: bool| {
        let w: Vec<&[f64]> = labeled
            .iter()
            .filter(|s| s.anomalous == anomalous)
            .map(|s| s.values.as_slice())
            .collect();
        let mut s = ae.score_batch(&w).unwrap();
        s.sort_by(f64::total_cmp);
        (s.iter().sum::<f64>() / s.len() as f64, s[s.len() / 2])
    };
    let (mean_n, med_n) = score(false);
    let (mean_a, med_a) = score(true);
    assert!(mean_n < mean_a);
    assert!(med_a / med_n > 1.5, "median ratio {}", med_a / med_n);
}

#[test]
fn classify_boundaries() {
    let mut ae = Autoencoder::new(AutoencoderConfig::default(), 3).unwrap();
    ae.train(&normal_windows(10), &quick(1)).unwrap();
    assert!(AnomalyVerdict::new(0.03, 0.019).is_anomalous);
    assert!(!AnomalyVerdict::new(0.019, 0.019).is_anomalous);
    let w = [1.0, 1.0, 1.01, 1.01, 1.02, 1.02, 1.03, 1.03, 1.04, 1.2];
    let score = ae.anomaly_score(&w).unwrap();
    assert!(!classify(&ae, &w, score).unwrap().is_anomalous);
    assert!(!classify(&ae, &w, f64::INFINITY).unwrap().is_anomalous);
    assert!(classify(&ae, &w, score * 0.5).unwrap().is_anomalous);
}

proptest! {
    #[test]
    fn verdict_is_strict_comparison(score in 0.0f64..1.0, theta in 0.0f64..1.0) {
        let v = AnomalyVerdict::new(score, theta);
        prop_assert_eq!(v.is_anomalous, score > theta);
        prop_assert_eq!(v.score, score);
        prop_assert_eq!(v.threshold, theta);
    }
}

fn affine_rms_set(n: usize) -> Vec<RulSample> {
    let mut rng = seeded_rng(17);
    (0..n)
        .map(|_| {
            let level: f64 = rng.random_range(1.0..1.3);
            let values: Vec<f64> = (0..10).map(|_| level + rng.random_range(-0.002..0.002)).collect();
            let stats = stat_features(&values).unwrap();
            RulSample {
                device_id: "d".into(),
                offset: 0,
                rul_h: 3000.0 - 10000.0 * (stats.rms - 1.0),
                values,
                stats,
                end_time_h: 0.0,
            }
        })
        .collect()
}

#[test]
fn rul_fits_affine_function_of_rms() {
    let train = affine_rms_set(256);
    let test = affine_rms_set(64);
    let mut m = RulModel::new(RulConfig::default(), 4).unwrap();
    m.train(
        &train,
        &TrainConfig {
            epochs: 500,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let labels: Vec<f64> = test.iter().map(|s| s.rul_h).collect();
    let (lo, hi) = labels.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    let mut sq = 0.0;
    let mut within = 0;
    for s in &test {
        let p = m.predict(&s.values, &s.stats).unwrap();
        sq += (p - s.rul_h).powi(2);
        if (p - s.rul_h).abs() <= 0.1 * s.rul_h.abs().max(hi - lo) {
            within += 1;
        }
    }
    let rmse = (sq / test.len() as f64).sqrt();
    assert!(rmse < 0.05 * (hi - lo), "rmse {rmse} range {}", hi - lo);
    assert_eq!(within, test.len());
}

#[test]
fn rul_ablations_train_and_are_deterministic() {
    let data = affine_rms_set(48);
    for cfg in [RulConfig::plain_gru(), RulConfig::attention_only(), RulConfig::default()] {
        let run = || {
            let mut m = RulModel::new(cfg, 6).unwrap();
            let h = m.train(&data, &quick(3)).unwrap().history;
            let p = m.predict(&data[0].values, &data[0].stats).unwrap();
            (h, p, m.predict(&data[0].values, &data[0].stats).unwrap())
        };
        let (h1, p1, p1b) = run();
        let (h2, p2, _) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(p1, p1b);
    }
}

#[test]
fn rul_rejects_negative_labels_and_clamps_output() {
    let mut data = affine_rms_set(12);
    data[3].rul_h = -1.0;
    let mut m = RulModel::new(RulConfig::default(), 1).unwrap();
    assert!(matches!(m.train(&data, &quick(1)), Err(Error::Data(_))));

    data[3].rul_h = 10.0;
    m.train(&data, &quick(1)).unwrap();
    let mut params = m.parameters_mut();
    let bias = params.pop().unwrap();
    bias.data_mut().fill(-1e6);
    let weight = params.pop().unwrap();
    weight.data_mut().fill(0.0);
    assert_eq!(m.predict(&data[0].values, &data[0].stats).unwrap(), 0.0);
}

#[test]
fn gan_zero_discriminator_gives_ln2_losses() {
    let mut gan = Gan::new(GanConfig::default()).unwrap();
    for p in gan.discriminator.parameters_mut() {
        p.data_mut().fill(0.0);
    }
    let windows = vec![vec![1.0; 10], (0..10).map(|k| 1.0 + 0.01 * k as f64).collect()];
    let probs = gan.discriminate(&windows).unwrap();
    assert!(probs.iter().all(|p| *p == 0.5));
    let p = Tensor::vector(probs);
    let ln2 = std::f64::consts::LN_2;
    let real = Loss::Bce.value(&p, &Tensor::filled(&[2], 1.0)).unwrap();
    let fake = Loss::Bce.value(&p, &Tensor::filled(&[2], 0.0)).unwrap();
    assert!((real - ln2).abs() < 1e-9 && (fake - ln2).abs() < 1e-9);
}

#[test]
fn generator_output_shape_is_fixed() {
    let gan = Gan::new(GanConfig::default()).unwrap();
    let mut rng = seeded_rng(2);
    for batch in [1, 3, 17] {
        let noise: Vec<Tensor> = (0..gan.config.noise_len())
            .map(|_| Tensor::new(vec![batch, 1], (0..batch).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        let (y, _) = gan.generator.forward(&noise).unwrap();
        assert_eq!(y.shape(), &[batch, 10, 1]);
    }
}

#[test]
fn generator_gradient_reaches_nearly_all_parameters() {
    let mut gan = Gan::new(GanConfig::default()).unwrap();
    gan.generator.zero_grad();
    gan.generator_backward(32, &mut seeded_rng(4)).unwrap();
    let (mut nonzero, mut total) = (0, 0);
    for (_, t) in gan.generator.parameters() {
        let g = t.grad().expect("gradient buffer");
        nonzero += g.iter().filter(|v| **v != 0.0).count();
        total += g.len();
    }
    assert!(nonzero as f64 >= 0.99 * total as f64, "{nonzero}/{total}");
}

#[test]
fn gan_train_generate_contracts() {
    assert!(matches!(Gan::new(GanConfig::default()).unwrap().train(&[]), Err(Error::Argument(_))));
    let untrained = Gan::new(GanConfig::default()).unwrap();
    assert!(matches!(untrained.generate(3, 1), Err(Error::State(_))));

    let corpus = simulate_corpus(&SimulatorConfig {
        device_count: 40,
        ..SimulatorConfig::default()
    })
    .unwrap();
    let real = first_windows(&corpus, 10).unwrap().samples;
    let cfg = GanConfig {
        epochs: 3,
        ..GanConfig::default()
    };
    let train = || {
        let mut g = Gan::new(cfg).unwrap();
        let r = g.train(&real).unwrap();
        (g, r)
    };
    let (g1, r1) = train();
    let (g2, r2) = train();
    assert_eq!(r1, r2);
    assert_eq!(r1.history.len(), 3);
    assert!(r1.loss_csv().starts_with("epoch,d_loss,g_loss\n"));
    assert!(g1.generate(0, 5).unwrap().is_empty());
    let a = g1.generate(300, 5).unwrap();
    assert_eq!(a, g2.generate(300, 5).unwrap());
    assert_ne!(a, g1.generate(300, 6).unwrap());
    assert_eq!(a.len(), 300);
    assert!(a.iter().all(|w| w.len() == 10 && w.iter().all(|v| v.is_finite())));
    assert!(g1.discriminate(&real).unwrap().iter().all(|p| *p > 0.0 && *p < 1.0));

    let json = g1.to_bundle().unwrap().to_json().unwrap();
    let back = Gan::from_bundle(&ModelBundle::from_json(&json).unwrap()).unwrap();
    assert_eq!(back.generate(50, 5).unwrap(), g1.generate(50, 5).unwrap());
}

use palmpipe_core::cnn::*;
use palmpipe_core::pipeline::{Pipeline, PipelineMode};
use palmpipe_core::sensor::{generate_dataset, sample_rng, synth_frame, Dataset, GripSample, SimConfig};
use palmpipe_core::types::{AngleClass, PatternId, PositionClass};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig { conv1_channels: 2, conv2_channels: 3, head_widths: vec![6, 5, 4], ..Default::default() }
}

fn random_batch(n: usize, seed: u64) -> Vec<GripSample> {
    let sim = SimConfig { noise_sigma: 0.5, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = PatternId::new(rng.random_range(0..12)).unwrap();
            let step = rng.random_range(5..=30);
            let frame = synth_frame(id.angle(), id.position(), step, &sim, &mut sample_rng(seed, i as u64)).unwrap();
            GripSample { frame, angle: id.angle(), position: id.position(), grip_step: step }
        })
        .collect()
}

/// Model with non-trivial batch-norm affine parameters and biases.
fn perturbed_model(seed: u64) -> ModelParams {
    let mut p = ModelParams::init(&small_config(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
    for t in p.trainable_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    p
}

#[test]
fn analytic_gradients_match_central_differences() {
    let samples = random_batch(6, 11);
    let refs: Vec<&GripSample> = samples.iter().collect();
    let p = perturbed_model(5);
    let (_, grads) = loss_and_gradients(&p, &refs).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let names: Vec<String> = p.trainable().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        for k in 0..grads.tensors[ti].len() {
            let mut plus = p.clone();
            plus.trainable_mut()[ti].data_mut()[k] += h;
            let mut minus = p.clone();
            minus.trainable_mut()[ti].data_mut()[k] -= h;
            let lp = loss_and_gradients(&plus, &refs).unwrap().0;
            let lm = loss_and_gradients(&minus, &refs).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.tensors[ti].data()[k];
            // The floor only matters for gradients that vanish analytically
            // (biases feeding batch norm), where differences are pure rounding.
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "{name}[{k}]: analytic {analytic:e}, numeric {numeric:e}");
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn duplicated_batch_leaves_gradients_unchanged() {
    let samples = random_batch(4, 3);
    let once: Vec<&GripSample> = samples.iter().collect();
    let twice: Vec<&GripSample> = samples.iter().chain(&samples).collect();
    let p = perturbed_model(1);
    let (l1, g1) = loss_and_gradients(&p, &once).unwrap();
    let (l2, g2) = loss_and_gradients(&p, &twice).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn loss_matches_naive_log_sum_exp() {
    let samples = random_batch(5, 8);
    let refs: Vec<&GripSample> = samples.iter().collect();
    let p = perturbed_model(2);
    let frames: Vec<_> = refs.iter().map(|s| &s.frame).collect();
    let logits = p.forward_train_pure(&frames_to_tensor(&frames)).unwrap().0;
    let naive = |t: &Tensor, labels: Vec<usize>| -> f64 {
        let n = labels.len();
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = t.row(i);
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[y].exp() / z).ln()
            })
            .sum::<f64>()
            / n as f64
    };
    let want = naive(&logits.angle, refs.iter().map(|s| s.angle.index()).collect())
        + naive(&logits.position, refs.iter().map(|s| s.position.index()).collect());
    let got = loss_and_gradients(&p, &refs).unwrap().0;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

/// One input channel on a 2×2 grid, one conv channel per layer and a single
/// affine layer per head, with every weight chosen by hand.
#[test]
fn tiny_network_hand_computed() {
    let cfg = ModelConfig { in_channels: 1, height: 2, width: 2, conv1_channels: 1, conv2_channels: 1, head_widths: vec![] };
    let mut p = ModelParams::init(&cfg, 0);
    // conv1: all-ones kernel, bias 0.5. With padding every output sees all
    // four inputs, so each cell is sum(x) + 0.5.
    p.conv1.weight.data_mut().fill(1.0);
    p.conv1.bias.data_mut()[0] = 0.5;
    p.bn1.running_mean.data_mut()[0] = 0.5;
    p.bn1.running_var.data_mut()[0] = 4.0;
    p.bn1.gamma.data_mut()[0] = 2.0;
    p.bn1.beta.data_mut()[0] = -0.5;
    // conv2: centre tap only (identity times 3), bias −1.
    p.conv2.weight.data_mut().fill(0.0);
    p.conv2.weight.data_mut()[4] = 3.0;
    p.conv2.bias.data_mut()[0] = -1.0;
    // Heads read the four flattened features.
    let wa = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 2.0],
        [0.5, 0.5, 0.5, 0.5],
    ];
    let ba = [0.0, 0.1, 0.2, 0.3];
    let wp = [[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]];
    let bp = [1.0, 2.0, 3.0];
    p.angle_head.layers[0].weight.data_mut().copy_from_slice(&wa.concat());
    p.angle_head.layers[0].bias.data_mut().copy_from_slice(&ba);
    p.pos_head.layers[0].weight.data_mut().copy_from_slice(&wp.concat());
    p.pos_head.layers[0].bias.data_mut().copy_from_slice(&bp);

    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let out = p.forward_eval(&x).unwrap();

    // Hand arithmetic: z1 = 1.0 + 0.5 = 1.5 everywhere;
    // a1 = relu(2·(1.5 − 0.5)/√(4 + 1e-5) − 0.5);
    // a2 = relu((3·a1 − 1 − 0)/√(1 + 1e-5)), identical in all four cells.
    let a1 = (2.0 * 1.0 / (4.0f64 + 1e-5).sqrt() - 0.5).max(0.0);
    let a2 = ((3.0 * a1 - 1.0) / (1.0f64 + 1e-5).sqrt()).max(0.0);
    assert!((a1 - 0.499_998_75).abs() < 1e-8);
    let want_angle = [a2, 2.0 * a2 + 0.1, a2 + 0.2, 2.0 * a2 + 0.3];
    let want_pos = [1.0, 2.0, a2 + 3.0];
    for (g, w) in out.angle.data().iter().zip(want_angle) {
        assert!((g - w).abs() < 1e-12, "{:?}", out.angle);
    }
    for (g, w) in out.position.data().iter().zip(want_pos) {
        assert!((g - w).abs() < 1e-12, "{:?}", out.position);
    }
}

#[test]
fn zero_input_gives_uniform_rows_at_init() {
    let p = ModelParams::init(&ModelConfig::default(), 4);
    let x = Tensor::zeros(&[3, 2, 10, 10]);
    let out = p.forward_eval(&x).unwrap();
    assert_eq!(out.angle.shape(), &[3, 4]);
    assert_eq!(out.position.shape(), &[3, 3]);
    for i in 0..3 {
        assert!(out.angle.row(i).iter().all(|&v| v == 0.0));
        assert!(out.position.row(i).iter().all(|&v| v == 0.0));
    }
    assert!(p.forward_eval(&Tensor::zeros(&[1, 2, 10, 9])).is_err());
}

fn noiseless_subset(n: usize, seed: u64) -> Dataset {
    let cfg = SimConfig { reps_per_config: 1, ..SimConfig::default() }.noiseless();
    let full = generate_dataset(&cfg, seed).unwrap();
    let mut pool: Vec<_> = full.samples.into_iter().filter(|s| s.grip_step >= 5).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(n);
    Dataset { samples: pool, seed, config: Some(cfg) }
}

#[test]
fn noiseless_subset_is_learned_and_drives_masked_pipeline() {
    let data = noiseless_subset(100, 7);
    let cfg = TrainConfig { epochs: 50, batch_size: 16, seed: 7, ..Default::default() };
    let (model, history) = train(ModelParams::init(&ModelConfig::default(), 7), &data, &data, &cfg).unwrap();
    let last = history.epochs.last().unwrap();
    assert_eq!((last.val_angle_accuracy, last.val_pos_accuracy), (1.0, 1.0), "{}", history.to_csv());
    assert!(history.epochs[0].train_loss > 10.0 * last.train_loss);
    assert!(history.epochs.windows(2).all(|w| w[1].lr <= w[0].lr));
    let ev = evaluate(&model, &data).unwrap();
    assert_eq!(ev.angle_accuracy, ev.angle_confusion.accuracy());
    assert_eq!(ev.angle_confusion.total(), 100);

    let frame = synth_frame(AngleClass::Deg45, PositionClass::Right, 30, &SimConfig::default().noiseless(), &mut sample_rng(0, 0)).unwrap();
    let mut pipe = Pipeline::new(Some(model), Default::default(), Default::default()).unwrap();
    let snap = pipe.tick(&frame, PipelineMode::masked()).unwrap();
    assert_eq!(snap.prediction.unwrap().pattern.get(), 5);
    assert!(snap.mask.unwrap().contains(&snap.stimulus.support()));
    let direct = pipe.tick(&frame, PipelineMode::Direct).unwrap();
    assert!(direct.prediction.is_none());
    assert_eq!(pipe.cnn_invocations(), 1);
}

#[test]
fn training_is_deterministic() {
    let data = noiseless_subset(40, 1);
    let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 3, ..Default::default() };
    let run = || train(ModelParams::init(&small_config(), 3), &data, &data, &cfg).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

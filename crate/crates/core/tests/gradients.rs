use lth_core::arch::{Architecture, Initializer, InputShape, Layer};
use lth_core::data::Batch;
use lth_core::mask::PruningMask;
use lth_core::nn::{backward, forward, Network};
use lth_core::{ModelWeights, ParamKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, n: usize, width: usize, classes: usize) -> Batch {
    let x = (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    Batch::new(Tensor::new(vec![n, width], x).unwrap(), labels).unwrap()
}

fn perturbed_weights(arch: &Architecture, rng: &mut ChaCha8Rng) -> ModelWeights {
    let mut w = arch.initialize(rng.gen());
    for p in w.params_mut() {
        if p.kind.is_bias() {
            for v in p.tensor.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    w
}

fn loss(arch: &Architecture, w: &ModelWeights, mask: &PruningMask, batch: &Batch) -> f64 {
    forward(arch, w, mask, batch).unwrap().loss
}

fn central_difference(arch: &Architecture, w: &ModelWeights, mask: &PruningMask, batch: &Batch, pi: usize, i: usize, h: f64) -> f64 {
    let mut plus = w.clone();
    plus.params_mut()[pi].tensor.data_mut()[i] += h;
    let mut minus = w.clone();
    minus.params_mut()[pi].tensor.data_mut()[i] -= h;
    (loss(arch, &plus, mask, batch) - loss(arch, &minus, mask, batch)) / (2.0 * h)
}

/// Central differences at step 1e-3 on `samples` random coordinates of
/// every tensor; returns the number of coordinates checked.
///
/// A coordinate whose ±h interval straddles a ReLU or max-pool switch shows
/// up as disagreement between steps h and h/2 (for smooth coordinates both
/// agree to ~h²); such coordinates are resampled, at most 5% of the total.
fn check_gradients(arch: &Architecture, seed: u64, samples: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = perturbed_weights(arch, &mut rng);
    let mask = PruningMask::trivial(&w);
    let batch = random_batch(&mut rng, 5, arch.input.len(), arch.classes);
    let grads = backward(arch, &w, &mask, &batch).unwrap();
    let h = 1e-3;
    let (mut checked, mut kinks) = (0, 0);
    for (pi, p) in w.params().iter().enumerate() {
        let mut done = 0;
        while done < samples {
            let i = rng.gen_range(0..p.tensor.len());
            let numeric = central_difference(arch, &w, &mask, &batch, pi, i, h);
            let half = central_difference(arch, &w, &mask, &batch, pi, i, h / 2.0);
            let analytic = grads.params()[pi].tensor.data()[i];
            let scale = analytic.abs().max(numeric.abs());
            if (numeric - half).abs() > 1e-6 * scale.max(1e-3) {
                kinks += 1;
                continue;
            }
            if scale > 1e-7 {
                let rel = (analytic - numeric).abs() / scale;
                assert!(
                    rel < 1e-4,
                    "{}[{i}]: analytic {analytic} numeric {numeric} rel {rel}",
                    p.name
                );
            } else {
                assert!((analytic - numeric).abs() < 1e-9);
            }
            done += 1;
            checked += 1;
        }
    }
    assert!(kinks * 20 <= checked, "{kinks} non-smooth coordinates out of {checked}");
    checked
}

#[test]
fn dense_relu_gradients_match_finite_differences() {
    let arch = Architecture::new(
        "mlp",
        InputShape::flat(6),
        vec![
            Layer::Dense { inputs: 6, outputs: 7 },
            Layer::Relu,
            Layer::Dense { inputs: 7, outputs: 3 },
        ],
        3,
        Initializer::HeNormal,
    )
    .unwrap();
    assert!(check_gradients(&arch, 1, 30) >= 100);
}

#[test]
fn conv_pool_gradients_match_finite_differences() {
    let arch = Architecture::new(
        "cnn",
        InputShape {
            channels: 2,
            height: 10,
            width: 10,
        },
        vec![
            Layer::Conv {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 1,
            },
            Layer::Relu,
            Layer::MaxPool { size: 2 },
            Layer::Conv {
                in_channels: 3,
                out_channels: 4,
                kernel: 2,
                stride: 2,
            },
            Layer::Relu,
            Layer::Dense { inputs: 16, outputs: 4 },
        ],
        4,
        Initializer::HeNormal,
    )
    .unwrap();
    assert!(check_gradients(&arch, 2, 20) >= 100);
}

#[test]
fn preset_gradients_match_finite_differences() {
    assert!(check_gradients(&Architecture::small_cnn(), 3, 20) >= 100);
}

#[test]
fn sparse_path_gradients_match_finite_differences() {
    let arch = Architecture::new(
        "mlp",
        InputShape::flat(8),
        vec![Layer::Dense { inputs: 8, outputs: 6 }, Layer::Relu, Layer::Dense { inputs: 6, outputs: 3 }],
        3,
        Initializer::HeNormal,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = perturbed_weights(&arch, &mut rng);
    let mut mask = PruningMask::trivial(&w);
    // Below half density so the first layer takes the index-list path.
    let mut layers = mask.layers().to_vec();
    for b in layers[0].bits.iter_mut() {
        *b = rng.gen_bool(0.3);
    }
    mask = PruningMask::from_layers(layers, mask.provenance).unwrap();
    let batch = random_batch(&mut rng, 4, 8, 3);
    let grads = backward(&arch, &w, &mask, &batch).unwrap();
    let h = 1e-3;
    for (pi, p) in w.params().iter().enumerate() {
        for i in 0..p.tensor.len() {
            let analytic = grads.params()[pi].tensor.data()[i];
            if !mask.layers()[pi].bits[i] {
                assert_eq!(analytic, 0.0);
                continue;
            }
            let mut plus = w.clone();
            plus.params_mut()[pi].tensor.data_mut()[i] += h;
            let mut minus = w.clone();
            minus.params_mut()[pi].tensor.data_mut()[i] -= h;
            let numeric = (loss(&arch, &plus, &mask, &batch) - loss(&arch, &minus, &mask, &batch)) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            assert!(scale < 1e-7 || (analytic - numeric).abs() / scale < 1e-4, "{}[{i}]", p.name);
        }
    }
}

#[test]
fn zero_weights_give_uniform_loss() {
    let arch = Architecture::lenet_300_100();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_batch(&mut rng, 7, 784, 10);
    let zero = arch.initialize(0).zeros_like();
    let l = loss(&arch, &zero, &PruningMask::trivial(&zero), &batch);
    assert!((l - 10f64.ln()).abs() < 1e-12);

    let w = arch.initialize(5);
    let mut mask = PruningMask::trivial(&w);
    let mut layers = mask.layers().to_vec();
    for l in &mut layers {
        l.bits.iter_mut().for_each(|b| *b = false);
    }
    mask = PruningMask::from_layers(layers, mask.provenance).unwrap();
    let l2 = loss(&arch, &w, &mask, &batch);
    assert_eq!(l, l2);
}

#[test]
fn toy_loss_matches_hand_computation() {
    let arch = Architecture::new(
        "toy",
        InputShape::flat(1),
        vec![Layer::Dense { inputs: 1, outputs: 2 }],
        2,
        Initializer::GlorotNormal,
    )
    .unwrap();
    let mut w = arch.initialize(0);
    w.params_mut()[0].tensor.data_mut().copy_from_slice(&[2.0, -1.0]);
    w.params_mut()[1].tensor.data_mut().copy_from_slice(&[0.5, 0.0]);
    let batch = Batch::new(Tensor::new(vec![2, 1], vec![1.0, -0.5]).unwrap(), vec![0, 1]).unwrap();
    // x = 1: logits (2.5, -1); x = -0.5: logits (-0.5, 0.5).
    let l0 = -(2.5f64.exp() / (2.5f64.exp() + (-1f64).exp())).ln();
    let l1 = -(0.5f64.exp() / ((-0.5f64).exp() + 0.5f64.exp())).ln();
    let expected = (l0 + l1) / 2.0;
    let got = loss(&arch, &w, &PruningMask::trivial(&w), &batch);
    assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
}

#[test]
fn duplicated_rows_leave_mean_loss_and_gradient_unchanged() {
    let arch = Architecture::small_cnn();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = perturbed_weights(&arch, &mut rng);
    let mask = PruningMask::trivial(&w);
    let single = random_batch(&mut rng, 3, arch.input.len(), 10);
    let mut data = single.examples.data().to_vec();
    data.extend_from_slice(single.examples.data());
    let mut labels = single.labels.clone();
    labels.extend_from_slice(&single.labels);
    let doubled = Batch::new(Tensor::new(vec![6, arch.input.len()], data).unwrap(), labels).unwrap();

    let (l1, l2) = (loss(&arch, &w, &mask, &single), loss(&arch, &w, &mask, &doubled));
    assert!((l1 - l2).abs() < 1e-13);
    let g1 = backward(&arch, &w, &mask, &single).unwrap().flatten();
    let g2 = backward(&arch, &w, &mask, &doubled).unwrap().flatten();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn masked_positions_have_zero_gradient() {
    let arch = Architecture::small_cnn();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = perturbed_weights(&arch, &mut rng);
    let trivial = PruningMask::trivial(&w);
    let mut layers = trivial.layers().to_vec();
    for l in &mut layers {
        for b in l.bits.iter_mut() {
            *b = rng.gen_bool(0.6);
        }
    }
    let mask = PruningMask::from_layers(layers, trivial.provenance).unwrap();
    let batch = random_batch(&mut rng, 4, arch.input.len(), 10);
    let grads = backward(&arch, &w, &mask, &batch).unwrap();
    for (p, l) in grads.params().iter().zip(mask.layers()) {
        for (g, &keep) in p.tensor.data().iter().zip(&l.bits) {
            if !keep {
                assert_eq!(*g, 0.0);
            }
        }
    }
}

#[test]
fn network_reuse_is_deterministic() {
    let arch = Architecture::small_cnn();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = perturbed_weights(&arch, &mut rng);
    let mask = PruningMask::trivial(&w);
    let batch = random_batch(&mut rng, 4, arch.input.len(), 10);
    let mut net = Network::new(&arch, &mask).unwrap();
    let mut a = w.zeros_like();
    let mut b = w.zeros_like();
    let la = net.loss_and_gradients(&w, &batch, &mut a).unwrap();
    net.evaluate(&w, &random_batch(&mut rng, 9, arch.input.len(), 10)).unwrap();
    let lb = net.loss_and_gradients(&w, &batch, &mut b).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert!(a.bit_identical(&b));
    assert!(a.params().iter().any(|p| p.kind == ParamKind::ConvWeight));
}

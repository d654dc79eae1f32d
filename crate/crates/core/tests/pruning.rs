use lth_core::arch::Architecture;
use lth_core::data::Batch;
use lth_core::mask::{
    apply_mask, magnitude_prune, random_mask_like, reinitialize, snip_prune, snip_scores, MaskLayer, Provenance,
};
use lth_core::nn::{backward, forward};
use lth_core::{InputShape, Initializer, Layer, ModelWeights, Param, ParamKind, PruneScope, PruningMask, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small layers whose values come from a coarse grid, so ties (including
/// +x/-x and ±0) are common.
fn random_layers(rng: &mut ChaCha8Rng) -> (ModelWeights, PruningMask) {
    let count = rng.gen_range(1..4);
    let mut params = Vec::new();
    let mut layers = Vec::new();
    for li in 0..count {
        let len = rng.gen_range(1..25);
        let kind = if rng.gen_bool(0.25) { ParamKind::DenseBias } else { ParamKind::DenseWeight };
        let data = (0..len).map(|_| rng.gen_range(-3i32..=3) as f64 * 0.5).collect();
        let name = format!("t{li}");
        params.push(Param {
            name: name.clone(),
            kind,
            tensor: Tensor::new(vec![len], data).unwrap(),
        });
        layers.push(MaskLayer {
            name,
            kind,
            dims: vec![len],
            bits: (0..len).map(|_| rng.gen_bool(0.8)).collect(),
        });
    }
    (
        ModelWeights::new(params).unwrap(),
        PruningMask::from_layers(layers, Provenance::Magnitude).unwrap(),
    )
}

/// Selection by explicit pairwise comparison: the candidate with the
/// smallest (value, layer, index) is removed, `count` times.
fn remove_smallest(bits: &mut [Vec<bool>], mut pool: Vec<(f64, usize, usize)>, count: usize) {
    for _ in 0..count {
        let mut best = 0;
        for c in 1..pool.len() {
            let (a, b) = (pool[c], pool[best]);
            if a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2)) {
                best = c;
            }
        }
        let (_, li, i) = pool.remove(best);
        bits[li][i] = false;
    }
}

fn oracle_magnitude(w: &ModelWeights, m: &PruningMask, rate: f64, scope: PruneScope) -> Vec<Vec<bool>> {
    let mut bits: Vec<Vec<bool>> = m.layers().iter().map(|l| l.bits.clone()).collect();
    let entries = |li: usize| -> Vec<(f64, usize, usize)> {
        let l = &m.layers()[li];
        (0..l.len())
            .filter(|&i| l.bits[i])
            .map(|i| (w.params()[li].tensor.data()[i].abs(), li, i))
            .collect()
    };
    let covered: Vec<usize> = (0..m.layers().len()).filter(|&li| scope.covers(m.layers()[li].kind)).collect();
    if scope.global {
        let pool: Vec<_> = covered.iter().flat_map(|&li| entries(li)).collect();
        let count = (rate * pool.len() as f64).floor() as usize;
        remove_smallest(&mut bits, pool, count);
    } else {
        for &li in &covered {
            let pool = entries(li);
            let count = (rate * pool.len() as f64).floor() as usize;
            remove_smallest(&mut bits, pool, count);
        }
    }
    bits
}

fn oracle_snip(scores: &ModelWeights, sparsity: f64, scope: PruneScope) -> Vec<Vec<bool>> {
    let mut bits: Vec<Vec<bool>> = scores.params().iter().map(|p| vec![true; p.tensor.len()]).collect();
    let pool: Vec<_> = scores
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| scope.covers(p.kind))
        .flat_map(|(li, p)| p.tensor.data().iter().enumerate().map(move |(i, &s)| (s, li, i)))
        .collect();
    let count = (sparsity * pool.len() as f64).floor() as usize;
    remove_smallest(&mut bits, pool, count);
    bits
}

fn bits_of(m: &PruningMask) -> Vec<Vec<bool>> {
    m.layers().iter().map(|l| l.bits.clone()).collect()
}

#[test]
fn pruning_matches_selection_oracle_on_random_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for case in 0..1000 {
        let (w, m) = random_layers(&mut rng);
        let scope = PruneScope {
            include_biases: rng.gen_bool(0.5),
            global: rng.gen_bool(0.5),
        };
        let rate = [0.0, 0.2, 0.25, 0.5, 0.9][case % 5];
        let got = magnitude_prune(&w, &m, rate, scope).unwrap();
        assert_eq!(bits_of(&got), oracle_magnitude(&w, &m, rate, scope), "magnitude case {case}");

        let scores = {
            let mut s = w.clone();
            for p in s.params_mut() {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = v.abs());
            }
            s
        };
        let got = snip_prune(&scores, rate, scope).unwrap();
        assert_eq!(bits_of(&got), oracle_snip(&scores, rate, scope), "snip case {case}");
    }
}

fn one_layer(values: &[f64], bits: &[bool]) -> (ModelWeights, PruningMask) {
    let w = ModelWeights::new(vec![Param {
        name: "w".into(),
        kind: ParamKind::DenseWeight,
        tensor: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
    }])
    .unwrap();
    let m = PruningMask::from_layers(
        vec![MaskLayer {
            name: "w".into(),
            kind: ParamKind::DenseWeight,
            dims: vec![values.len()],
            bits: bits.to_vec(),
        }],
        Provenance::Trivial,
    )
    .unwrap();
    (w, m)
}

#[test]
fn apply_mask_examples() {
    let (w, m) = one_layer(&[3.0, 4.0], &[true, false]);
    assert_eq!(apply_mask(&m, &w).unwrap().flatten(), vec![3.0, 0.0]);
    let trivial = PruningMask::trivial(&w);
    assert!(apply_mask(&trivial, &w).unwrap().bit_identical(&w));
}

#[test]
fn zero_rate_keeps_mask() {
    let (w, m) = one_layer(&[0.1, -0.5, 0.3, 0.2], &[true, false, true, true]);
    assert_eq!(bits_of(&magnitude_prune(&w, &m, 0.0, PruneScope::default()).unwrap()), bits_of(&m));
}

#[test]
fn iterative_rounds_follow_geometric_law() {
    let arch = Architecture::lenet_300_100();
    let w = arch.initialize(3);
    let scope = PruneScope::default();
    let mut m = PruningMask::trivial(&w);
    for r in 1..=10 {
        let next = magnitude_prune(&w, &m, 0.2, scope).unwrap();
        assert!(next.is_subset_of(&m));
        for (l, prev) in next.layers().iter().zip(m.layers()) {
            if l.kind.is_bias() {
                assert!(l.is_full());
                continue;
            }
            let expected = prev.surviving() - (0.2 * prev.surviving() as f64).floor() as usize;
            assert_eq!(l.surviving(), expected);
            let law = 0.8f64.powi(r) * l.len() as f64;
            // One unit of floor rounding per round at most.
            assert!((l.surviving() as f64 - law).abs() <= r as f64, "{} round {r}", l.name);
        }
        m = next;
    }
    assert!((m.surviving_fraction(scope) - 0.107).abs() < 0.001);
}

#[test]
fn random_masks_preserve_layer_counts() {
    let arch = Architecture::lenet_300_100();
    let w = arch.initialize(1);
    let full = PruningMask::trivial(&w);
    let imp = magnitude_prune(&w, &full, 0.9, PruneScope::default()).unwrap();
    assert_eq!(imp.layer("dense0.weight").unwrap().surviving(), 784 * 300 / 10);
    let r = random_mask_like(&imp, 7);
    assert_eq!(r.surviving_counts(), imp.surviving_counts());
    assert_eq!(r.provenance, Provenance::Random);
    assert_eq!(bits_of(&r), bits_of(&random_mask_like(&imp, 7)));
    assert!(random_mask_like(&full, 7).is_full());

    let layer = |m: &PruningMask| m.layer("dense1.weight").unwrap().bits.clone();
    for s in 0..20u64 {
        assert_ne!(layer(&random_mask_like(&imp, 2 * s)), layer(&random_mask_like(&imp, 2 * s + 1)));
    }
}

#[test]
fn reinitialization_depends_on_seed() {
    let arch = Architecture::small_cnn();
    assert!(reinitialize(&arch, 4).bit_identical(&reinitialize(&arch, 4)));
    for s in 0..10 {
        assert!(!reinitialize(&arch, s).bit_identical(&reinitialize(&arch, s + 100)));
    }
}

fn toy_snip() -> (Architecture, ModelWeights, Batch) {
    let arch = Architecture::new(
        "unit",
        InputShape::flat(3),
        vec![Layer::Dense { inputs: 3, outputs: 2 }],
        2,
        Initializer::GlorotNormal,
    )
    .unwrap();
    let mut w = arch.initialize(0);
    w.params_mut()[0].tensor.data_mut().copy_from_slice(&[0.7, -0.2, 0.0, 1.1, -0.4, 0.3]);
    w.params_mut()[1].tensor.data_mut().copy_from_slice(&[0.05, -0.1]);
    let x = vec![1.0, -2.0, 0.5, 0.3, 0.8, -1.5, -0.6, 0.1, 2.0, 1.2, 0.0, -0.7];
    let batch = Batch::new(Tensor::new(vec![4, 3], x).unwrap(), vec![0, 1, 1, 0]).unwrap();
    (arch, w, batch)
}

#[test]
fn snip_scores_match_gate_finite_differences() {
    let (arch, w, batch) = toy_snip();
    let trivial = PruningMask::trivial(&w);
    let scores = snip_scores(&arch, &w, &batch).unwrap();
    let grads = backward(&arch, &w, &trivial, &batch).unwrap();
    let h = 1e-4;
    for pi in 0..w.len() {
        for i in 0..w.params()[pi].tensor.len() {
            let wv = w.params()[pi].tensor.data()[i];
            // A multiplicative gate c on this weight: w·c at c = 1 ± h.
            let gated = |c: f64| {
                let mut g = w.clone();
                g.params_mut()[pi].tensor.data_mut()[i] = wv * c;
                forward(&arch, &g, &trivial, &batch).unwrap().loss
            };
            let dc = ((gated(1.0 + h) - gated(1.0 - h)) / (2.0 * h)).abs();
            let s = scores.params()[pi].tensor.data()[i];
            assert_eq!(s, (wv * grads.params()[pi].tensor.data()[i]).abs());
            if wv == 0.0 {
                assert_eq!(s, 0.0);
            } else {
                assert!((s - dc).abs() / s.max(dc) < 1e-3, "[{pi}][{i}] {s} vs {dc}");
            }
        }
    }
}

#[test]
fn snip_scores_vanish_without_downstream_path() {
    let arch = Architecture::lenet_300_100();
    let mut w = arch.initialize(2);
    for p in w.params_mut() {
        if p.name == "dense2.weight" {
            p.tensor.data_mut().fill(0.0);
        }
    }
    let x = (0..2 * 784).map(|i| (i % 7) as f64 / 7.0).collect();
    let batch = Batch::new(Tensor::new(vec![2, 784], x).unwrap(), vec![3, 8]).unwrap();
    let scores = snip_scores(&arch, &w, &batch).unwrap();
    for name in ["dense0.weight", "dense1.weight", "dense2.weight"] {
        assert!(scores.get(name).unwrap().tensor.data().iter().all(|&s| s == 0.0), "{name}");
    }
}

#[test]
fn snip_examples() {
    let (w, _) = one_layer(&[5.0, 1.0, 3.0, 2.0], &[true; 4]);
    let m = snip_prune(&w, 0.5, PruneScope::default()).unwrap();
    assert_eq!(m.layers()[0].bits, vec![true, false, true, false]);
    assert!(snip_prune(&w, 0.0, PruneScope::default()).unwrap().is_full());
}

proptest! {
    #[test]
    fn apply_mask_is_idempotent_and_linear(
        a in proptest::collection::vec(-10.0f64..10.0, 8),
        b in proptest::collection::vec(-10.0f64..10.0, 8),
        bits in proptest::collection::vec(any::<bool>(), 8),
        s in -3.0f64..3.0,
    ) {
        let (wa, m) = one_layer(&a, &bits);
        let (wb, _) = one_layer(&b, &bits);
        let once = apply_mask(&m, &wa).unwrap();
        prop_assert!(apply_mask(&m, &once).unwrap().bit_identical(&once));
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + y).collect();
        let (wc, _) = one_layer(&combo, &bits);
        let lhs = apply_mask(&m, &wc).unwrap().flatten();
        let ma = once.flatten();
        let mb = apply_mask(&m, &wb).unwrap().flatten();
        for ((l, x), y) in lhs.iter().zip(&ma).zip(&mb) {
            prop_assert!((l - (s * x + y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn magnitude_prune_never_revives(
        values in proptest::collection::vec(-1.0f64..1.0, 1..40),
        rate in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<bool> = values.iter().map(|_| rng.gen_bool(0.7)).collect();
        let (w, m) = one_layer(&values, &bits);
        let out = magnitude_prune(&w, &m, rate, PruneScope::default()).unwrap();
        prop_assert!(out.is_subset_of(&m));
        let removed = m.surviving() - out.surviving();
        prop_assert_eq!(removed, (rate * m.surviving() as f64).floor() as usize);
    }
}

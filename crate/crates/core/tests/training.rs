use lth_core::checkpoint::{load_checkpoint, save_checkpoint};
use lth_core::data::{synth_dataset, Dataset};
use lth_core::imp::{
    baseline_variants, imp_with_rewinding, one_shot_experiment, rewind_start, train, Baseline, Data, TrainPlan,
};
use lth_core::mask::{magnitude_prune, random_mask_like};
use lth_core::stability::{data_order_stability, pruning_stability, SubnetworkKind};
use lth_core::{
    Architecture, Error, Initializer, InputShape, Layer, LrSchedule, OptimizerConfig, PruneScope, PruningMask,
    ScheduleShape,
};

fn mlp() -> Architecture {
    Architecture::new(
        "mlp",
        InputShape::flat(12),
        vec![
            Layer::Dense { inputs: 12, outputs: 24 },
            Layer::Relu,
            Layer::Dense { inputs: 24, outputs: 4 },
        ],
        4,
        Initializer::HeNormal,
    )
    .unwrap()
}

fn split() -> (Dataset, Dataset) {
    let all = synth_dataset(5, 400, 12, 4).unwrap();
    let ids: Vec<usize> = (0..400).collect();
    let pick = |r: std::ops::Range<usize>| {
        let b = all.gather(&ids[r]);
        Dataset {
            name: all.name.clone(),
            input: all.input,
            examples: b.examples,
            labels: b.labels,
            classes: 4,
        }
    };
    (pick(0..300), pick(300..400))
}

fn plan(optimizer: OptimizerConfig, k: u64) -> TrainPlan {
    let schedule = LrSchedule {
        base: 0.05,
        total_iterations: 120,
        shape: ScheduleShape::StepDrop {
            drops: vec![80, 100],
            factor: 0.1,
        },
    };
    let base = if matches!(optimizer, OptimizerConfig::Adam { .. }) { 0.01 } else { 0.05 };
    TrainPlan::new(mlp(), optimizer, LrSchedule { base, ..schedule }, 32, 11, 21, k).unwrap()
}

fn sgd() -> OptimizerConfig {
    OptimizerConfig::SgdMomentum { momentum: 0.9 }
}

#[test]
fn one_layer_separates_two_classes() {
    let ds = synth_dataset(1, 200, 10, 2).unwrap();
    let arch = Architecture::new(
        "linear",
        InputShape::flat(10),
        vec![Layer::Dense { inputs: 10, outputs: 2 }],
        2,
        Initializer::GlorotNormal,
    )
    .unwrap();
    let plan = TrainPlan::new(arch, sgd(), LrSchedule::constant(0.1, 500), 20, 0, 0, 0).unwrap();
    let start = plan.initial_state();
    let out = train(&plan, Data::new(&ds, &ds), &start, &PruningMask::trivial(&start.weights), 500).unwrap();
    assert_eq!(out.accuracy, 1.0);
    assert_eq!(out.iterations, 500);
}

#[test]
fn zero_iterations_only_masks() {
    let (tr, te) = split();
    let p = plan(sgd(), 0);
    let start = p.initial_state();
    let mask = magnitude_prune(&start.weights, &PruningMask::trivial(&start.weights), 0.5, p.prune_scope).unwrap();
    let out = train(&p, Data::new(&tr, &te), &start, &mask, 0).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.final_state.iteration, 0);
    assert!(out
        .final_state
        .weights
        .bit_identical(&lth_core::mask::apply_mask(&mask, &start.weights).unwrap()));
    assert!(train(&p, Data::new(&tr, &te), &start, &mask, 121).is_err());
}

#[test]
fn resuming_from_a_saved_checkpoint_is_bit_identical() {
    let (tr, te) = split();
    let dir = tempfile::tempdir().unwrap();
    for optimizer in [sgd(), OptimizerConfig::adam()] {
        let mut p = plan(optimizer, 37);
        p.checkpoint_dir = Some(dir.path().to_path_buf());
        let start = p.initial_state();
        let trivial = PruningMask::trivial(&start.weights);
        let data = Data::new(&tr, &te);
        let straight = train(&p, data, &start, &trivial, 120).unwrap();

        let path = dir.path().join("iter-00000037.ltck");
        let saved = load_checkpoint(&path, &p.arch).unwrap();
        assert!(saved.bit_identical(straight.checkpoint_at(37).unwrap()));
        let resumed = train(&p, data, &saved, &trivial, 83).unwrap();
        assert!(resumed.final_state.bit_identical(&straight.final_state));
        assert_eq!(resumed.accuracy, straight.accuracy);

        let first = train(&p, data, &start, &trivial, 37).unwrap();
        save_checkpoint(&first.final_state, &dir.path().join("mid.ltck")).unwrap();
        let again = load_checkpoint(&dir.path().join("mid.ltck"), &p.arch).unwrap();
        let rest = train(&p, data, &again, &trivial, 83).unwrap();
        assert!(rest.final_state.weights.bit_identical(straight.weights()));
    }
}

#[test]
fn pruned_weights_stay_zero_under_momentum_and_adam() {
    let (tr, te) = split();
    for optimizer in [sgd(), OptimizerConfig::adam()] {
        let p = plan(optimizer, 0);
        let data = Data::new(&tr, &te);
        let start = p.initial_state();
        let trivial = PruningMask::trivial(&start.weights);
        // Non-zero optimizer buffers everywhere before the mask is imposed.
        let warm = train(&p, data, &start, &trivial, 10).unwrap();
        let scope = PruneScope {
            include_biases: true,
            global: false,
        };
        let mask = magnitude_prune(warm.weights(), &trivial, 0.6, scope).unwrap();
        let out = train(&p, data, &warm.final_state, &mask, 110).unwrap();
        for (i, (p, l)) in out.final_state.weights.params().iter().zip(mask.layers()).enumerate() {
            for (j, (&v, &keep)) in p.tensor.data().iter().zip(&l.bits).enumerate() {
                if !keep {
                    assert_eq!(v, 0.0, "{}[{j}]", p.name);
                    for slot in &out.final_state.optimizer.slots {
                        assert_eq!(slot.params()[i].tensor.data()[j], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn divergence_reports_the_iteration() {
    let (tr, te) = split();
    let mut p = plan(sgd(), 0);
    p.schedule = LrSchedule::constant(1e6, 120);
    let start = p.initial_state();
    let err = train(&p, Data::new(&tr, &te), &start, &PruningMask::trivial(&start.weights), 120).unwrap_err();
    match err {
        Error::Numeric { iteration, .. } => assert!(iteration > 0 && iteration <= 120),
        other => panic!("expected a numeric error, got {other}"),
    }
}

#[test]
fn imp_levels_follow_the_budget_and_replay_exactly() {
    let (tr, te) = split();
    let p = plan(sgd(), 20);
    let data = Data::new(&tr, &te);
    let a = imp_with_rewinding(&p, data, 0.2, 3).unwrap();
    assert_eq!(a.levels.len(), 4);
    assert_eq!(a.levels[0].iterations_trained, 120);
    assert_eq!(a.levels[0].accuracy, a.reference_accuracy);
    assert_eq!(a.rewind_state.iteration, 20);
    for w in a.levels.windows(2) {
        assert!(w[1].mask.is_subset_of(&w[0].mask));
        assert!(w[1].surviving_fraction < w[0].surviving_fraction);
        assert_eq!(w[1].iterations_trained, 100);
    }
    let l1 = &a.levels[1];
    for l in l1.mask.layers() {
        if !l.kind.is_bias() {
            assert_eq!(l.surviving(), l.len() - l.len() / 5);
        }
    }

    let b = imp_with_rewinding(&p, data, 0.2, 3).unwrap();
    assert!(a.rewind_state.bit_identical(&b.rewind_state));
    for (x, y) in a.levels.iter().zip(&b.levels) {
        assert!(x.final_weights.bit_identical(&y.final_weights));
        assert_eq!(x.accuracy, y.accuracy);
        assert_eq!(x.mask, y.mask);
    }
}

#[test]
fn one_shot_matches_a_single_iterative_round() {
    let (tr, te) = split();
    let p = plan(OptimizerConfig::adam(), 0);
    let data = Data::new(&tr, &te);
    let once = one_shot_experiment(&p, data, &[0.0, 0.2, 0.7]).unwrap();
    let iter = imp_with_rewinding(&p, data, 0.2, 1).unwrap();
    assert_eq!(once.levels[1].accuracy, once.reference_accuracy);
    assert_eq!(once.levels[2].mask, iter.levels[1].mask);
    assert!(once.levels[2].final_weights.bit_identical(&iter.levels[1].final_weights));
    let cut = magnitude_prune(
        &once.levels[0].final_weights,
        &once.levels[0].mask,
        0.7,
        p.prune_scope,
    )
    .unwrap();
    assert_eq!(once.levels[3].mask.surviving_counts(), cut.surviving_counts());
    assert!(one_shot_experiment(&p, data, &[0.5, 0.2]).is_err());
}

#[test]
fn baselines_share_the_budget_and_sparsity() {
    let (tr, te) = split();
    let p = plan(sgd(), 10);
    let data = Data::new(&tr, &te);
    let imp = imp_with_rewinding(&p, data, 0.5, 1).unwrap();
    let mask = &imp.levels[1].mask;
    let runs = baseline_variants(&p, data, &imp.rewind_state, mask, 3).unwrap();
    assert_eq!(runs.len(), 3);
    for r in &runs {
        assert_eq!(r.outcome.iterations, p.budget());
        assert_eq!(r.outcome.final_state.iteration, p.total_iterations);
        let frac = r.mask.surviving_fraction(p.prune_scope);
        assert!((frac - mask.surviving_fraction(p.prune_scope)).abs() < 0.01, "{:?}", r.baseline);
    }
    let random = runs.iter().find(|r| r.baseline == Baseline::RandomMask).unwrap();
    assert_eq!(random.mask.surviving_counts(), mask.surviving_counts());
    assert_eq!(random.mask, random_mask_like(mask, 3));
    let reinit = runs.iter().find(|r| r.baseline == Baseline::Reinit).unwrap();
    assert_eq!(&reinit.mask, mask);
}

#[test]
fn optimizer_reset_and_fresh_seeds_are_honored() {
    let p = {
        let mut p = plan(OptimizerConfig::adam(), 5);
        p.rewind_optimizer_state = false;
        p.fresh_data_seed_per_level = true;
        p
    };
    let (tr, te) = split();
    let start = p.initial_state();
    let out = train(&p, Data::new(&tr, &te), &start, &PruningMask::trivial(&start.weights), 5).unwrap();
    let rewound = rewind_start(&p, &out.final_state, 2);
    assert_eq!(rewound.optimizer.step, 0);
    assert!(rewound.optimizer.slots.iter().all(|s| s.flatten().iter().all(|&v| v == 0.0)));
    assert_ne!(rewound.data_seed, p.data_seed);
    assert_eq!(rewind_start(&p, &out.final_state, 0).data_seed, p.data_seed);
}

#[test]
fn stability_estimators_degenerate_cases() {
    let (tr, te) = split();
    let p = plan(sgd(), 30);
    let data = Data::new(&tr, &te);
    let start = p.initial_state();
    let trivial = PruningMask::trivial(&start.weights);
    let state = train(&p, data, &start, &trivial, 30).unwrap().final_state;
    let mask = magnitude_prune(&state.weights, &trivial, 0.5, p.prune_scope).unwrap();

    let same = data_order_stability(&p, data, &state, &mask, SubnetworkKind::Imp, &[(4, 4)]).unwrap();
    assert_eq!(same.distance.samples, vec![0.0]);
    assert_eq!(same.angle.samples, vec![0.0]);

    let full = pruning_stability(&p, data, &state, &trivial, SubnetworkKind::Imp, &[1, 2]).unwrap();
    assert_eq!(full.distance.samples, vec![0.0, 0.0]);

    let a = data_order_stability(&p, data, &state, &mask, SubnetworkKind::Imp, &[(1, 2), (3, 4)]).unwrap();
    let b = data_order_stability(&p, data, &state, &mask, SubnetworkKind::Imp, &[(1, 2), (3, 4)]).unwrap();
    assert_eq!(a, b);
    assert!(a.distance.samples.iter().all(|&d| d > 0.0));
    assert!(a.iterations.iter().all(|&n| n == 90));

    let r = random_mask_like(&mask, 8);
    let pr = pruning_stability(&p, data, &state, &r, SubnetworkKind::Random, &[5]).unwrap();
    assert_eq!(pr.iterations, vec![90]);
    assert_eq!(pr.distance.rewind_iteration, 30);
}

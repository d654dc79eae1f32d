//! Training runs and iterative magnitude pruning with rewinding.
//!
//! A run always starts from a [`Checkpoint`] and resumes the global clock at
//! its iteration: minibatch `i` and learning rate `lr_at(schedule, i)` are pure
//! functions of the global iteration `i`, the data-order seed and the plan.
//! Training from W_k for T* − k iterations therefore continues the original
//! schedule rather than restarting it.

use std::path::PathBuf;

use crate::arch::Architecture;
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{epoch_order, Augmentation, Batch, BatchSchedule, DataOrderSeed, Dataset, NoAugmentation};
use crate::error::{Error, Result};
use crate::mask::{self, magnitude_prune, random_mask_like, reinitialize, snip_prune, snip_scores, PruneScope, PruningMask};
use crate::nn::Network;
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::rng::derive_seed;
use crate::schedule::{lr_at, LrSchedule};
use crate::weights::ModelWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub arch: Architecture,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    /// T*
    pub total_iterations: u64,
    pub batch_size: usize,
    pub init_seed: u64,
    pub data_seed: DataOrderSeed,
    /// k
    pub rewind_iteration: u64,
    /// Iterations at which the state is captured; always contains k.
    pub checkpoint_iterations: Vec<u64>,
    pub prune_scope: PruneScope,
    /// Rewinding restores optimizer buffers from iteration k when true and
    /// starts them from zero when false.
    pub rewind_optimizer_state: bool,
    /// Each IMP level draws a fresh data order instead of reusing `data_seed`.
    pub fresh_data_seed_per_level: bool,
    /// When set, captured checkpoints are also written here.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainPlan {
    pub fn new(
        arch: Architecture,
        optimizer: OptimizerConfig,
        schedule: LrSchedule,
        batch_size: usize,
        init_seed: u64,
        data_seed: u64,
        rewind_iteration: u64,
    ) -> Result<Self> {
        let plan = TrainPlan {
            total_iterations: schedule.total_iterations,
            arch,
            optimizer,
            schedule,
            batch_size,
            init_seed,
            data_seed: DataOrderSeed(data_seed),
            rewind_iteration,
            checkpoint_iterations: vec![rewind_iteration],
            prune_scope: PruneScope::default(),
            rewind_optimizer_state: true,
            fresh_data_seed_per_level: false,
            checkpoint_dir: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if self.schedule.total_iterations != self.total_iterations {
            return Err(Error::contract("schedule length differs from T*"));
        }
        if self.rewind_iteration >= self.total_iterations {
            return Err(Error::contract(format!(
                "rewind iteration {} must be below T* = {}",
                self.rewind_iteration, self.total_iterations
            )));
        }
        if !self.checkpoint_iterations.contains(&self.rewind_iteration) {
            return Err(Error::contract("checkpoint iterations must include the rewind iteration"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        Ok(())
    }

    /// The plan with a different rewind iteration (and that iteration added
    /// to the checkpoint list).
    pub fn with_rewind(&self, k: u64) -> Result<Self> {
        let mut plan = self.clone();
        plan.rewind_iteration = k;
        if !plan.checkpoint_iterations.contains(&k) {
            plan.checkpoint_iterations.push(k);
            plan.checkpoint_iterations.sort_unstable();
        }
        plan.validate()?;
        Ok(plan)
    }

    /// W_0 with fresh optimizer buffers at iteration 0.
    pub fn initial_state(&self) -> Checkpoint {
        Checkpoint::initial(&self.arch, self.arch.initialize(self.init_seed), self.optimizer, self.data_seed)
    }

    /// Iterations every run that starts at the rewind point executes.
    pub fn budget(&self) -> u64 {
        self.total_iterations - self.rewind_iteration
    }
}

/// Training and held-out data plus the batch augmentation hook.
#[derive(Clone, Copy)]
pub struct Data<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub augmentation: &'a dyn Augmentation,
}

impl<'a> Data<'a> {
    pub fn new(train: &'a Dataset, test: &'a Dataset) -> Self {
        Data {
            train,
            test,
            augmentation: &NoAugmentation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_state: Checkpoint,
    pub accuracy: f64,
    /// Optimizer steps actually executed.
    pub iterations: u64,
    /// States captured at the plan's checkpoint iterations within this run.
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainOutcome {
    pub fn weights(&self) -> &ModelWeights {
        &self.final_state.weights
    }

    pub fn checkpoint_at(&self, iteration: u64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.iteration == iteration)
    }
}

/// Minibatch used at global iteration `iteration` under `seed`.
pub fn batch_at(dataset: &Dataset, batch_size: usize, seed: DataOrderSeed, iteration: u64) -> Result<Batch> {
    let schedule = BatchSchedule::new(dataset.len(), batch_size)?;
    let (epoch, index) = schedule.locate(iteration);
    let order = epoch_order(seed, epoch, dataset.len());
    Ok(dataset.gather(schedule.slice(&order, index)))
}

/// Runs exactly `iterations` optimizer steps on m ⊙ W starting from `start`,
/// then evaluates test accuracy.
///
/// Weights and optimizer buffers are masked before the first step, and
/// gradients at pruned positions are zero, so pruned weights stay exactly 0.
pub fn train(plan: &TrainPlan, data: Data<'_>, start: &Checkpoint, mask: &PruningMask, iterations: u64) -> Result<TrainOutcome> {
    plan.validate()?;
    if start.fingerprint != plan.arch.fingerprint() {
        return Err(Error::ArchitectureMismatch);
    }
    let end = start.iteration.checked_add(iterations).filter(|&e| e <= plan.total_iterations).ok_or_else(|| {
        Error::contract(format!(
            "cannot train {iterations} iterations from {} with T* = {}",
            start.iteration, plan.total_iterations
        ))
    })?;
    if start.optimizer.config != plan.optimizer {
        return Err(Error::contract("checkpoint optimizer differs from the plan"));
    }
    mask.check_congruent(&start.weights)?;

    let mut state = start.clone();
    mask::apply_mask_in_place(mask, &mut state.weights)?;
    state.optimizer.apply_mask(mask)?;

    let mut network = Network::new(&plan.arch, mask)?;
    let schedule = BatchSchedule::new(data.train.len(), plan.batch_size)?;
    let mut grads = state.weights.zeros_like();
    let mut checkpoints = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;

    let capture = |state: &Checkpoint, checkpoints: &mut Vec<Checkpoint>| -> Result<()> {
        if plan.checkpoint_iterations.contains(&state.iteration) {
            if let Some(dir) = &plan.checkpoint_dir {
                save_checkpoint(state, &dir.join(format!("iter-{:08}.ltck", state.iteration)))?;
            }
            checkpoints.push(state.clone());
        }
        Ok(())
    };

    for i in start.iteration..end {
        capture(&state, &mut checkpoints)?;
        let (epoch, index) = schedule.locate(i);
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            order = Some((epoch, epoch_order(state.data_seed, epoch, data.train.len())));
        }
        let perm = &order.as_ref().expect("set above").1;
        let mut batch = data.train.gather(schedule.slice(perm, index));
        data.augmentation.augment(&mut batch, i);

        let lr = lr_at(&plan.schedule, i)?;
        network
            .loss_and_gradients(&state.weights, &batch, &mut grads)
            .map_err(|e| match e {
                Error::Numeric { detail, .. } => Error::Numeric { iteration: i, detail },
                other => other,
            })?;
        state.optimizer.step(&mut state.weights, &grads, lr)?;
        state.iteration = i + 1;
    }
    if iterations > 0 {
        capture(&state, &mut checkpoints)?;
    }
    if !state.weights.is_finite() {
        return Err(Error::Numeric {
            iteration: end,
            detail: "weights diverged".into(),
        });
    }

    let accuracy = network.accuracy(&state.weights, data.test)?;
    Ok(TrainOutcome {
        final_state: state,
        accuracy,
        iterations,
        checkpoints,
    })
}

/// The state a pruned run at `level` starts from: W_k, with optimizer
/// buffers either restored or reset, and the level's data order.
pub fn rewind_start(plan: &TrainPlan, rewind: &Checkpoint, level: usize) -> Checkpoint {
    let mut start = rewind.clone();
    if !plan.rewind_optimizer_state {
        start.optimizer = OptimizerState::new(plan.optimizer, &start.weights);
    }
    if plan.fresh_data_seed_per_level && level > 0 {
        start.data_seed = DataOrderSeed(derive_seed(plan.data_seed.0, level as u64));
    }
    start
}

#[derive(Debug, Clone)]
pub struct ImpLevel {
    pub level: usize,
    /// Surviving fraction over the tensors the prune scope covers.
    pub surviving_fraction: f64,
    pub mask: PruningMask,
    pub final_weights: ModelWeights,
    pub accuracy: f64,
    pub iterations_trained: u64,
}

#[derive(Debug, Clone)]
pub struct ImpResult {
    /// a*: accuracy of the unpruned network after T* iterations.
    pub reference_accuracy: f64,
    /// W_k and optimizer state at the rewind iteration, from the level-0 run.
    pub rewind_state: Checkpoint,
    /// Level 0 is the unpruned run.
    pub levels: Vec<ImpLevel>,
}

impl ImpResult {
    pub fn level(&self, level: usize) -> Option<&ImpLevel> {
        self.levels.iter().find(|l| l.level == level)
    }
}

/// Level 0 of every experiment: the full network trained for T* from W_0.
pub fn train_full(plan: &TrainPlan, data: Data<'_>) -> Result<(TrainOutcome, Checkpoint)> {
    let start = plan.initial_state();
    let full = PruningMask::trivial(&start.weights);
    let outcome = train(plan, data, &start, &full, plan.total_iterations)?;
    let rewind = outcome
        .checkpoint_at(plan.rewind_iteration)
        .cloned()
        .expect("the rewind iteration is always captured");
    Ok((outcome, rewind))
}

fn full_level(plan: &TrainPlan, outcome: &TrainOutcome) -> ImpLevel {
    let mask = PruningMask::trivial(outcome.weights());
    ImpLevel {
        level: 0,
        surviving_fraction: mask.surviving_fraction(plan.prune_scope),
        mask,
        final_weights: outcome.weights().clone(),
        accuracy: outcome.accuracy,
        iterations_trained: outcome.iterations,
    }
}

/// How pruned levels derive their masks from trained weights.
#[derive(Debug, Clone, PartialEq)]
pub enum PruneSchedule {
    /// Level ℓ prunes `rate` of the weights surviving level ℓ − 1, by
    /// magnitude in level ℓ − 1's trained weights.
    Iterative { rate: f64, levels: usize },
    /// Level i + 1 prunes the trained full network once to `sparsities[i]`.
    OneShot { sparsities: Vec<f64> },
}

impl PruneSchedule {
    pub fn levels(&self) -> usize {
        match self {
            PruneSchedule::Iterative { levels, .. } => *levels,
            PruneSchedule::OneShot { sparsities } => sparsities.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PruneSchedule::Iterative { rate, levels } => {
                if *levels == 0 {
                    return Err(Error::contract("IMP needs at least one level"));
                }
                if !(*rate > 0.0 && *rate < 1.0) {
                    return Err(Error::contract(format!("pruning rate {rate} outside (0, 1)")));
                }
            }
            PruneSchedule::OneShot { sparsities } => {
                if sparsities.is_empty() {
                    return Err(Error::contract("one-shot pruning needs at least one target"));
                }
                if sparsities.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::contract("target sparsities must ascend"));
                }
                if sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
                    return Err(Error::contract("target sparsities must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Iterative magnitude pruning with rewinding to iteration k: train, prune
/// `rate` of the surviving weights by magnitude, rewind to W_k, retrain for
/// T* − k iterations, and repeat for `levels` rounds.
pub fn imp_with_rewinding(plan: &TrainPlan, data: Data<'_>, rate: f64, levels: usize) -> Result<ImpResult> {
    let schedule = PruneSchedule::Iterative { rate, levels };
    schedule.validate()?;
    let (full, rewind) = train_full(plan, data)?;
    prune_levels(plan, data, &full, &rewind, &schedule, |_| {})
}

/// Prunes the trained full network once to each target sparsity, rewinds to
/// W_k and retrains for T* − k iterations. Level `i + 1` holds target `i`.
pub fn one_shot_experiment(plan: &TrainPlan, data: Data<'_>, sparsities: &[f64]) -> Result<ImpResult> {
    let schedule = PruneSchedule::OneShot {
        sparsities: sparsities.to_vec(),
    };
    schedule.validate()?;
    let (full, rewind) = train_full(plan, data)?;
    prune_levels(plan, data, &full, &rewind, &schedule, |_| {})
}

/// The pruned levels on top of an already-trained level 0. `on_level` sees
/// each level as soon as it finishes training.
pub fn prune_levels(
    plan: &TrainPlan,
    data: Data<'_>,
    full: &TrainOutcome,
    rewind: &Checkpoint,
    schedule: &PruneSchedule,
    mut on_level: impl FnMut(&ImpLevel),
) -> Result<ImpResult> {
    schedule.validate()?;
    if rewind.iteration != plan.rewind_iteration {
        return Err(Error::contract("rewind state is not at the plan's rewind iteration"));
    }
    let trivial = PruningMask::trivial(full.weights());
    let mut records = vec![full_level(plan, full)];
    for level in 1..=schedule.levels() {
        let mask = match schedule {
            PruneSchedule::Iterative { rate, .. } => {
                let previous = &records[level - 1];
                magnitude_prune(&previous.final_weights, &previous.mask, *rate, plan.prune_scope)?
            }
            PruneSchedule::OneShot { sparsities } => {
                magnitude_prune(full.weights(), &trivial, sparsities[level - 1], plan.prune_scope)?
            }
        };
        let start = rewind_start(plan, rewind, level);
        let outcome = train(plan, data, &start, &mask, plan.budget())?;
        let record = ImpLevel {
            level,
            surviving_fraction: mask.surviving_fraction(plan.prune_scope),
            mask,
            final_weights: outcome.final_state.weights,
            accuracy: outcome.accuracy,
            iterations_trained: outcome.iterations,
        };
        on_level(&record);
        records.push(record);
    }
    Ok(ImpResult {
        reference_accuracy: full.accuracy,
        rewind_state: rewind.clone(),
        levels: records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    /// Random mask with the IMP mask's per-layer counts, on W_k.
    RandomMask,
    /// The IMP mask on freshly initialized weights.
    Reinit,
    /// SNIP at the IMP mask's sparsity, scored on W_k.
    Snip,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::RandomMask, Baseline::Reinit, Baseline::Snip];
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub baseline: Baseline,
    pub mask: PruningMask,
    pub outcome: TrainOutcome,
}

/// Mask and starting state for a baseline compared against `imp_mask`.
pub fn baseline_setup(
    plan: &TrainPlan,
    data: Data<'_>,
    rewind: &Checkpoint,
    imp_mask: &PruningMask,
    baseline: Baseline,
    seed: u64,
) -> Result<(PruningMask, Checkpoint)> {
    Ok(match baseline {
        Baseline::RandomMask => (random_mask_like(imp_mask, seed), rewind.clone()),
        Baseline::Reinit => {
            let weights = reinitialize(&plan.arch, seed);
            let mut start = Checkpoint::initial(&plan.arch, weights, plan.optimizer, rewind.data_seed);
            start.iteration = rewind.iteration;
            (imp_mask.clone(), start)
        }
        Baseline::Snip => {
            let batch = batch_at(data.train, plan.batch_size, rewind.data_seed, rewind.iteration)?;
            let scores = snip_scores(&plan.arch, &rewind.weights, &batch)?;
            let sparsity = 1.0 - imp_mask.surviving_fraction(plan.prune_scope);
            (snip_prune(&scores, sparsity, plan.prune_scope)?, rewind.clone())
        }
    })
}

pub fn baseline_variant(
    plan: &TrainPlan,
    data: Data<'_>,
    rewind: &Checkpoint,
    imp_mask: &PruningMask,
    baseline: Baseline,
    seed: u64,
) -> Result<BaselineRun> {
    let (mask, start) = baseline_setup(plan, data, rewind, imp_mask, baseline, seed)?;
    let outcome = train(plan, data, &start, &mask, plan.budget())?;
    Ok(BaselineRun { baseline, mask, outcome })
}

/// Random-mask, reinitialized and SNIP controls for one IMP mask, each
/// trained for T* − k iterations.
pub fn baseline_variants(
    plan: &TrainPlan,
    data: Data<'_>,
    rewind: &Checkpoint,
    imp_mask: &PruningMask,
    seed: u64,
) -> Result<Vec<BaselineRun>> {
    Baseline::ALL
        .iter()
        .map(|&b| baseline_variant(plan, data, rewind, imp_mask, b, seed))
        .collect()
}

/// a ≥ a* − ε
pub fn is_winning_ticket(accuracy: f64, reference: f64, tolerance: f64) -> bool {
    accuracy >= reference - tolerance
}

/// Sample standard deviation of replicate accuracies, the default ε.
pub fn replicate_tolerance(accuracies: &[f64]) -> f64 {
    let n = accuracies.len();
    if n < 2 {
        return 0.0;
    }
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let ss: f64 = accuracies.iter().map(|a| (a - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

//! Turns a config into independent training jobs, runs them on a worker
//! pool and assembles result rows in a fixed order.
//!
//! Jobs run in three phases. Each phase only reads what earlier phases
//! produced, so any number of workers gives the same numbers:
//!
//! 1. one full-network run per replicate, capturing W_k for every k;
//! 2. one pruning chain per (k, replicate), plus the full-network runs from
//!    W_k that pruning stability compares against;
//! 3. baselines and stability estimates per (variant, level, k, replicate).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use lth_core::data::{load_mnist, synth_dataset, Dataset};
use lth_core::imp::{baseline_variant, prune_levels, train_full, Baseline, Data, TrainOutcome, TrainPlan};
use lth_core::mask::random_mask_like;
use lth_core::rng::derive_seed;
use lth_core::stability::{data_order_stability, full_runs, pruning_stability_against, SubnetworkKind};
use lth_core::{Architecture, Checkpoint, InputShape, Layer, ModelWeights, PruningMask};

use crate::config::{DataSource, ExperimentConfig, NetworkSpec};
use crate::results::{Band, CsvSink, ResultRow, Stability, Variant};

/// Labels mixed into a replicate seed for each independent random choice.
const RANDOM_MASK_LABEL: u64 = 1;
const REINIT_LABEL: u64 = 2;
const DATA_ORDER_LABEL: u64 = 100;
const PRUNING_LABEL: u64 = 200;

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Mnist {
            dir,
            train_examples,
            test_examples,
        } => {
            let dir = std::env::var_os("LTH_MNIST_DIR").map_or_else(|| dir.clone(), PathBuf::from);
            let load = |images: &str, labels: &str| {
                load_mnist(&dir.join(images), &dir.join(labels))
                    .with_context(|| format!("loading MNIST from {} (see scripts/fetch-mnist.sh)", dir.display()))
            };
            let mut train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
            let mut test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
            if *train_examples > 0 {
                train = train.head(*train_examples)?;
            }
            if *test_examples > 0 {
                test = test.head(*test_examples)?;
            }
            Ok((train, test))
        }
        DataSource::Synthetic {
            seed,
            train_examples,
            test_examples,
            dim,
            classes,
        } => {
            let all = synth_dataset(*seed, train_examples + test_examples, *dim, *classes)?;
            let idx: Vec<usize> = (0..all.len()).collect();
            let part = |range: std::ops::Range<usize>, name: &str| {
                let b = all.gather(&idx[range]);
                Dataset {
                    name: format!("{}-{name}", all.name),
                    input: all.input,
                    examples: b.examples,
                    labels: b.labels,
                    classes: all.classes,
                }
            };
            Ok((part(0..*train_examples, "train"), part(*train_examples..all.len(), "test")))
        }
    }
}

pub fn build_architecture(cfg: &ExperimentConfig, train: &Dataset) -> Result<Architecture> {
    let arch = match &cfg.network {
        NetworkSpec::Preset(arch) => arch.clone(),
        NetworkSpec::Mlp { hidden, initializer } => {
            let mut layers = Vec::new();
            let mut width = train.input.len();
            for &h in hidden {
                layers.push(Layer::Dense {
                    inputs: width,
                    outputs: h,
                });
                layers.push(Layer::Relu);
                width = h;
            }
            layers.push(Layer::Dense {
                inputs: width,
                outputs: train.classes,
            });
            let name = format!("mlp-{}", hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("-"));
            Architecture::new(name, InputShape::flat(train.input.len()), layers, train.classes, *initializer)?
        }
    };
    if arch.input.len() != train.input.len() || arch.classes != train.classes {
        bail!(
            "network `{}` expects {} inputs and {} classes; data has {} and {}",
            arch.name,
            arch.input.len(),
            arch.classes,
            train.input.len(),
            train.classes
        );
    }
    if cfg.batch_size > train.len() {
        bail!("batch_size {} exceeds the {} training examples", cfg.batch_size, train.len());
    }
    Ok(arch)
}

/// The plan for one replicate at rewind iteration `k`.
pub fn plan_for(cfg: &ExperimentConfig, arch: &Architecture, seed: u64, k: u64) -> Result<TrainPlan> {
    let mut plan = TrainPlan::new(
        arch.clone(),
        cfg.optimizer,
        cfg.schedule.clone(),
        cfg.batch_size,
        seed,
        seed,
        k,
    )?;
    plan.checkpoint_iterations = cfg.rewind_iterations.clone();
    plan.rewind_optimizer_state = cfg.rewind_optimizer_state;
    plan.fresh_data_seed_per_level = cfg.fresh_data_seed_per_level;
    plan.prune_scope = cfg.scope;
    plan.validate()?;
    Ok(plan)
}

pub fn data_order_pairs(seed: u64, count: usize) -> Vec<(u64, u64)> {
    (0..count as u64)
        .map(|i| {
            (
                derive_seed(seed, DATA_ORDER_LABEL + 2 * i),
                derive_seed(seed, DATA_ORDER_LABEL + 2 * i + 1),
            )
        })
        .collect()
}

pub fn pruning_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(seed, PRUNING_LABEL + i)).collect()
}

/// Identifies one output row; rows are written in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowKey {
    pub k: usize,
    pub rep: usize,
    pub level: usize,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Job {
    Full { rep: usize },
    Chain { k: usize, rep: usize },
    FullFromK { k: usize, rep: usize },
    Baseline { variant: Variant, level: usize, k: usize, rep: usize },
    DataOrder { sub: SubnetworkKind, level: usize, k: usize, rep: usize },
    Pruning { sub: SubnetworkKind, level: usize, k: usize, rep: usize },
}

fn variant_of(sub: SubnetworkKind) -> Variant {
    match sub {
        SubnetworkKind::Imp => Variant::Imp,
        SubnetworkKind::Random => Variant::Random,
    }
}

/// Everything a run needs that is fixed before the first job.
pub struct Experiment<'a> {
    pub cfg: &'a ExperimentConfig,
    pub arch: Architecture,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

impl<'a> Experiment<'a> {
    pub fn new(cfg: &'a ExperimentConfig, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        let arch = build_architecture(cfg, train)?;
        Ok(Experiment { cfg, arch, train, test })
    }

    fn data(&self) -> Data<'a> {
        Data::new(self.train, self.test)
    }

    fn seed(&self, rep: usize) -> u64 {
        self.cfg.replicate_seeds[rep]
    }

    fn plan(&self, k: usize, rep: usize) -> Result<TrainPlan> {
        plan_for(self.cfg, &self.arch, self.seed(rep), self.cfg.rewind_iterations[k])
    }

    fn stability_reps(&self) -> usize {
        if self.cfg.stability_enabled() {
            self.cfg.stability.replicates.min(self.cfg.replicate_seeds.len())
        } else {
            0
        }
    }

    fn stability_subnetworks(&self, rep: usize, level: usize) -> Vec<SubnetworkKind> {
        if rep < self.stability_reps() && self.cfg.stability.levels.contains(&level) {
            self.cfg.stability.subnetworks.clone()
        } else {
            Vec::new()
        }
    }

    fn baselines_at(&self, rep: usize, level: usize) -> Vec<Variant> {
        let b = &self.cfg.baselines;
        let listed = b.levels.is_empty() || b.levels.contains(&level);
        let mut out = Vec::new();
        if (b.random && listed) || self.stability_subnetworks(rep, level).contains(&SubnetworkKind::Random) {
            out.push(Variant::Random);
        }
        if b.reinit && listed {
            out.push(Variant::Reinit);
        }
        if b.snip && listed {
            out.push(Variant::Snip);
        }
        out
    }

    /// Every row the configuration produces, in output order.
    pub fn row_keys(&self) -> Vec<RowKey> {
        let mut keys = Vec::new();
        for k in 0..self.cfg.rewind_iterations.len() {
            for rep in 0..self.cfg.replicate_seeds.len() {
                for level in 0..=self.cfg.levels() {
                    if level == 0 {
                        keys.push(RowKey {
                            k,
                            rep,
                            level,
                            variant: Variant::Full,
                        });
                        continue;
                    }
                    keys.push(RowKey {
                        k,
                        rep,
                        level,
                        variant: Variant::Imp,
                    });
                    for variant in self.baselines_at(rep, level) {
                        keys.push(RowKey { k, rep, level, variant });
                    }
                }
            }
        }
        keys
    }

    fn phases(&self) -> [Vec<Job>; 3] {
        let (ks, reps) = (self.cfg.rewind_iterations.len(), self.cfg.replicate_seeds.len());
        let first = (0..reps).map(|rep| Job::Full { rep }).collect();
        let mut second = Vec::new();
        let mut third = Vec::new();
        for k in 0..ks {
            for rep in 0..reps {
                second.push(Job::Chain { k, rep });
                let mut needs_full = false;
                for level in 1..=self.cfg.levels() {
                    for variant in self.baselines_at(rep, level) {
                        third.push(Job::Baseline { variant, level, k, rep });
                    }
                    for sub in self.stability_subnetworks(rep, level) {
                        if self.cfg.stability.data_order_pairs > 0 {
                            third.push(Job::DataOrder { sub, level, k, rep });
                        }
                        if self.cfg.stability.pruning_seeds > 0 {
                            third.push(Job::Pruning { sub, level, k, rep });
                            needs_full = true;
                        }
                    }
                }
                if needs_full {
                    second.push(Job::FullFromK { k, rep });
                }
            }
        }
        [first, second, third]
    }
}

enum Output {
    Full(TrainOutcome),
    Chain(Vec<LevelRecord>),
    FullFromK(Vec<ModelWeights>),
    Accuracy {
        surviving: f64,
        accuracy: f64,
        iterations: u64,
    },
    DataOrder(lth_core::stability::StabilityPair),
    Pruning(lth_core::stability::StabilityPair),
}

struct LevelRecord {
    mask: PruningMask,
    surviving: f64,
    accuracy: f64,
    iterations: u64,
    seconds: f64,
}

#[derive(Default)]
struct Store {
    full: BTreeMap<usize, TrainOutcome>,
    chains: BTreeMap<(usize, usize), Vec<LevelRecord>>,
    references: BTreeMap<(usize, usize), Vec<ModelWeights>>,
}

impl Store {
    fn rewind(&self, exp: &Experiment<'_>, k: usize, rep: usize) -> Result<Checkpoint> {
        let iteration = exp.cfg.rewind_iterations[k];
        self.full[&rep]
            .checkpoint_at(iteration)
            .cloned()
            .with_context(|| format!("no checkpoint at iteration {iteration}"))
    }

    fn imp_mask(&self, k: usize, rep: usize, level: usize) -> &PruningMask {
        &self.chains[&(k, rep)][level - 1].mask
    }
}

fn run_job(exp: &Experiment<'_>, store: &Store, job: Job) -> Result<Output> {
    let data = exp.data();
    Ok(match job {
        Job::Full { rep } => {
            let plan = exp.plan(0, rep)?;
            Output::Full(train_full(&plan, data)?.0)
        }
        Job::Chain { k, rep } => {
            let plan = exp.plan(k, rep)?;
            let rewind = store.rewind(exp, k, rep)?;
            let mut records = Vec::new();
            let mut clock = Instant::now();
            prune_levels(&plan, data, &store.full[&rep], &rewind, &exp.cfg.pruning, |l| {
                records.push(LevelRecord {
                    mask: l.mask.clone(),
                    surviving: l.surviving_fraction,
                    accuracy: l.accuracy,
                    iterations: l.iterations_trained,
                    seconds: clock.elapsed().as_secs_f64(),
                });
                clock = Instant::now();
            })?;
            Output::Chain(records)
        }
        Job::FullFromK { k, rep } => {
            let plan = exp.plan(k, rep)?;
            let rewind = store.rewind(exp, k, rep)?;
            let seeds = pruning_seeds(exp.seed(rep), exp.cfg.stability.pruning_seeds);
            Output::FullFromK(full_runs(&plan, data, &rewind, &seeds)?)
        }
        Job::Baseline { variant, level, k, rep } => {
            let plan = exp.plan(k, rep)?;
            let rewind = store.rewind(exp, k, rep)?;
            let (baseline, label) = match variant {
                Variant::Random => (Baseline::RandomMask, RANDOM_MASK_LABEL),
                Variant::Reinit => (Baseline::Reinit, REINIT_LABEL),
                Variant::Snip => (Baseline::Snip, 0),
                other => bail!("{} is not a baseline", other.name()),
            };
            let seed = derive_seed(exp.seed(rep), label);
            let run = baseline_variant(&plan, data, &rewind, store.imp_mask(k, rep, level), baseline, seed)?;
            Output::Accuracy {
                surviving: run.mask.surviving_fraction(plan.prune_scope),
                accuracy: run.outcome.accuracy,
                iterations: run.outcome.iterations,
            }
        }
        Job::DataOrder { sub, level, k, rep } | Job::Pruning { sub, level, k, rep } => {
            let plan = exp.plan(k, rep)?;
            let rewind = store.rewind(exp, k, rep)?;
            let imp = store.imp_mask(k, rep, level);
            let mask = match sub {
                SubnetworkKind::Imp => imp.clone(),
                SubnetworkKind::Random => random_mask_like(imp, derive_seed(exp.seed(rep), RANDOM_MASK_LABEL)),
            };
            if matches!(job, Job::DataOrder { .. }) {
                let pairs = data_order_pairs(exp.seed(rep), exp.cfg.stability.data_order_pairs);
                Output::DataOrder(data_order_stability(&plan, data, &rewind, &mask, sub, &pairs)?)
            } else {
                let seeds = pruning_seeds(exp.seed(rep), exp.cfg.stability.pruning_seeds);
                let full = &store.references[&(k, rep)];
                Output::Pruning(pruning_stability_against(&plan, data, &rewind, &mask, sub, &seeds, full)?)
            }
        }
    })
}

/// Runs `work` over `jobs` on `workers` threads and hands results to `done`
/// on the calling thread as they finish. The first error stops the pool.
pub fn run_pool<J: Sync, R: Send>(
    jobs: &[J],
    workers: usize,
    work: impl Fn(&J) -> Result<R> + Sync,
    mut done: impl FnMut(usize, R) -> Result<()>,
) -> Result<()> {
    if workers <= 1 || jobs.len() <= 1 {
        for (i, job) in jobs.iter().enumerate() {
            done(i, work(job)?)?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers.min(jobs.len()) {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let result = work(&jobs[i]);
                    if result.is_err() {
                        stop.store(true, Ordering::Relaxed);
                    }
                    if tx.send((i, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut first_error = None;
        for (i, result) in rx {
            if first_error.is_some() {
                continue;
            }
            if let Err(e) = result.and_then(|r| done(i, r)) {
                stop.store(true, Ordering::Relaxed);
                first_error = Some(e);
            }
        }
        first_error.map_or(Ok(()), Err)
    })
}

#[derive(Default)]
struct Partial {
    surviving: Option<f64>,
    accuracy: Option<f64>,
    iterations: u64,
    stability: Stability,
    wall: f64,
    pending: usize,
}

/// Collects contributions per row and releases finished rows in order.
struct Assembler<'e, 'a> {
    exp: &'e Experiment<'a>,
    keys: Vec<RowKey>,
    index: BTreeMap<RowKey, usize>,
    rows: Vec<Partial>,
    flushed: usize,
}

impl<'e, 'a> Assembler<'e, 'a> {
    fn new(exp: &'e Experiment<'a>, phases: &[Vec<Job>; 3]) -> Self {
        let keys = exp.row_keys();
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut a = Assembler {
            exp,
            rows: keys.iter().map(|_| Partial::default()).collect(),
            keys,
            index,
            flushed: 0,
        };
        for job in phases.iter().flatten() {
            for key in a.targets(*job) {
                a.rows[a.index[&key]].pending += 1;
            }
        }
        a
    }

    /// Rows a job contributes to.
    fn targets(&self, job: Job) -> Vec<RowKey> {
        let levels = self.exp.cfg.levels();
        match job {
            Job::Full { rep } => (0..self.exp.cfg.rewind_iterations.len())
                .map(|k| RowKey {
                    k,
                    rep,
                    level: 0,
                    variant: Variant::Full,
                })
                .collect(),
            Job::Chain { k, rep } => (1..=levels)
                .map(|level| RowKey {
                    k,
                    rep,
                    level,
                    variant: Variant::Imp,
                })
                .collect(),
            Job::FullFromK { .. } => Vec::new(),
            Job::Baseline { variant, level, k, rep } => vec![RowKey { k, rep, level, variant }],
            Job::DataOrder { sub, level, k, rep } | Job::Pruning { sub, level, k, rep } => vec![RowKey {
                k,
                rep,
                level,
                variant: variant_of(sub),
            }],
        }
    }

    fn row(&mut self, key: RowKey) -> &mut Partial {
        let i = self.index[&key];
        &mut self.rows[i]
    }

    fn absorb(&mut self, job: Job, out: &Output, seconds: f64) {
        match (job, out) {
            (Job::Full { .. }, Output::Full(outcome)) => {
                for key in self.targets(job) {
                    let row = self.row(key);
                    row.surviving = Some(1.0);
                    row.accuracy = Some(outcome.accuracy);
                    row.iterations = outcome.iterations;
                    row.wall += seconds;
                    row.pending -= 1;
                }
            }
            (Job::Chain { .. }, Output::Chain(records)) => {
                for (key, rec) in self.targets(job).into_iter().zip(records) {
                    let row = self.row(key);
                    row.surviving = Some(rec.surviving);
                    row.accuracy = Some(rec.accuracy);
                    row.iterations = rec.iterations;
                    row.wall += rec.seconds;
                    row.pending -= 1;
                }
            }
            (Job::Baseline { .. }, &Output::Accuracy {
                surviving,
                accuracy,
                iterations,
            }) => {
                let key = self.targets(job)[0];
                let row = self.row(key);
                row.surviving = Some(surviving);
                row.accuracy = Some(accuracy);
                row.iterations = iterations;
                row.wall += seconds;
                row.pending -= 1;
            }
            (Job::DataOrder { .. }, Output::DataOrder(pair)) | (Job::Pruning { .. }, Output::Pruning(pair)) => {
                let key = self.targets(job)[0];
                let row = self.row(key);
                let (dist, angle) = (Some(Band::from_report(&pair.distance)), Some(Band::from_report(&pair.angle)));
                if matches!(job, Job::DataOrder { .. }) {
                    row.stability.data_order_distance = dist;
                    row.stability.data_order_angle = angle;
                } else {
                    row.stability.pruning_distance = dist;
                    row.stability.pruning_angle = angle;
                }
                row.stability.iterations.extend(&pair.iterations);
                row.wall += seconds;
                row.pending -= 1;
            }
            (Job::FullFromK { k, rep }, Output::FullFromK(_)) => {
                // Shared by every pruning-stability row at (k, rep).
                let keys: Vec<RowKey> = self
                    .keys
                    .iter()
                    .copied()
                    .filter(|r| r.k == k && r.rep == rep && r.level > 0)
                    .filter(|r| {
                        self.exp
                            .stability_subnetworks(rep, r.level)
                            .iter()
                            .any(|&s| variant_of(s) == r.variant)
                    })
                    .collect();
                for key in &keys {
                    self.row(*key).wall += seconds / keys.len() as f64;
                }
            }
            _ => unreachable!("job and output kinds always match"),
        }
    }

    /// Rows that became complete, in order, since the last call.
    fn ready(&mut self) -> Vec<ResultRow> {
        let mut out = Vec::new();
        while self.flushed < self.keys.len() && self.rows[self.flushed].pending == 0 {
            let key = self.keys[self.flushed];
            let p = std::mem::take(&mut self.rows[self.flushed]);
            let cfg = self.exp.cfg;
            out.push(ResultRow {
                experiment: cfg.name.clone(),
                network: self.exp.arch.name.clone(),
                k: cfg.rewind_iterations[key.k],
                level: key.level,
                surviving: p.surviving.expect("set by the accuracy job"),
                variant: key.variant,
                replicate_seed: cfg.replicate_seeds[key.rep],
                accuracy: p.accuracy.expect("set by the accuracy job"),
                iterations: p.iterations,
                total_iterations: cfg.total_iterations(),
                stability: p.stability,
                wall_seconds: p.wall,
            });
            self.flushed += 1;
        }
        out
    }
}

fn describe(job: Job, exp: &Experiment<'_>) -> String {
    let k = |k: usize| exp.cfg.rewind_iterations[k];
    let s = |rep: usize| exp.seed(rep);
    match job {
        Job::Full { rep } => format!("full network, seed {}", s(rep)),
        Job::Chain { k: ki, rep } => format!("pruning chain k={} seed {}", k(ki), s(rep)),
        Job::FullFromK { k: ki, rep } => format!("full-network references k={} seed {}", k(ki), s(rep)),
        Job::Baseline { variant, level, k: ki, rep } => {
            format!("{} baseline level {level} k={} seed {}", variant.name(), k(ki), s(rep))
        }
        Job::DataOrder { sub, level, k: ki, rep } => {
            format!("data-order stability ({sub}) level {level} k={} seed {}", k(ki), s(rep))
        }
        Job::Pruning { sub, level, k: ki, rep } => {
            format!("pruning stability ({sub}) level {level} k={} seed {}", k(ki), s(rep))
        }
    }
}

/// Runs every job and streams rows to `sink` in row order.
pub fn execute<W: Write>(
    exp: &Experiment<'_>,
    workers: usize,
    sink: &mut CsvSink<W>,
    mut log: impl FnMut(&str),
) -> Result<Vec<ResultRow>> {
    let phases = exp.phases();
    let mut assembler = Assembler::new(exp, &phases);
    let mut store = Store::default();
    let mut written = Vec::new();
    for jobs in &phases {
        let mut outputs: Vec<(Job, Output)> = Vec::new();
        {
            let store_ref = &store;
            run_pool(
                jobs,
                workers,
                |&job| {
                    let t = Instant::now();
                    let out = run_job(exp, store_ref, job).with_context(|| describe(job, exp))?;
                    Ok((out, t.elapsed().as_secs_f64()))
                },
                |i, (out, secs)| {
                    let job = jobs[i];
                    log(&format!("done: {} ({secs:.1}s)", describe(job, exp)));
                    assembler.absorb(job, &out, secs);
                    for row in assembler.ready() {
                        sink.write(&row)?;
                        written.push(row);
                    }
                    outputs.push((job, out));
                    Ok(())
                },
            )?;
        }
        for (job, out) in outputs {
            match (job, out) {
                (Job::Full { rep }, Output::Full(o)) => {
                    store.full.insert(rep, o);
                }
                (Job::Chain { k, rep }, Output::Chain(records)) => {
                    store.chains.insert((k, rep), records);
                }
                (Job::FullFromK { k, rep }, Output::FullFromK(refs)) => {
                    store.references.insert((k, rep), refs);
                }
                _ => {}
            }
        }
    }
    if written.len() != assembler.keys.len() {
        bail!("internal error: {} of {} rows completed", written.len(), assembler.keys.len());
    }
    Ok(written)
}

pub fn results_path(cfg: &ExperimentConfig, output_dir: Option<&Path>) -> PathBuf {
    output_dir
        .unwrap_or(&cfg.output_dir)
        .join(format!("{}-results.csv", cfg.name))
}

/// Worker count from `LTH_WORKERS`, defaulting to the available cores.
pub fn worker_count() -> Result<usize> {
    match std::env::var("LTH_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("LTH_WORKERS must be a positive integer, found `{v}`"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

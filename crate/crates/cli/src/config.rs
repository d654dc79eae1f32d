//! Experiment definitions in a sectioned `key = value` format.
//!
//! ```text
//! # comment
//! [experiment]
//! name = lenet
//! [sweep]
//! rewind_iterations = 0, 1000
//! ```
//!
//! Every section and key is listed in `configs/README.md`. Unknown
//! sections or keys, duplicates and malformed values are errors that name
//! the offending line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lth_core::imp::PruneSchedule;
use lth_core::stability::SubnetworkKind;
use lth_core::{Architecture, Initializer, LrSchedule, OptimizerConfig, PruneScope, ScheduleShape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to a single line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Mnist {
        dir: PathBuf,
        /// 0 keeps every example.
        train_examples: usize,
        test_examples: usize,
    },
    Synthetic {
        seed: u64,
        train_examples: usize,
        test_examples: usize,
        dim: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSpec {
    Preset(Architecture),
    /// Dense ReLU stack whose input width and class count come from the data.
    Mlp { hidden: Vec<usize>, initializer: Initializer },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub random: bool,
    pub reinit: bool,
    pub snip: bool,
    /// Pruned levels that get baseline runs; empty means all of them.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    /// Pruned levels at which stability is measured; empty disables it.
    pub levels: Vec<usize>,
    pub data_order_pairs: usize,
    pub pruning_seeds: usize,
    pub subnetworks: Vec<SubnetworkKind>,
    /// Stability is measured for the first this-many replicate seeds.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub network: NetworkSpec,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub rewind_optimizer_state: bool,
    pub fresh_data_seed_per_level: bool,
    pub pruning: PruneSchedule,
    pub scope: PruneScope,
    pub rewind_iterations: Vec<u64>,
    pub replicate_seeds: Vec<u64>,
    pub baselines: Baselines,
    pub stability: StabilityConfig,
}

impl ExperimentConfig {
    pub fn total_iterations(&self) -> u64 {
        self.schedule.total_iterations
    }

    pub fn levels(&self) -> usize {
        self.pruning.levels()
    }

    pub fn baseline_levels(&self) -> Vec<usize> {
        let mut levels = if self.baselines.levels.is_empty() {
            (1..=self.levels()).collect()
        } else {
            self.baselines.levels.clone()
        };
        // Random-subnetwork stability is reported on the random baseline row.
        if self.stability.subnetworks.contains(&SubnetworkKind::Random) {
            levels.extend(&self.stability.levels);
        }
        levels.sort_unstable();
        levels.dedup();
        levels
    }

    pub fn any_baseline(&self) -> bool {
        self.baselines.random || self.baselines.reinit || self.baselines.snip
    }

    pub fn stability_enabled(&self) -> bool {
        !self.stability.levels.is_empty() && !self.stability.subnetworks.is_empty()
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Raw sections, consumed key by key so leftovers can be reported.
struct Document {
    sections: BTreeMap<String, Section>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("experiment", &["name", "output_dir"]),
    ("data", &["source", "dir", "train_examples", "test_examples", "seed", "dim", "classes"]),
    ("network", &["preset", "hidden", "initializer"]),
    ("optimizer", &["kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon"]),
    ("schedule", &["shape", "drops", "factor", "warmup", "end"]),
    ("training", &["iterations", "batch_size", "rewind_optimizer_state", "fresh_data_seed_per_level"]),
    ("pruning", &["mode", "rate", "levels", "target_sparsities", "include_biases", "global"]),
    ("sweep", &["rewind_iterations", "replicate_seeds"]),
    ("baselines", &["random", "reinit", "snip", "levels"]),
    ("stability", &["levels", "data_order_pairs", "pruning_seeds", "subnetworks", "replicates"]),
];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    SECTIONS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}


impl Document {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError {
                        line,
                        message: format!("malformed section header `{content}`"),
                    })?
                    .trim();
                if known_keys(name).is_none() {
                    return err(line, format!("unknown section [{name}]"));
                }
                if sections.contains_key(name) {
                    return err(line, format!("section [{name}] appears twice"));
                }
                sections.insert(
                    name.to_string(),
                    Section {
                        line,
                        entries: BTreeMap::new(),
                    },
                );
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return err(line, format!("expected `key = value`, found `{content}`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return err(line, "missing key before `=`");
            }
            let Some(section) = &current else {
                return err(line, format!("`{key}` appears before any section header"));
            };
            if !known_keys(section).is_some_and(|k| k.contains(&key)) {
                return err(line, format!("unknown key `{key}` in [{section}]"));
            }
            let entries = &mut sections.get_mut(section).expect("inserted").entries;
            if entries.contains_key(key) {
                return err(line, format!("duplicate key `{key}` in [{section}]"));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        Ok(Document { sections })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.sections.get_mut(section)?.entries.remove(key)
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.get(section).map_or(0, |s| s.line)
    }

    fn required(&mut self, section: &str, key: &str) -> Result<Entry, ConfigError> {
        let line = self.section_line(section);
        self.take(section, key).ok_or_else(|| ConfigError {
            line,
            message: format!("missing `{key}` in [{section}]"),
        })
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .or_else(|_| err(e.line, format!("`{key}` must be {what}, found `{}`", e.value))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: Option<T>) -> Result<T, ConfigError> {
        let line = self.section_line(section);
        match self.parsed(section, key, "a number")? {
            Some(v) => Ok(v),
            None => default.ok_or_else(|| ConfigError {
                line,
                message: format!("missing `{key}` in [{section}]"),
            }),
        }
    }

    fn flag(&mut self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parsed(section, key, "true or false")?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&mut self, section: &str, key: &str) -> Result<Option<(Vec<T>, usize)>, ConfigError> {
        let Some(e) = self.take(section, key) else {
            return Ok(None);
        };
        if e.value.is_empty() {
            return Ok(Some((Vec::new(), e.line)));
        }
        let items = e
            .value
            .split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .or_else(|_| err(e.line, format!("`{key}` has a malformed item `{}`", item.trim())))
            })
            .collect::<Result<Vec<T>, _>>()?;
        Ok(Some((items, e.line)))
    }

    fn finish(self) -> Result<(), ConfigError> {
        let mut leftovers: Vec<(usize, String)> = self
            .sections
            .iter()
            .flat_map(|(name, s)| s.entries.iter().map(move |(k, e)| (e.line, format!("`{k}` in [{name}] has no effect with these settings"))))
            .collect();
        leftovers.sort();
        match leftovers.into_iter().next() {
            Some((line, message)) => err(line, message),
            None => Ok(()),
        }
    }
}

fn is_file_stem(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn ascending_unique<T: PartialOrd>(items: &[T]) -> bool {
    items.windows(2).all(|w| w[0] < w[1])
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut doc = Document::parse(text)?;

    let name = doc.required("experiment", "name")?;
    if !is_file_stem(&name.value) {
        return err(name.line, format!("experiment name `{}` is not usable as a file stem", name.value));
    }
    let output_dir = doc
        .take("experiment", "output_dir")
        .map_or_else(|| PathBuf::from("results"), |e| PathBuf::from(e.value));

    let source = doc.required("data", "source")?;
    let data = match source.value.as_str() {
        "mnist" => DataSource::Mnist {
            dir: doc
                .take("data", "dir")
                .map_or_else(|| PathBuf::from("data/mnist"), |e| PathBuf::from(e.value)),
            train_examples: doc.number("data", "train_examples", Some(0))?,
            test_examples: doc.number("data", "test_examples", Some(0))?,
        },
        "synthetic" => {
            let d = DataSource::Synthetic {
                seed: doc.number("data", "seed", Some(0))?,
                train_examples: doc.number("data", "train_examples", None)?,
                test_examples: doc.number("data", "test_examples", None)?,
                dim: doc.number("data", "dim", None)?,
                classes: doc.number("data", "classes", None)?,
            };
            if let DataSource::Synthetic {
                train_examples,
                test_examples,
                dim,
                classes,
                ..
            } = d
            {
                if classes < 2 || dim == 0 || train_examples < classes || test_examples == 0 {
                    return err(source.line, "synthetic data needs classes >= 2, dim >= 1, train_examples >= classes and test_examples >= 1");
                }
            }
            d
        }
        other => return err(source.line, format!("unknown data source `{other}` (mnist, synthetic)")),
    };

    let preset = doc.required("network", "preset")?;
    let initializer = match doc.take("network", "initializer") {
        None => None,
        Some(e) => Some(
            Initializer::parse(&e.value)
                .ok_or_else(|| ConfigError {
                    line: e.line,
                    message: format!("unknown initializer `{}`", e.value),
                })?,
        ),
    };
    let network = if preset.value == "mlp" {
        let (hidden, line) = doc.list::<usize>("network", "hidden")?.ok_or_else(|| ConfigError {
            line: preset.line,
            message: "preset `mlp` needs `hidden`".into(),
        })?;
        if hidden.contains(&0) {
            return err(line, "hidden widths must be positive");
        }
        NetworkSpec::Mlp {
            hidden,
            initializer: initializer.unwrap_or(Initializer::HeNormal),
        }
    } else {
        let mut arch = Architecture::preset(&preset.value).ok_or_else(|| ConfigError {
            line: preset.line,
            message: format!("unknown preset `{}` (lenet-300-100, small-cnn, mlp)", preset.value),
        })?;
        if let Some(init) = initializer {
            arch.initializer = init;
        }
        NetworkSpec::Preset(arch)
    };

    let kind = doc.required("optimizer", "kind")?;
    let optimizer = match kind.value.as_str() {
        "adam" => {
            let OptimizerConfig::Adam { beta1, beta2, epsilon } = OptimizerConfig::adam() else {
                unreachable!()
            };
            OptimizerConfig::Adam {
                beta1: doc.number("optimizer", "beta1", Some(beta1))?,
                beta2: doc.number("optimizer", "beta2", Some(beta2))?,
                epsilon: doc.number("optimizer", "epsilon", Some(epsilon))?,
            }
        }
        "sgd-momentum" => OptimizerConfig::SgdMomentum {
            momentum: doc.number("optimizer", "momentum", Some(0.9))?,
        },
        other => return err(kind.line, format!("unknown optimizer `{other}` (adam, sgd-momentum)")),
    };
    if let Err(e) = optimizer.validate() {
        return err(kind.line, e.to_string());
    }
    let base: f64 = doc.number("optimizer", "learning_rate", None)?;

    let iterations: u64 = doc.number("training", "iterations", None)?;
    let batch_size: usize = doc.number("training", "batch_size", None)?;
    if batch_size == 0 {
        return err(doc.section_line("training"), "batch_size must be positive");
    }
    let rewind_optimizer_state = doc.flag("training", "rewind_optimizer_state", true)?;
    let fresh_data_seed_per_level = doc.flag("training", "fresh_data_seed_per_level", false)?;

    let shape_entry = doc.take("schedule", "shape");
    let shape_line = shape_entry.as_ref().map_or(doc.section_line("schedule"), |e| e.line);
    let drops = |doc: &mut Document| -> Result<Vec<u64>, ConfigError> {
        Ok(doc.list("schedule", "drops")?.map(|(v, _)| v).unwrap_or_default())
    };
    let shape = match shape_entry.as_ref().map_or("constant", |e| e.value.as_str()) {
        "constant" => ScheduleShape::Constant,
        "step-drop" => ScheduleShape::StepDrop {
            drops: drops(&mut doc)?,
            factor: doc.number("schedule", "factor", Some(0.1))?,
        },
        "warmup-step-drop" => ScheduleShape::WarmupStepDrop {
            warmup: doc.number("schedule", "warmup", None)?,
            drops: drops(&mut doc)?,
            factor: doc.number("schedule", "factor", Some(0.1))?,
        },
        "linear-decay" => ScheduleShape::LinearDecay {
            end: doc.number("schedule", "end", Some(0.0))?,
        },
        other => {
            return err(
                shape_line,
                format!("unknown schedule `{other}` (constant, step-drop, warmup-step-drop, linear-decay)"),
            )
        }
    };
    let schedule = LrSchedule {
        base,
        total_iterations: iterations,
        shape,
    };
    if let Err(e) = schedule.validate() {
        return err(shape_line, e.to_string());
    }

    let mode = doc.take("pruning", "mode");
    let mode_line = mode.as_ref().map_or(doc.section_line("pruning"), |e| e.line);
    let pruning = match mode.as_ref().map_or("iterative", |e| e.value.as_str()) {
        "iterative" => PruneSchedule::Iterative {
            rate: doc.number("pruning", "rate", Some(0.2))?,
            levels: doc.number("pruning", "levels", None)?,
        },
        "one-shot" => PruneSchedule::OneShot {
            sparsities: doc
                .list("pruning", "target_sparsities")?
                .map(|(v, _)| v)
                .unwrap_or_default(),
        },
        other => return err(mode_line, format!("unknown pruning mode `{other}` (iterative, one-shot)")),
    };
    if let Err(e) = pruning.validate() {
        return err(mode_line, e.to_string());
    }
    let scope = PruneScope {
        include_biases: doc.flag("pruning", "include_biases", false)?,
        global: doc.flag("pruning", "global", false)?,
    };

    let sweep_line = doc.section_line("sweep");
    let (rewind_iterations, k_line) = doc.list::<u64>("sweep", "rewind_iterations")?.unwrap_or((Vec::new(), sweep_line));
    let (replicate_seeds, seed_line) = doc.list::<u64>("sweep", "replicate_seeds")?.unwrap_or((Vec::new(), sweep_line));
    if rewind_iterations.is_empty() || replicate_seeds.is_empty() {
        return err(sweep_line, "empty sweep: rewind_iterations and replicate_seeds need at least one value each");
    }
    if !ascending_unique(&rewind_iterations) {
        return err(k_line, "rewind_iterations must be strictly ascending");
    }
    if let Some(&k) = rewind_iterations.iter().find(|&&k| k >= iterations) {
        return err(k_line, format!("rewind iteration {k} must be below iterations = {iterations}"));
    }
    let mut sorted = replicate_seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != replicate_seeds.len() {
        return err(seed_line, "replicate_seeds must be distinct");
    }

    let levels = pruning.levels();
    let level_list = |doc: &mut Document, section: &str| -> Result<Vec<usize>, ConfigError> {
        match doc.list::<usize>(section, "levels")? {
            None => Ok(Vec::new()),
            Some((v, line)) => {
                if !ascending_unique(&v) || v.iter().any(|&l| l == 0 || l > levels) {
                    return err(line, format!("levels must be strictly ascending within 1..={levels}"));
                }
                Ok(v)
            }
        }
    };
    let baselines = Baselines {
        random: doc.flag("baselines", "random", false)?,
        reinit: doc.flag("baselines", "reinit", false)?,
        snip: doc.flag("baselines", "snip", false)?,
        levels: level_list(&mut doc, "baselines")?,
    };

    let subnetworks = match doc.take("stability", "subnetworks") {
        None => vec![SubnetworkKind::Imp, SubnetworkKind::Random],
        Some(e) => {
            let mut out = Vec::new();
            for item in e.value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let kind = match item {
                    "imp" => SubnetworkKind::Imp,
                    "random" => SubnetworkKind::Random,
                    other => return err(e.line, format!("unknown subnetwork `{other}` (imp, random)")),
                };
                if !out.contains(&kind) {
                    out.push(kind);
                }
            }
            out
        }
    };
    let stability = StabilityConfig {
        levels: level_list(&mut doc, "stability")?,
        data_order_pairs: doc.number("stability", "data_order_pairs", Some(3))?,
        pruning_seeds: doc.number("stability", "pruning_seeds", Some(3))?,
        subnetworks,
        replicates: doc.number("stability", "replicates", Some(1))?,
    };
    if !stability.levels.is_empty() && stability.data_order_pairs + stability.pruning_seeds == 0 {
        return err(doc.section_line("stability"), "stability needs data_order_pairs or pruning_seeds");
    }

    doc.finish()?;
    Ok(ExperimentConfig {
        name: name.value,
        output_dir,
        data,
        network,
        optimizer,
        schedule,
        batch_size,
        rewind_optimizer_state,
        fresh_data_seed_per_level,
        pruning,
        scope,
        rewind_iterations,
        replicate_seeds,
        baselines,
        stability,
    })
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[experiment]
name = tiny
[data]
source = synthetic
train_examples = 40
test_examples = 20
dim = 5
classes = 2
[network]
preset = mlp
hidden = 8
[optimizer]
kind = sgd-momentum
learning_rate = 0.05
[training]
iterations = 30
batch_size = 10
[pruning]
levels = 2
[sweep]
rewind_iterations = 0, 5
replicate_seeds = 1
";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.name, "tiny");
        assert_eq!(c.output_dir, PathBuf::from("results"));
        assert_eq!(c.pruning, PruneSchedule::Iterative { rate: 0.2, levels: 2 });
        assert_eq!(c.optimizer, OptimizerConfig::SgdMomentum { momentum: 0.9 });
        assert_eq!(c.schedule, LrSchedule::constant(0.05, 30));
        assert_eq!(c.rewind_iterations, vec![0, 5]);
        assert!(c.rewind_optimizer_state);
        assert!(!c.stability_enabled());
        assert!(!c.any_baseline());
    }

    fn with(extra: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config(&format!("{MINIMAL}{extra}"))
    }

    #[test]
    fn errors_name_their_line() {
        let e = parse_config("[experiment]\nname = a b\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_config("[experiment]\nname = x\n[bogus]\n").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (3, "unknown section [bogus]"));
        let e = with("[stability]\nwhatever = 1\n").unwrap_err();
        assert!(e.message.contains("unknown key `whatever`"), "{e}");
        assert_eq!(e.line, 25);
        let e = parse_config(&MINIMAL.replace("batch_size = 10", "batch_size = ten")).unwrap_err();
        assert_eq!(e.line, 18);
        let e = parse_config(&MINIMAL.replace("iterations = 30", "iterations = 30\niterations = 31")).unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert!(parse_config("name = x\n").unwrap_err().message.contains("before any section"));
    }

    #[test]
    fn sweep_contracts() {
        let e = parse_config(&MINIMAL.replace("rewind_iterations = 0, 5", "rewind_iterations =")).unwrap_err();
        assert!(e.message.starts_with("empty sweep"), "{e}");
        let e = parse_config(&MINIMAL.replace("rewind_iterations = 0, 5", "rewind_iterations = 0, 30")).unwrap_err();
        assert!(e.message.contains("below iterations"), "{e}");
        let e = parse_config(&MINIMAL.replace("replicate_seeds = 1", "replicate_seeds = 1, 1")).unwrap_err();
        assert!(e.message.contains("distinct"));
        let e = with("[baselines]\nrandom = true\nlevels = 3\n").unwrap_err();
        assert!(e.message.contains("levels"), "{e}");
        let e = parse_config(&MINIMAL.replace("levels = 2", "mode = one-shot\ntarget_sparsities = 0.5, 0.2")).unwrap_err();
        assert!(e.message.contains("ascend"), "{e}");
    }

    #[test]
    fn optional_sections() {
        let c = with("[baselines]\nrandom = true\nsnip = true\nlevels = 2\n[stability]\nlevels = 1\nsubnetworks = imp, random\n")
            .unwrap();
        assert_eq!(c.baseline_levels(), vec![1, 2]);
        assert!(c.stability_enabled());
        assert_eq!(c.stability.data_order_pairs, 3);
        let c = parse_config(&MINIMAL.replace("kind = sgd-momentum", "kind = adam\nbeta2 = 0.99")).unwrap();
        assert_eq!(
            c.optimizer,
            OptimizerConfig::Adam {
                beta1: 0.9,
                beta2: 0.99,
                epsilon: 1e-8
            }
        );
    }
}

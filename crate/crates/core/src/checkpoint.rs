//! Exact training states, persisted for rewinding.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! "LTCK" | version u32 = 1 | architecture fingerprint [32]
//! | iteration u64 | data-order seed u64
//! | optimizer tag u8 (1 = sgd-momentum, 2 = adam)
//! | hyperparameters f64: momentum, or beta1 beta2 epsilon
//! | optimizer step u64
//! | tensor count u32
//! | weight records, then one record set per optimizer buffer
//! record: name len u32 | name | kind u8 | rank u32 | dims u32 x rank | f64 x len
//! ```
//!
//! Encoding is canonical: saving the same state twice yields identical bytes.

use std::path::Path;

use crate::arch::Architecture;
use crate::binfmt::{write_atomic, Decoder, Encoder};
use crate::data::DataOrderSeed;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::tensor::Tensor;
use crate::weights::{ModelWeights, Param, ParamKind};

const MAGIC: &[u8; 4] = b"LTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub weights: ModelWeights,
    pub optimizer: OptimizerState,
    pub data_seed: DataOrderSeed,
    pub fingerprint: [u8; 32],
}

impl Checkpoint {
    /// The state before the first optimizer step.
    pub fn initial(arch: &Architecture, weights: ModelWeights, optimizer: OptimizerConfig, data_seed: DataOrderSeed) -> Self {
        let optimizer = OptimizerState::new(optimizer, &weights);
        Checkpoint {
            iteration: 0,
            weights,
            optimizer,
            data_seed,
            fingerprint: arch.fingerprint(),
        }
    }

    /// Same state, different data order for the iterations that follow.
    pub fn with_data_seed(&self, seed: DataOrderSeed) -> Self {
        Checkpoint {
            data_seed: seed,
            ..self.clone()
        }
    }

    pub fn bit_identical(&self, other: &Checkpoint) -> bool {
        self.iteration == other.iteration
            && self.data_seed == other.data_seed
            && self.fingerprint == other.fingerprint
            && self.optimizer.config == other.optimizer.config
            && self.optimizer.step == other.optimizer.step
            && self.weights.bit_identical(&other.weights)
            && self.optimizer.slots.len() == other.optimizer.slots.len()
            && self
                .optimizer
                .slots
                .iter()
                .zip(&other.optimizer.slots)
                .all(|(a, b)| a.bit_identical(b))
    }
}

fn write_tensors(e: &mut Encoder, weights: &ModelWeights) -> Result<()> {
    for p in weights.params() {
        e.len_u32(p.name.len())?;
        e.bytes(p.name.as_bytes());
        e.u8(p.kind.tag());
        e.len_u32(p.tensor.dims().len())?;
        for &d in p.tensor.dims() {
            e.len_u32(d)?;
        }
        for &v in p.tensor.data() {
            e.f64(v);
        }
    }
    Ok(())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut e = Encoder::new();
    e.bytes(MAGIC);
    e.u32(CHECKPOINT_VERSION);
    e.bytes(&ck.fingerprint);
    e.u64(ck.iteration);
    e.u64(ck.data_seed.0);
    e.u8(ck.optimizer.config.tag());
    match ck.optimizer.config {
        OptimizerConfig::SgdMomentum { momentum } => e.f64(momentum),
        OptimizerConfig::Adam { beta1, beta2, epsilon } => {
            e.f64(beta1);
            e.f64(beta2);
            e.f64(epsilon);
        }
    }
    e.u64(ck.optimizer.step);
    e.len_u32(ck.weights.len())?;
    write_tensors(&mut e, &ck.weights)?;
    for slot in &ck.optimizer.slots {
        slot.check_congruent(&ck.weights)?;
        write_tensors(&mut e, slot)?;
    }
    Ok(e.finish())
}

fn corrupt(_offset: u64, detail: String) -> Error {
    Error::CorruptPayload(detail)
}

fn read_tensors(d: &mut Decoder<'_>, count: usize) -> Result<ModelWeights> {
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = d.u32("name length", corrupt)? as usize;
        let name = String::from_utf8(d.take(name_len, "tensor name", corrupt)?.to_vec())
            .map_err(|_| Error::CorruptPayload("tensor name is not UTF-8".into()))?;
        let kind = ParamKind::from_tag(d.u8("tensor kind", corrupt)?)
            .ok_or_else(|| Error::CorruptPayload(format!("unknown kind for `{name}`")))?;
        let rank = d.u32("rank", corrupt)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::CorruptPayload(format!("implausible rank {rank} for `{name}`")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(d.u32("dimension", corrupt)? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = d.take(len * 8, "tensor payload", corrupt)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(dims, data).map_err(|e| Error::CorruptPayload(e.to_string()))?;
        params.push(Param { name, kind, tensor });
    }
    ModelWeights::new(params).map_err(|e| Error::CorruptPayload(e.to_string()))
}

/// Decodes and validates against the architecture the caller expects.
pub fn decode_checkpoint(bytes: &[u8], arch: &Architecture) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let mut d = Decoder::new(&bytes[4..]);
    let version = d.u32("version", corrupt)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let fingerprint: [u8; 32] = d.take(32, "fingerprint", corrupt)?.try_into().expect("32 bytes");
    if fingerprint != arch.fingerprint() {
        return Err(Error::ArchitectureMismatch);
    }
    let iteration = d.u64("iteration", corrupt)?;
    let data_seed = DataOrderSeed(d.u64("data-order seed", corrupt)?);
    let config = match d.u8("optimizer tag", corrupt)? {
        1 => OptimizerConfig::SgdMomentum {
            momentum: d.f64("momentum", corrupt)?,
        },
        2 => OptimizerConfig::Adam {
            beta1: d.f64("beta1", corrupt)?,
            beta2: d.f64("beta2", corrupt)?,
            epsilon: d.f64("epsilon", corrupt)?,
        },
        tag => return Err(Error::CorruptPayload(format!("unknown optimizer tag {tag}"))),
    };
    let step = d.u64("optimizer step", corrupt)?;
    let count = d.u32("tensor count", corrupt)? as usize;
    let weights = read_tensors(&mut d, count)?;
    let slot_count = match config {
        OptimizerConfig::SgdMomentum { .. } => 1,
        OptimizerConfig::Adam { .. } => 2,
    };
    let mut slots = Vec::with_capacity(slot_count);
    for _ in 0..slot_count {
        let slot = read_tensors(&mut d, count)?;
        slot.check_congruent(&weights)
            .map_err(|e| Error::CorruptPayload(e.to_string()))?;
        slots.push(slot);
    }
    if !d.is_done() {
        return Err(Error::CorruptPayload("trailing bytes".into()));
    }
    arch.check_weights(&weights)
        .map_err(|e| Error::CorruptPayload(e.to_string()))?;
    Ok(Checkpoint {
        iteration,
        weights,
        optimizer: OptimizerState { config, step, slots },
        data_seed,
        fingerprint,
    })
}

/// Writes via a temporary file and rename; an interrupted save leaves any
/// previous file at `path` intact.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path, arch: &Architecture) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, arch)
}

//! Pruning masks and the procedures that produce them.
//!
//! A [`PruningMask`] holds one binary tensor per parameter tensor of a
//! [`ModelWeights`]. Producers never resurrect a pruned position. All
//! selections break ties on magnitude or score by the lower flat index, with
//! flat indices counted row-major within a tensor and, for cross-layer
//! selection, across tensors in declaration order.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::arch::Architecture;
use crate::binfmt::{write_atomic, Decoder, Encoder};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn;
use crate::weights::{ModelWeights, Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Trivial,
    Magnitude,
    Random,
    Snip,
}

impl Provenance {
    fn tag(self) -> u8 {
        match self {
            Provenance::Trivial => 0,
            Provenance::Magnitude => 1,
            Provenance::Random => 2,
            Provenance::Snip => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Provenance::Trivial,
            1 => Provenance::Magnitude,
            2 => Provenance::Random,
            3 => Provenance::Snip,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskLayer {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub bits: Vec<bool>,
}

impl MaskLayer {
    pub fn surviving(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruningMask {
    layers: Vec<MaskLayer>,
    pub provenance: Provenance,
}

/// Which tensors a pruning procedure may touch and how it selects.
/// The default prunes weights only, per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PruneScope {
    pub include_biases: bool,
    pub global: bool,
}

impl PruneScope {
    pub fn covers(&self, kind: ParamKind) -> bool {
        self.include_biases || !kind.is_bias()
    }
}

impl PruningMask {
    /// The all-ones mask congruent to `weights`.
    pub fn trivial(weights: &ModelWeights) -> Self {
        PruningMask {
            layers: weights
                .params()
                .iter()
                .map(|p| MaskLayer {
                    name: p.name.clone(),
                    kind: p.kind,
                    dims: p.tensor.dims().to_vec(),
                    bits: vec![true; p.tensor.len()],
                })
                .collect(),
            provenance: Provenance::Trivial,
        }
    }

    pub fn trivial_for(arch: &Architecture) -> Self {
        PruningMask {
            layers: arch
                .param_specs()
                .into_iter()
                .map(|s| {
                    let len = s.dims.iter().product();
                    MaskLayer {
                        name: s.name,
                        kind: s.kind,
                        dims: s.dims,
                        bits: vec![true; len],
                    }
                })
                .collect(),
            provenance: Provenance::Trivial,
        }
    }

    pub fn from_layers(layers: Vec<MaskLayer>, provenance: Provenance) -> Result<Self> {
        for l in &layers {
            if l.dims.iter().product::<usize>() != l.bits.len() {
                return Err(Error::shape(l.name.clone(), "mask bits do not match dims"));
            }
        }
        Ok(PruningMask { layers, provenance })
    }

    pub fn layers(&self) -> &[MaskLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&MaskLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn check_congruent(&self, weights: &ModelWeights) -> Result<()> {
        if self.layers.len() != weights.len() {
            return Err(Error::shape(
                "<mask>",
                format!("mask has {} tensors, weights have {}", self.layers.len(), weights.len()),
            ));
        }
        for (l, p) in self.layers.iter().zip(weights.params()) {
            if l.name != p.name || l.dims != p.tensor.dims() {
                return Err(Error::shape(
                    p.name.clone(),
                    format!("mask `{}` {:?} vs weights {:?}", l.name, l.dims, p.tensor.dims()),
                ));
            }
        }
        Ok(())
    }

    /// ‖m‖₁ over every tensor.
    pub fn surviving(&self) -> usize {
        self.layers.iter().map(MaskLayer::surviving).sum()
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(MaskLayer::len).sum()
    }

    /// ‖m‖₁ / D over every tensor.
    pub fn density(&self) -> f64 {
        self.surviving() as f64 / self.total_len() as f64
    }

    /// Fraction of positions that survive among the tensors `scope` covers.
    pub fn surviving_fraction(&self, scope: PruneScope) -> f64 {
        let (alive, total) = self
            .layers
            .iter()
            .filter(|l| scope.covers(l.kind))
            .fold((0, 0), |(a, t), l| (a + l.surviving(), t + l.len()));
        alive as f64 / total as f64
    }

    pub fn is_full(&self) -> bool {
        self.layers.iter().all(MaskLayer::is_full)
    }

    /// Pointwise m ≤ other.
    pub fn is_subset_of(&self, other: &PruningMask) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.bits.len() == b.bits.len() && a.bits.iter().zip(&b.bits).all(|(&x, &y)| !x || y)
            })
    }

    /// Surviving count per tensor, in declaration order.
    pub fn surviving_counts(&self) -> Vec<usize> {
        self.layers.iter().map(MaskLayer::surviving).collect()
    }
}

/// m ⊙ W, leaving `weights` untouched.
pub fn apply_mask(mask: &PruningMask, weights: &ModelWeights) -> Result<ModelWeights> {
    let mut out = weights.clone();
    apply_mask_in_place(mask, &mut out)?;
    Ok(out)
}

pub fn apply_mask_in_place(mask: &PruningMask, weights: &mut ModelWeights) -> Result<()> {
    mask.check_congruent(weights)?;
    for (l, p) in mask.layers.iter().zip(weights.params_mut()) {
        for (v, &keep) in p.tensor.data_mut().iter_mut().zip(&l.bits) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok(())
}

fn check_rate(rate: f64, what: &str) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("{what} must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Removes the fraction `rate` of still-surviving entries with the smallest
/// |W|. Per layer by default: each covered tensor loses
/// ⌊rate · surviving⌋ entries. With `scope.global`, one pooled cut of
/// ⌊rate · total surviving⌋ is taken across all covered tensors.
pub fn magnitude_prune(
    weights: &ModelWeights,
    mask: &PruningMask,
    rate: f64,
    scope: PruneScope,
) -> Result<PruningMask> {
    check_rate(rate, "pruning rate")?;
    mask.check_congruent(weights)?;
    let mut out = mask.clone();
    out.provenance = Provenance::Magnitude;

    // (magnitude, layer, flat index) for every surviving covered entry
    let candidates = |li: usize, l: &MaskLayer, p: &Param| -> Vec<(f64, usize, usize)> {
        l.bits
            .iter()
            .zip(p.tensor.data())
            .enumerate()
            .filter(|(_, (&keep, _))| keep)
            .map(|(i, (_, w))| (w.abs(), li, i))
            .collect()
    };
    let by_magnitude = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };

    if scope.global {
        let mut pool = Vec::new();
        for (li, (l, p)) in mask.layers.iter().zip(weights.params()).enumerate() {
            if scope.covers(l.kind) {
                pool.extend(candidates(li, l, p));
            }
        }
        let count = (rate * pool.len() as f64).floor() as usize;
        pool.sort_unstable_by(by_magnitude);
        for &(_, li, i) in &pool[..count] {
            out.layers[li].bits[i] = false;
        }
    } else {
        for (li, (l, p)) in mask.layers.iter().zip(weights.params()).enumerate() {
            if !scope.covers(l.kind) {
                continue;
            }
            let mut pool = candidates(li, l, p);
            let count = (rate * pool.len() as f64).floor() as usize;
            pool.sort_unstable_by(by_magnitude);
            for &(_, _, i) in &pool[..count] {
                out.layers[li].bits[i] = false;
            }
        }
    }
    Ok(out)
}

/// A uniformly random mask with exactly the reference's surviving count in
/// every tensor. Tensor `i` shuffles with stream `i` of the random-mask domain for `seed`.
pub fn random_mask_like(reference: &PruningMask, seed: u64) -> PruningMask {
    let layers = reference
        .layers
        .iter()
        .enumerate()
        .map(|(li, l)| {
            let keep = l.surviving();
            let bits = if keep == l.len() {
                vec![true; l.len()]
            } else {
                let mut rng = crate::rng::stream(crate::rng::RANDOM_MASK, seed, li as u64);
                let mut order: Vec<usize> = (0..l.len()).collect();
                order.shuffle(&mut rng);
                let mut bits = vec![false; l.len()];
                for &i in &order[..keep] {
                    bits[i] = true;
                }
                bits
            };
            MaskLayer {
                name: l.name.clone(),
                kind: l.kind,
                dims: l.dims.clone(),
                bits,
            }
        })
        .collect();
    PruningMask {
        layers,
        provenance: Provenance::Random,
    }
}

/// Connection sensitivity |w · ∂L/∂w| on one batch, which equals |∂L/∂c| for
/// a multiplicative gate c placed on each weight and evaluated at c = 1.
pub fn snip_scores(arch: &Architecture, weights: &ModelWeights, batch: &Batch) -> Result<ModelWeights> {
    let full = PruningMask::trivial(weights);
    let grads = nn::backward(arch, weights, &full, batch)?;
    let mut scores = grads;
    for (s, w) in scores.params_mut().iter_mut().zip(weights.params()) {
        for (g, &wv) in s.tensor.data_mut().iter_mut().zip(w.tensor.data()) {
            *g = (wv * *g).abs();
        }
    }
    Ok(scores)
}

/// Prunes the globally lowest-scoring ⌊sparsity · D⌋ covered entries, where
/// D counts the entries of covered tensors.
pub fn snip_prune(scores: &ModelWeights, sparsity: f64, scope: PruneScope) -> Result<PruningMask> {
    check_rate(sparsity, "target sparsity")?;
    let mut mask = PruningMask::trivial(scores);
    mask.provenance = Provenance::Snip;
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (li, p) in scores.params().iter().enumerate() {
        if scope.covers(p.kind) {
            pool.extend(p.tensor.data().iter().enumerate().map(|(i, &s)| (s, li, i)));
        }
    }
    let count = (sparsity * pool.len() as f64).floor() as usize;
    pool.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, li, i) in &pool[..count] {
        mask.layers[li].bits[i] = false;
    }
    Ok(mask)
}

/// Fresh weights from the architecture's initializer.
pub fn reinitialize(arch: &Architecture, seed: u64) -> ModelWeights {
    arch.initialize(seed)
}

const MASK_MAGIC: &[u8; 4] = b"LTMK";
const MASK_VERSION: u32 = 1;

fn format_error(offset: u64, detail: String) -> Error {
    Error::Format { offset, detail }
}

/// Mask file layout (little-endian):
///
/// ```text
/// "LTMK" | version u32 = 1 | provenance u8 | layer count u32
/// per layer: name len u32 | name | kind u8 | rank u32 | dims u32 x rank
///            | bits, LSB-first, padded to a whole byte
/// ```
pub fn encode_mask(mask: &PruningMask) -> Result<Vec<u8>> {
    let mut e = Encoder::new();
    e.bytes(MASK_MAGIC);
    e.u32(MASK_VERSION);
    e.u8(mask.provenance.tag());
    e.len_u32(mask.layers.len())?;
    for l in &mask.layers {
        e.len_u32(l.name.len())?;
        e.bytes(l.name.as_bytes());
        e.u8(l.kind.tag());
        e.len_u32(l.dims.len())?;
        for &d in &l.dims {
            e.len_u32(d)?;
        }
        for chunk in l.bits.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i));
            e.u8(byte);
        }
    }
    Ok(e.finish())
}

pub fn decode_mask(bytes: &[u8]) -> Result<PruningMask> {
    let mut d = Decoder::new(bytes);
    let magic = d.take(4, "magic", format_error)?;
    if magic != MASK_MAGIC {
        return Err(format_error(0, "wrong magic: not a mask file".into()));
    }
    let version = d.u32("version", format_error)?;
    if version != MASK_VERSION {
        return Err(format_error(4, format!("unsupported mask version {version}")));
    }
    let provenance = Provenance::from_tag(d.u8("provenance", format_error)?)
        .ok_or_else(|| format_error(8, "unknown provenance tag".into()))?;
    let count = d.u32("layer count", format_error)? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = d.u32("name length", format_error)? as usize;
        let name = String::from_utf8(d.take(name_len, "layer name", format_error)?.to_vec())
            .map_err(|_| format_error(d.offset(), "layer name is not UTF-8".into()))?;
        let kind = ParamKind::from_tag(d.u8("kind", format_error)?)
            .ok_or_else(|| format_error(d.offset(), "unknown tensor kind".into()))?;
        let rank = d.u32("rank", format_error)? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(d.u32("dimension", format_error)? as usize);
        }
        let len: usize = dims.iter().product();
        let packed = d.take(len.div_ceil(8), "mask bits", format_error)?;
        let bits = (0..len).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        layers.push(MaskLayer { name, kind, dims, bits });
    }
    if !d.is_done() {
        return Err(format_error(d.offset(), "trailing bytes after last layer".into()));
    }
    Ok(PruningMask { layers, provenance })
}

pub fn save_mask(mask: &PruningMask, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mask(mask)?)
}

pub fn load_mask(path: &Path) -> Result<PruningMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

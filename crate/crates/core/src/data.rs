//! Datasets, MNIST IDX ingestion and seeded minibatch ordering.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::arch::InputShape;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub input: InputShape,
    /// `n x input` values.
    pub examples: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub examples: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(examples: Tensor, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() || examples.rows() != labels.len() {
            return Err(Error::contract(format!(
                "batch has {} example rows and {} labels",
                examples.rows(),
                labels.len()
            )));
        }
        Ok(Batch { examples, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the listed rows, in the listed order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let width = self.input.len();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.examples.row(i));
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(&self.examples.dims()[1..]);
        Batch {
            examples: Tensor::new(dims, data).expect("gathered rows match dims"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::contract(format!("cannot take {n} of {} examples", self.len())));
        }
        let idx: Vec<usize> = (0..n).collect();
        let batch = self.gather(&idx);
        Ok(Dataset {
            name: format!("{}[..{n}]", self.name),
            input: self.input,
            examples: batch.examples,
            labels: batch.labels,
            classes: self.classes,
        })
    }

    /// Consecutive chunks of at most `chunk` examples, for evaluation.
    pub fn chunks(&self, chunk: usize) -> impl Iterator<Item = Batch> + '_ {
        let n = self.len();
        (0..n).step_by(chunk.max(1)).map(move |start| {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            self.gather(&idx)
        })
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            detail: format!("truncated header: expected {what}"),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an MNIST image/label IDX pair. Pixels are scaled by 1/255.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_mnist(&images, &labels, &images_path.display().to_string())
}

pub fn parse_mnist(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("wrong magic in image file: expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let n = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let pixels = n * rows * cols;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 4,
            detail: format!("empty image file ({n} x {rows} x {cols})"),
        });
    }
    if images.len() - 16 < pixels {
        return Err(Error::Format {
            offset: images.len() as u64,
            detail: format!("truncated image payload: expected {pixels} bytes after offset 16"),
        });
    }

    let magic = be_u32(labels, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("wrong magic in label file: expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if label_count != n {
        return Err(Error::Format {
            offset: 4,
            detail: format!("image/label count mismatch: {n} images, {label_count} labels"),
        });
    }
    if labels.len() - 8 < n {
        return Err(Error::Format {
            offset: labels.len() as u64,
            detail: format!("truncated label payload: expected {n} bytes after offset 8"),
        });
    }
    let label_values: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    if let Some(pos) = label_values.iter().position(|&l| l >= 10) {
        return Err(Error::Format {
            offset: (8 + pos) as u64,
            detail: format!("label {} out of range [0, 10)", label_values[pos]),
        });
    }

    let data = images[16..16 + pixels].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Dataset {
        name: name.to_string(),
        input: InputShape {
            channels: 1,
            height: rows,
            width: cols,
        },
        examples: Tensor::new(vec![n, 1, rows, cols], data)?,
        labels: label_values,
        classes: 10,
    })
}

/// Gaussian class clusters: each class gets a center drawn from N(0, I) and
/// each example is its class center plus N(0, 0.25 I) noise. Labels cycle
/// through the classes, so counts differ by at most one.
pub fn synth_dataset(seed: u64, n: usize, dim: usize, classes: usize) -> Result<Dataset> {
    if classes < 2 || n < classes || dim == 0 {
        return Err(Error::contract(format!(
            "synthetic dataset needs n >= C >= 2 and dim >= 1 (n={n}, C={classes}, dim={dim})"
        )));
    }
    let mut centers_rng = rng::stream(rng::SYNTHETIC, seed, 0);
    let centers: Vec<f64> = (0..classes * dim)
        .map(|_| StandardNormal.sample(&mut centers_rng))
        .collect();
    let mut noise_rng = rng::stream(rng::SYNTHETIC, seed, 1);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(n * dim);
    for &label in &labels {
        for d in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut noise_rng);
            data.push(centers[label * dim + d] + 0.5 * noise);
        }
    }
    Ok(Dataset {
        name: format!("synthetic(seed={seed},n={n},dim={dim},C={classes})"),
        input: InputShape::flat(dim),
        examples: Tensor::new(vec![n, dim], data)?,
        labels,
        classes,
    })
}

/// Identifies the data order randomness of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataOrderSeed(pub u64);

/// The shuffle of epoch `epoch`: a Fisher-Yates permutation of `0..n` driven
/// by ChaCha20 keyed by the seed with stream id `epoch`.
pub fn epoch_order(seed: DataOrderSeed, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(rng::DATA_ORDER, seed.0, epoch);
    order.shuffle(&mut rng);
    order
}

/// Splits a permutation into consecutive minibatches of `batch_size`; the
/// last one is short when `batch_size` does not divide `n`.
pub fn minibatches<'a>(
    dataset: &'a Dataset,
    permutation: &'a [usize],
    batch_size: usize,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if batch_size == 0 || batch_size > permutation.len() {
        return Err(Error::contract(format!(
            "batch size {batch_size} outside [1, {}]",
            permutation.len()
        )));
    }
    Ok(permutation.chunks(batch_size).map(move |idx| dataset.gather(idx)))
}

/// Maps a global iteration onto (epoch, batch within epoch).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub examples: usize,
    pub batch_size: usize,
}

impl BatchSchedule {
    pub fn new(examples: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > examples {
            return Err(Error::contract(format!("batch size {batch_size} outside [1, {examples}]")));
        }
        Ok(BatchSchedule { examples, batch_size })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.examples.div_ceil(self.batch_size) as u64
    }

    pub fn locate(&self, iteration: u64) -> (u64, usize) {
        let per = self.batches_per_epoch();
        (iteration / per, (iteration % per) as usize)
    }

    /// Rows of batch `index` within an epoch's permutation.
    pub fn slice<'p>(&self, permutation: &'p [usize], index: usize) -> &'p [usize] {
        let start = index * self.batch_size;
        &permutation[start..(start + self.batch_size).min(self.examples)]
    }
}

/// Hook for per-batch input transformations. Training applies it to every
/// batch after gathering.
pub trait Augmentation: Send + Sync {
    fn augment(&self, batch: &mut Batch, iteration: u64);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoAugmentation;

impl Augmentation for NoAugmentation {
    fn augment(&self, _batch: &mut Batch, _iteration: u64) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(magic: u32, n: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [magic, n, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&magic.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn parses_small_idx_pair() {
        let images = idx_images(0x803, 2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        let labels = idx_labels(0x801, &[7, 0]);
        let ds = parse_mnist(&images, &labels, "tiny").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples.dims(), &[2, 1, 2, 2]);
        assert_eq!(ds.examples.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels, vec![7, 0]);
    }

    #[test]
    fn idx_errors() {
        let images = idx_images(0x801, 1, 1, 1, &[0]);
        let labels = idx_labels(0x801, &[1]);
        let err = parse_mnist(&images, &labels, "x").unwrap_err();
        assert!(err.to_string().contains("wrong magic"), "{err}");

        let images = idx_images(0x803, 2, 2, 2, &[0; 7]);
        let labels = idx_labels(0x801, &[1, 1]);
        assert!(parse_mnist(&images, &labels, "x").unwrap_err().to_string().contains("truncated"));

        let images = idx_images(0x803, 1, 1, 1, &[0]);
        let labels = idx_labels(0x801, &[10]);
        let err = parse_mnist(&images, &labels, "x").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 8, .. }), "{err}");
        assert!(err.to_string().contains("out of range"));

        let labels = idx_labels(0x801, &[1, 2]);
        assert!(parse_mnist(&images, &labels, "x").unwrap_err().to_string().contains("mismatch"));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synth_dataset(1, 100, 10, 2).unwrap();
        let b = synth_dataset(1, 100, 10, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.examples.data().iter().zip(b.examples.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = synth_dataset(3, 7, 4, 7).unwrap();
        let mut counts = vec![0; 7];
        for &l in &c.labels {
            counts[l] += 1;
        }
        assert_eq!(counts, vec![1; 7]);
        let d = synth_dataset(3, 11, 4, 3).unwrap();
        let mut counts = [0; 3];
        for &l in &d.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(synth_dataset(1, 1, 4, 2).is_err());
        assert!(synth_dataset(1, 10, 4, 1).is_err());
    }

    #[test]
    fn epoch_order_examples() {
        assert_eq!(epoch_order(DataOrderSeed(9), 4, 1), vec![0]);
        assert_eq!(epoch_order(DataOrderSeed(9), 4, 30), epoch_order(DataOrderSeed(9), 4, 30));
        for u in 0..200u64 {
            for epoch in 0..5 {
                let mut p = epoch_order(DataOrderSeed(u), epoch, 50);
                p.sort_unstable();
                assert_eq!(p, (0..50).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn minibatch_sizes() {
        let ds = synth_dataset(0, 10, 3, 2).unwrap();
        let perm = epoch_order(DataOrderSeed(1), 0, 10);
        let sizes: Vec<usize> = minibatches(&ds, &perm, 3).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let batches: Vec<Batch> = minibatches(&ds, &perm, 10).unwrap().collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0], ds.gather(&perm));
        assert!(minibatches(&ds, &perm, 0).is_err());
        assert!(minibatches(&ds, &perm, 11).is_err());
    }

    #[test]
    fn lenet_epoch_arithmetic() {
        let s = BatchSchedule::new(60_000, 60).unwrap();
        assert_eq!(s.batches_per_epoch(), 1000);
        assert_eq!(s.locate(49_999), (49, 999));
        assert_eq!(s.locate(50_000).0, 50);
    }
}

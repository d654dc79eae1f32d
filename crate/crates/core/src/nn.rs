//! Forward and backward passes over masked weights.
//!
//! Everything runs on one thread with a fixed loop order, so a given input
//! always produces the same bits:
//!
//! * dense outputs accumulate bias first, then inputs in ascending index;
//! * dense weight gradients accumulate batch rows in ascending order;
//! * convolution outputs accumulate bias first, then the unrolled
//!   (channel, ky, kx) patch index in ascending order;
//! * batch means are taken by summing rows in order and dividing once.
//!
//! Zero inputs and zero effective weights are skipped. That changes at most
//! the sign of an exact zero, never a nonzero value.

use crate::arch::{Architecture, Layer};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::mask::PruningMask;
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

/// A dense layer whose mask keeps fewer than this fraction of its weights
/// iterates over surviving columns instead of whole rows.
const SPARSE_DENSITY: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub logits: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Dense {
        weight: usize,
        bias: usize,
        inputs: usize,
        outputs: usize,
        /// Surviving output columns per input row, when the layer is sparse.
        rows: Option<Vec<Vec<u32>>>,
    },
    Conv {
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    Relu,
    MaxPool {
        channels: usize,
        h: usize,
        w: usize,
        size: usize,
        oh: usize,
        ow: usize,
    },
}

/// An architecture bound to a fixed mask, with reusable buffers.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    stages: Vec<Stage>,
    /// Activation width entering each stage, plus the logits width last.
    widths: Vec<usize>,
    /// 1.0 at surviving positions, 0.0 elsewhere.
    keep: Vec<Vec<f64>>,
    /// Tensors whose gradients need no masking pass: unpruned, or written
    /// only at surviving positions by the sparse dense-layer path.
    unmasked_grads: Vec<bool>,
    full: Vec<bool>,
    effective: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    conv_cols: Vec<Vec<f64>>,
    pool_argmax: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(arch: &Architecture, mask: &PruningMask) -> Result<Self> {
        arch.validate()?;
        let specs = arch.param_specs();
        if specs.len() != mask.layers().len() {
            return Err(Error::shape(
                "<mask>",
                format!("architecture has {} tensors, mask has {}", specs.len(), mask.layers().len()),
            ));
        }
        for (spec, l) in specs.iter().zip(mask.layers()) {
            if spec.name != l.name || spec.dims != l.dims {
                return Err(Error::shape(
                    spec.name.clone(),
                    format!("mask `{}` {:?} vs architecture {:?}", l.name, l.dims, spec.dims),
                ));
            }
        }

        let shapes = arch.shapes()?;
        let mut stages = Vec::with_capacity(arch.layers.len());
        let mut widths = vec![arch.input.len()];
        let mut shape = arch.input;
        let mut param = 0;
        for (layer, out_shape) in arch.layers.iter().zip(&shapes) {
            let stage = match *layer {
                Layer::Dense { inputs, outputs } => {
                    let l = &mask.layers()[param];
                    let sparse = (l.surviving() as f64) < SPARSE_DENSITY * l.len() as f64;
                    let rows = sparse.then(|| {
                        (0..inputs)
                            .map(|k| {
                                (0..outputs)
                                    .filter(|&j| l.bits[k * outputs + j])
                                    .map(|j| j as u32)
                                    .collect()
                            })
                            .collect()
                    });
                    let s = Stage::Dense {
                        weight: param,
                        bias: param + 1,
                        inputs,
                        outputs,
                        rows,
                    };
                    param += 2;
                    s
                }
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let s = Stage::Conv {
                        weight: param,
                        bias: param + 1,
                        geom: ConvGeom {
                            cin: in_channels,
                            h: shape.height,
                            w: shape.width,
                            cout: out_channels,
                            k: kernel,
                            stride,
                            oh: out_shape.height,
                            ow: out_shape.width,
                        },
                    };
                    param += 2;
                    s
                }
                Layer::Relu => Stage::Relu,
                Layer::MaxPool { size } => Stage::MaxPool {
                    channels: shape.channels,
                    h: shape.height,
                    w: shape.width,
                    size,
                    oh: out_shape.height,
                    ow: out_shape.width,
                },
            };
            stages.push(stage);
            widths.push(out_shape.len());
            shape = *out_shape;
        }

        let keep = mask
            .layers()
            .iter()
            .map(|l| l.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect();
        let full: Vec<bool> = mask.layers().iter().map(|l| l.is_full()).collect();
        let mut unmasked_grads = full.clone();
        for stage in &stages {
            if let Stage::Dense { weight, rows: Some(_), .. } = stage {
                unmasked_grads[*weight] = true;
            }
        }
        let effective = specs.iter().map(|s| vec![0.0; s.dims.iter().product()]).collect();
        let n = stages.len();
        Ok(Network {
            arch: arch.clone(),
            stages,
            widths,
            keep,
            unmasked_grads,
            full,
            effective,
            acts: vec![Vec::new(); n + 1],
            conv_cols: vec![Vec::new(); n],
            pool_argmax: vec![Vec::new(); n],
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn load_weights(&mut self, weights: &ModelWeights) -> Result<()> {
        self.arch.check_weights(weights)?;
        for (((eff, p), keep), &full) in self
            .effective
            .iter_mut()
            .zip(weights.params())
            .zip(&self.keep)
            .zip(&self.full)
        {
            if full {
                eff.copy_from_slice(p.tensor.data());
            } else {
                for ((e, &w), &k) in eff.iter_mut().zip(p.tensor.data()).zip(keep) {
                    *e = if k != 0.0 { w } else { 0.0 };
                }
            }
        }
        Ok(())
    }

    fn check_batch(&self, examples: &Tensor, labels: Option<&[usize]>) -> Result<usize> {
        let b = examples.rows();
        if examples.row_len() != self.widths[0] {
            return Err(Error::shape(
                "input",
                format!("examples have {} values per row, network expects {}", examples.row_len(), self.widths[0]),
            ));
        }
        if let Some(labels) = labels {
            if labels.len() != b {
                return Err(Error::shape("input", format!("{b} examples but {} labels", labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.arch.classes) {
                return Err(Error::shape(
                    "head",
                    format!("label {bad} out of range for {} classes", self.arch.classes),
                ));
            }
        }
        Ok(b)
    }

    fn run_forward(&mut self, examples: &Tensor, keep_cache: bool) {
        let b = examples.rows();
        self.acts[0].clear();
        self.acts[0].extend_from_slice(examples.data());
        for s in 0..self.stages.len() {
            let (before, after) = self.acts.split_at_mut(s + 1);
            let x = &before[s];
            let out = &mut after[0];
            out.clear();
            out.resize(b * self.widths[s + 1], 0.0);
            match &self.stages[s] {
                Stage::Dense {
                    weight,
                    bias,
                    inputs,
                    outputs,
                    rows,
                } => dense_forward(
                    x,
                    &self.effective[*weight],
                    &self.effective[*bias],
                    *inputs,
                    *outputs,
                    rows.as_deref(),
                    out,
                ),
                Stage::Conv { weight, bias, geom } => {
                    let cols = &mut self.conv_cols[s];
                    conv_forward(x, &self.effective[*weight], &self.effective[*bias], geom, b, cols, out);
                    if !keep_cache {
                        cols.clear();
                    }
                }
                Stage::Relu => {
                    for (o, &v) in out.iter_mut().zip(x.iter()) {
                        *o = if v > 0.0 { v } else { 0.0 };
                    }
                }
                Stage::MaxPool {
                    channels,
                    h,
                    w,
                    size,
                    oh,
                    ow,
                } => {
                    let argmax = &mut self.pool_argmax[s];
                    argmax.clear();
                    let in_len = channels * h * w;
                    for bi in 0..b {
                        let xin = &x[bi * in_len..(bi + 1) * in_len];
                        for c in 0..*channels {
                            for oy in 0..*oh {
                                for ox in 0..*ow {
                                    let mut best = c * h * w + oy * size * w + ox * size;
                                    for dy in 0..*size {
                                        for dx in 0..*size {
                                            let i = c * h * w + (oy * size + dy) * w + ox * size + dx;
                                            if xin[i] > xin[best] {
                                                best = i;
                                            }
                                        }
                                    }
                                    out[bi * channels * oh * ow + (c * oh + oy) * ow + ox] = xin[best];
                                    argmax.push(bi * in_len + best);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn logits_tensor(&self, b: usize) -> Tensor {
        let last = self.acts.last().expect("at least one stage");
        Tensor::new(vec![b, self.arch.classes], last.clone()).expect("logits shape")
    }

    /// Logits for a batch of examples under m ⊙ W.
    pub fn logits(&mut self, weights: &ModelWeights, examples: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(examples, None)?;
        self.load_weights(weights)?;
        self.run_forward(examples, false);
        Ok(self.logits_tensor(b))
    }

    pub fn evaluate(&mut self, weights: &ModelWeights, batch: &Batch) -> Result<Evaluation> {
        let b = self.check_batch(&batch.examples, Some(&batch.labels))?;
        self.load_weights(weights)?;
        self.run_forward(&batch.examples, false);
        let logits = self.acts.last().expect("stage");
        let loss = softmax_cross_entropy(logits, &batch.labels, self.arch.classes, None);
        check_loss(loss)?;
        Ok(Evaluation {
            loss,
            logits: self.logits_tensor(b),
        })
    }

    /// Mean loss over the batch; writes ∂loss/∂W into `grads`, with entries
    /// at masked-out positions set to exactly zero.
    pub fn loss_and_gradients(
        &mut self,
        weights: &ModelWeights,
        batch: &Batch,
        grads: &mut ModelWeights,
    ) -> Result<f64> {
        let b = self.check_batch(&batch.examples, Some(&batch.labels))?;
        self.load_weights(weights)?;
        self.arch.check_weights(grads)?;
        self.run_forward(&batch.examples, true);

        let classes = self.arch.classes;
        let mut delta = vec![0.0; b * classes];
        let loss = softmax_cross_entropy(
            self.acts.last().expect("stage"),
            &batch.labels,
            classes,
            Some(&mut delta),
        );
        check_loss(loss)?;

        let mut next = Vec::new();
        for s in (0..self.stages.len()).rev() {
            let need_dx = s > 0;
            let x = &self.acts[s];
            match &self.stages[s] {
                Stage::Dense {
                    weight,
                    bias,
                    inputs,
                    outputs,
                    rows,
                } => {
                    let (gw, gb) = two_mut(grads, *weight, *bias);
                    dense_backward(
                        x,
                        &delta,
                        &self.effective[*weight],
                        *inputs,
                        *outputs,
                        rows.as_deref(),
                        gw,
                        gb,
                        need_dx.then_some(&mut next),
                    );
                }
                Stage::Conv { weight, bias, geom } => {
                    let (gw, gb) = two_mut(grads, *weight, *bias);
                    conv_backward(
                        &self.conv_cols[s],
                        &delta,
                        &self.effective[*weight],
                        geom,
                        b,
                        gw,
                        gb,
                        need_dx.then_some(&mut next),
                    );
                }
                Stage::Relu => {
                    let y = &self.acts[s + 1];
                    next.clear();
                    next.extend(delta.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }));
                }
                Stage::MaxPool { .. } => {
                    next.clear();
                    next.resize(x.len(), 0.0);
                    for (&i, &d) in self.pool_argmax[s].iter().zip(&delta) {
                        next[i] += d;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }

        for ((p, keep), &skip) in grads.params_mut().iter_mut().zip(&self.keep).zip(&self.unmasked_grads) {
            if !skip {
                for (g, &k) in p.tensor.data_mut().iter_mut().zip(keep) {
                    *g = if k != 0.0 { *g } else { 0.0 };
                }
            }
        }
        Ok(loss)
    }

    /// Fraction of examples whose arg-max logit (first on ties) equals the label.
    pub fn accuracy(&mut self, weights: &ModelWeights, dataset: &Dataset) -> Result<f64> {
        self.load_weights(weights)?;
        let classes = self.arch.classes;
        let mut correct = 0usize;
        for batch in dataset.chunks(1000) {
            self.check_batch(&batch.examples, Some(&batch.labels))?;
            self.run_forward(&batch.examples, false);
            let logits = self.acts.last().expect("stage");
            for (row, &label) in logits.chunks(classes).zip(&batch.labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

fn check_loss(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            iteration: 0,
            detail: format!("non-finite loss {loss}"),
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn two_mut(grads: &mut ModelWeights, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = grads.params_mut().split_at_mut(b);
    (lo[a].tensor.data_mut(), hi[0].tensor.data_mut())
}

/// Mean softmax cross-entropy; optionally writes ∂loss/∂logits.
fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize, grad: Option<&mut [f64]>) -> f64 {
    let b = labels.len();
    let mut total = 0.0;
    let mut grad = grad;
    for (bi, (row, &y)) in logits.chunks(classes).zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        total += max + sum.ln() - row[y];
        if let Some(g) = grad.as_deref_mut() {
            let out = &mut g[bi * classes..(bi + 1) * classes];
            for (c, (o, &z)) in out.iter_mut().zip(row).enumerate() {
                let p = (z - max).exp() / sum;
                *o = (p - if c == y { 1.0 } else { 0.0 }) / b as f64;
            }
        }
    }
    total / b as f64
}

fn dense_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    inputs: usize,
    outputs: usize,
    rows: Option<&[Vec<u32>]>,
    out: &mut [f64],
) {
    for (xrow, orow) in x.chunks(inputs).zip(out.chunks_mut(outputs)) {
        orow.copy_from_slice(bias);
        for (k, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * outputs..(k + 1) * outputs];
            match rows {
                None => {
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
                Some(rows) => {
                    for &j in &rows[k] {
                        orow[j as usize] += xv * wrow[j as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    delta: &[f64],
    w: &[f64],
    inputs: usize,
    outputs: usize,
    rows: Option<&[Vec<u32>]>,
    gw: &mut [f64],
    gb: &mut [f64],
    dx: Option<&mut Vec<f64>>,
) {
    gw.fill(0.0);
    gb.fill(0.0);
    for (xrow, drow) in x.chunks(inputs).zip(delta.chunks(outputs)) {
        for (g, &d) in gb.iter_mut().zip(drow) {
            *g += d;
        }
        for (k, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let grow = &mut gw[k * outputs..(k + 1) * outputs];
            match rows {
                None => {
                    for (g, &d) in grow.iter_mut().zip(drow) {
                        *g += xv * d;
                    }
                }
                Some(rows) => {
                    for &j in &rows[k] {
                        grow[j as usize] += xv * drow[j as usize];
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        dx.clear();
        dx.resize(x.len(), 0.0);
        for (dxrow, drow) in dx.chunks_mut(inputs).zip(delta.chunks(outputs)) {
            for (k, out) in dxrow.iter_mut().enumerate() {
                let wrow = &w[k * outputs..(k + 1) * outputs];
                *out = match rows {
                    None => wrow.iter().zip(drow).fold(0.0, |acc, (&wv, &d)| acc + wv * d),
                    Some(rows) => rows[k]
                        .iter()
                        .fold(0.0, |acc, &j| acc + wrow[j as usize] * drow[j as usize]),
                };
            }
        }
    }
}

/// Unrolls one example into `cols`, laid out [patch index][output position].
fn im2col(xin: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p_len = g.positions();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let q = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[q * p_len..(q + 1) * p_len];
                for oy in 0..g.oh {
                    let src = &xin[c * g.h * g.w + (oy * g.stride + ky) * g.w..];
                    for ox in 0..g.ow {
                        dst[oy * g.ow + ox] = src[ox * g.stride + kx];
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeom, b: usize, cols: &mut Vec<f64>, out: &mut [f64]) {
    let (q_len, p_len) = (g.patch(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p_len;
    cols.clear();
    cols.resize(b * q_len * p_len, 0.0);
    for bi in 0..b {
        let ex_cols = &mut cols[bi * q_len * p_len..(bi + 1) * q_len * p_len];
        im2col(&x[bi * in_len..(bi + 1) * in_len], g, ex_cols);
        let ex_out = &mut out[bi * out_len..(bi + 1) * out_len];
        for co in 0..g.cout {
            let orow = &mut ex_out[co * p_len..(co + 1) * p_len];
            orow.fill(bias[co]);
            for q in 0..q_len {
                let wv = w[co * q_len + q];
                if wv == 0.0 {
                    continue;
                }
                for (o, &c) in orow.iter_mut().zip(&ex_cols[q * p_len..(q + 1) * p_len]) {
                    *o += wv * c;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    cols: &[f64],
    delta: &[f64],
    w: &[f64],
    g: &ConvGeom,
    b: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    dx: Option<&mut Vec<f64>>,
) {
    let (q_len, p_len) = (g.patch(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p_len;
    gw.fill(0.0);
    gb.fill(0.0);
    let mut dx = dx;
    if let Some(dx) = dx.as_deref_mut() {
        dx.clear();
        dx.resize(b * in_len, 0.0);
    }
    let mut dcols = vec![0.0; q_len * p_len];
    for bi in 0..b {
        let ex_cols = &cols[bi * q_len * p_len..(bi + 1) * q_len * p_len];
        let ex_delta = &delta[bi * out_len..(bi + 1) * out_len];
        for co in 0..g.cout {
            let drow = &ex_delta[co * p_len..(co + 1) * p_len];
            gb[co] += drow.iter().sum::<f64>();
            for q in 0..q_len {
                let crow = &ex_cols[q * p_len..(q + 1) * p_len];
                gw[co * q_len + q] += crow.iter().zip(drow).fold(0.0, |acc, (&c, &d)| acc + c * d);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            dcols.fill(0.0);
            for co in 0..g.cout {
                let drow = &ex_delta[co * p_len..(co + 1) * p_len];
                for q in 0..q_len {
                    let wv = w[co * q_len + q];
                    if wv == 0.0 {
                        continue;
                    }
                    for (dc, &d) in dcols[q * p_len..(q + 1) * p_len].iter_mut().zip(drow) {
                        *dc += wv * d;
                    }
                }
            }
            let ex_dx = &mut dx[bi * in_len..(bi + 1) * in_len];
            for c in 0..g.cin {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let q = (c * g.k + ky) * g.k + kx;
                        for oy in 0..g.oh {
                            for ox in 0..g.ow {
                                ex_dx[c * g.h * g.w + (oy * g.stride + ky) * g.w + ox * g.stride + kx] +=
                                    dcols[q * p_len + oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Mean softmax cross-entropy and logits of f(x; m ⊙ W).
pub fn forward(arch: &Architecture, weights: &ModelWeights, mask: &PruningMask, batch: &Batch) -> Result<Evaluation> {
    mask.check_congruent(weights)?;
    Network::new(arch, mask)?.evaluate(weights, batch)
}

/// ∂loss/∂W with masked-out entries forced to zero.
pub fn backward(arch: &Architecture, weights: &ModelWeights, mask: &PruningMask, batch: &Batch) -> Result<ModelWeights> {
    loss_and_gradients(arch, weights, mask, batch).map(|(_, g)| g)
}

pub fn loss_and_gradients(
    arch: &Architecture,
    weights: &ModelWeights,
    mask: &PruningMask,
    batch: &Batch,
) -> Result<(f64, ModelWeights)> {
    mask.check_congruent(weights)?;
    let mut grads = weights.zeros_like();
    let loss = Network::new(arch, mask)?.loss_and_gradients(weights, batch, &mut grads)?;
    Ok((loss, grads))
}

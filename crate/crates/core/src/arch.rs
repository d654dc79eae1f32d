//! Network architecture descriptions and weight initialization.

use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::weights::{ModelWeights, Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn flat(len: usize) -> Self {
        InputShape {
            channels: 1,
            height: 1,
            width: len,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Fully connected; a preceding spatial activation is flattened row-major.
    Dense { inputs: usize, outputs: usize },
    /// Valid (unpadded) convolution with a square kernel.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Non-overlapping square max pooling; trailing rows/columns that do not
    /// fill a window are dropped.
    MaxPool { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initializer {
    /// N(0, 2 / (fan_in + fan_out))
    GlorotNormal,
    /// N(0, 2 / fan_in)
    HeNormal,
    /// N(0, 1 / fan_in)
    LecunNormal,
}

impl Initializer {
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Initializer::GlorotNormal => 2.0 / (fan_in + fan_out) as f64,
            Initializer::HeNormal => 2.0 / fan_in as f64,
            Initializer::LecunNormal => 1.0 / fan_in as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Initializer::GlorotNormal => "glorot-normal",
            Initializer::HeNormal => "he-normal",
            Initializer::LecunNormal => "lecun-normal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "glorot-normal" => Some(Initializer::GlorotNormal),
            "he-normal" => Some(Initializer::HeNormal),
            "lecun-normal" => Some(Initializer::LecunNormal),
            _ => None,
        }
    }
}

/// Shape and dimensions of one trainable tensor, before any values exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// A feed-forward classifier ending in a dense layer with one output per
/// class, trained with mean softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub name: String,
    pub input: InputShape,
    pub layers: Vec<Layer>,
    pub classes: usize,
    pub initializer: Initializer,
}

impl Architecture {
    pub fn new(
        name: impl Into<String>,
        input: InputShape,
        layers: Vec<Layer>,
        classes: usize,
        initializer: Initializer,
    ) -> Result<Self> {
        let arch = Architecture {
            name: name.into(),
            input,
            layers,
            classes,
            initializer,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Lenet-300-100 for 28x28 single-channel images.
    pub fn lenet_300_100() -> Self {
        Architecture::new(
            "lenet-300-100",
            InputShape {
                channels: 1,
                height: 28,
                width: 28,
            },
            vec![
                Layer::Dense {
                    inputs: 784,
                    outputs: 300,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 300,
                    outputs: 100,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 100,
                    outputs: 10,
                },
            ],
            10,
            Initializer::GlorotNormal,
        )
        .expect("lenet preset is valid")
    }

    /// Two convolutions followed by two dense layers, sized for 28x28
    /// single-channel images.
    pub fn small_cnn() -> Self {
        Architecture::new(
            "small-cnn",
            InputShape {
                channels: 1,
                height: 28,
                width: 28,
            },
            vec![
                Layer::Conv {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 5,
                    stride: 2,
                },
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Conv {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 256,
                    outputs: 64,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 64,
                    outputs: 10,
                },
            ],
            10,
            Initializer::HeNormal,
        )
        .expect("small cnn preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "lenet-300-100" => Some(Self::lenet_300_100()),
            "small-cnn" => Some(Self::small_cnn()),
            _ => None,
        }
    }

    /// Walks the layers and returns the activation shape after each one.
    pub fn shapes(&self) -> Result<Vec<InputShape>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let label = format!("layer{i}");
            shape = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if inputs != shape.len() || outputs == 0 {
                        return Err(Error::shape(
                            label,
                            format!("dense expects {inputs} inputs, previous layer yields {}", shape.len()),
                        ));
                    }
                    InputShape::flat(outputs)
                }
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if in_channels != shape.channels
                        || kernel == 0
                        || stride == 0
                        || out_channels == 0
                        || kernel > shape.height
                        || kernel > shape.width
                    {
                        return Err(Error::shape(
                            label,
                            format!("conv {in_channels}->{out_channels} k{kernel} s{stride} cannot consume {shape:?}"),
                        ));
                    }
                    InputShape {
                        channels: out_channels,
                        height: (shape.height - kernel) / stride + 1,
                        width: (shape.width - kernel) / stride + 1,
                    }
                }
                Layer::Relu => shape,
                Layer::MaxPool { size } => {
                    if size == 0 || size > shape.height || size > shape.width {
                        return Err(Error::shape(label, format!("pool {size} cannot consume {shape:?}")));
                    }
                    InputShape {
                        channels: shape.channels,
                        height: shape.height / size,
                        width: shape.width / size,
                    }
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::contract("input shape is empty"));
        }
        if self.classes < 2 {
            return Err(Error::contract("a classifier needs at least two classes"));
        }
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(Layer::Dense { outputs, .. }) if *outputs == self.classes => {}
            _ => {
                return Err(Error::shape(
                    "head",
                    format!("last layer must be dense with {} outputs", self.classes),
                ))
            }
        }
        debug_assert_eq!(shapes.last().map(|s| s.len()), Some(self.classes));
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let (mut dense, mut conv) = (0, 0);
        for layer in &self.layers {
            match *layer {
                Layer::Dense { inputs, outputs } => {
                    specs.push(ParamSpec {
                        name: format!("dense{dense}.weight"),
                        kind: ParamKind::DenseWeight,
                        dims: vec![inputs, outputs],
                        fan_in: inputs,
                        fan_out: outputs,
                    });
                    specs.push(ParamSpec {
                        name: format!("dense{dense}.bias"),
                        kind: ParamKind::DenseBias,
                        dims: vec![outputs],
                        fan_in: inputs,
                        fan_out: outputs,
                    });
                    dense += 1;
                }
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let area = kernel * kernel;
                    specs.push(ParamSpec {
                        name: format!("conv{conv}.weight"),
                        kind: ParamKind::ConvWeight,
                        dims: vec![out_channels, in_channels, kernel, kernel],
                        fan_in: in_channels * area,
                        fan_out: out_channels * area,
                    });
                    specs.push(ParamSpec {
                        name: format!("conv{conv}.bias"),
                        kind: ParamKind::ConvBias,
                        dims: vec![out_channels],
                        fan_in: in_channels * area,
                        fan_out: out_channels * area,
                    });
                    conv += 1;
                }
                Layer::Relu | Layer::MaxPool { .. } => {}
            }
        }
        specs
    }

    /// Canonical one-line description; the fingerprint hashes exactly this.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "input={}x{}x{};classes={}",
            self.input.channels, self.input.height, self.input.width, self.classes
        );
        for layer in &self.layers {
            match *layer {
                Layer::Dense { inputs, outputs } => s.push_str(&format!(";dense({inputs},{outputs})")),
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => s.push_str(&format!(";conv({in_channels},{out_channels},k{kernel},s{stride})")),
                Layer::Relu => s.push_str(";relu"),
                Layer::MaxPool { size } => s.push_str(&format!(";maxpool({size})")),
            }
        }
        s
    }

    /// SHA-256 of [`Architecture::describe`]. Initializer and name are not
    /// part of it: two architectures with the same tensors are compatible.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.describe().as_bytes()).into()
    }

    /// Fresh weights: normal draws scaled by the initializer for weight
    /// tensors, zeros for biases. Parameter `i` draws from stream `i` of the
    /// initialization domain for `seed`, so each tensor is independent of
    /// the others' sizes.
    pub fn initialize(&self, seed: u64) -> ModelWeights {
        let params = self
            .param_specs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut tensor = Tensor::zeros(&spec.dims);
                if !spec.kind.is_bias() {
                    let std = self.initializer.variance(spec.fan_in, spec.fan_out).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite positive std");
                    let mut rng = crate::rng::stream(crate::rng::INIT, seed, i as u64);
                    for v in tensor.data_mut() {
                        *v = normal.sample(&mut rng);
                    }
                }
                Param {
                    name: spec.name,
                    kind: spec.kind,
                    tensor,
                }
            })
            .collect();
        ModelWeights::new(params).expect("generated names are unique")
    }

    /// Checks that `weights` has exactly this architecture's tensors.
    pub fn check_weights(&self, weights: &ModelWeights) -> Result<()> {
        let specs = self.param_specs();
        if specs.len() != weights.len() {
            return Err(Error::shape(
                "<model>",
                format!("architecture has {} tensors, weights have {}", specs.len(), weights.len()),
            ));
        }
        for (spec, p) in specs.iter().zip(weights.params()) {
            if spec.name != p.name || spec.dims != p.tensor.dims() {
                return Err(Error::shape(
                    spec.name.clone(),
                    format!("expected {:?}, found `{}` {:?}", spec.dims, p.name, p.tensor.dims()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_has_266k_parameters() {
        let w = Architecture::lenet_300_100().initialize(0);
        // 784*300 + 300 + 300*100 + 100 + 100*10 + 10
        assert_eq!(w.total_len(), 266_610);
    }

    #[test]
    fn small_cnn_shapes_compose() {
        let arch = Architecture::small_cnn();
        let shapes = arch.shapes().unwrap();
        assert_eq!(shapes[0], InputShape { channels: 8, height: 12, width: 12 });
        assert_eq!(shapes[2], InputShape { channels: 8, height: 6, width: 6 });
        assert_eq!(shapes[3], InputShape { channels: 16, height: 4, width: 4 });
    }

    #[test]
    fn rejects_non_composing_layers() {
        let bad = Architecture::new(
            "bad",
            InputShape::flat(4),
            vec![Layer::Dense { inputs: 5, outputs: 2 }],
            2,
            Initializer::HeNormal,
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
        let no_head = Architecture::new(
            "bad",
            InputShape::flat(4),
            vec![Layer::Dense { inputs: 4, outputs: 3 }, Layer::Relu],
            3,
            Initializer::HeNormal,
        );
        assert!(no_head.is_err());
    }

    #[test]
    fn fingerprint_distinguishes_presets() {
        assert_ne!(
            Architecture::lenet_300_100().fingerprint(),
            Architecture::small_cnn().fingerprint()
        );
    }

    #[test]
    fn biases_start_at_zero() {
        let w = Architecture::small_cnn().initialize(3);
        for p in w.params().iter().filter(|p| p.kind.is_bias()) {
            assert!(p.tensor.data().iter().all(|&v| v == 0.0));
        }
    }
}

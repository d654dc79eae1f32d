use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    DenseWeight,
    DenseBias,
    ConvWeight,
    ConvBias,
}

impl ParamKind {
    pub fn is_bias(self) -> bool {
        matches!(self, ParamKind::DenseBias | ParamKind::ConvBias)
    }

    pub fn tag(self) -> u8 {
        match self {
            ParamKind::DenseWeight => 0,
            ParamKind::DenseBias => 1,
            ParamKind::ConvWeight => 2,
            ParamKind::ConvBias => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ParamKind::DenseWeight,
            1 => ParamKind::DenseBias,
            2 => ParamKind::ConvWeight,
            3 => ParamKind::ConvBias,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Named parameter tensors in architecture declaration order.
///
/// Every reduction over a `ModelWeights` (norms, dot products, flattening)
/// walks the parameters in this order and each tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    params: Vec<Param>,
}

impl ModelWeights {
    pub fn new(params: Vec<Param>) -> Result<Self> {
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::contract(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(ModelWeights { params })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters D.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelWeights {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: Tensor::zeros(p.tensor.dims()),
                })
                .collect(),
        }
    }

    /// Checks name-for-name, shape-for-shape agreement with `other`.
    pub fn check_congruent(&self, other: &ModelWeights) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::shape(
                "<model>",
                format!("{} parameters vs {}", self.params.len(), other.params.len()),
            ));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.tensor.dims() != b.tensor.dims() {
                return Err(Error::shape(
                    a.name.clone(),
                    format!(
                        "`{}` {:?} does not match `{}` {:?}",
                        a.name,
                        a.tensor.dims(),
                        b.name,
                        b.tensor.dims()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    /// All values concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for p in &self.params {
            out.extend_from_slice(p.tensor.data());
        }
        out
    }

    /// Bitwise equality of every value (distinguishes `0.0` from `-0.0`).
    pub fn bit_identical(&self, other: &ModelWeights) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.tensor.dims() == b.tensor.dims()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

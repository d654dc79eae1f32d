use crate::error::{Error, Result};
use crate::mask::PruningMask;
use crate::weights::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerConfig {
    /// v' = μv + g, w' = w − lr·v'
    SgdMomentum { momentum: f64 },
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            OptimizerConfig::SgdMomentum { .. } => 1,
            OptimizerConfig::Adam { .. } => 2,
        }
    }

    fn slot_count(&self) -> usize {
        match self {
            OptimizerConfig::SgdMomentum { .. } => 1,
            OptimizerConfig::Adam { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { beta1, beta2, epsilon } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// Auxiliary buffers: `[velocity]` for SGD with momentum, `[m, v]` for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub slots: Vec<ModelWeights>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, like: &ModelWeights) -> Self {
        OptimizerState {
            config,
            step: 0,
            slots: (0..config.slot_count()).map(|_| like.zeros_like()).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        for slot in &mut self.slots {
            for p in slot.params_mut() {
                p.tensor.data_mut().fill(0.0);
            }
        }
    }

    /// Zeroes every buffer entry at a pruned position, so that a weight held
    /// at zero with zero gradient stays exactly zero.
    pub fn apply_mask(&mut self, mask: &PruningMask) -> Result<()> {
        for slot in &mut self.slots {
            crate::mask::apply_mask_in_place(mask, slot)?;
        }
        Ok(())
    }

    /// One in-place update.
    pub fn step(&mut self, weights: &mut ModelWeights, grads: &ModelWeights, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
        }
        weights.check_congruent(grads)?;
        if self.slots.len() != self.config.slot_count() {
            return Err(Error::shape("<optimizer>", "buffer count does not match optimizer kind"));
        }
        for slot in &self.slots {
            weights.check_congruent(slot)?;
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::SgdMomentum { momentum } => {
                let velocity = &mut self.slots[0];
                for ((w, g), v) in weights
                    .params_mut()
                    .iter_mut()
                    .zip(grads.params())
                    .zip(velocity.params_mut())
                {
                    for ((wv, &gv), vv) in w
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.tensor.data())
                        .zip(v.tensor.data_mut())
                    {
                        // Exact no-op; skipping it makes pruned positions free.
                        if gv == 0.0 && *vv == 0.0 {
                            continue;
                        }
                        *vv = momentum * *vv + gv;
                        *wv -= lr * *vv;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, epsilon } => {
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (first, second) = self.slots.split_at_mut(1);
                for (((w, g), m), v) in weights
                    .params_mut()
                    .iter_mut()
                    .zip(grads.params())
                    .zip(first[0].params_mut())
                    .zip(second[0].params_mut())
                {
                    for (((wv, &gv), mv), vv) in w
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.tensor.data())
                        .zip(m.tensor.data_mut())
                        .zip(v.tensor.data_mut())
                    {
                        if gv == 0.0 && *mv == 0.0 && *vv == 0.0 {
                            continue;
                        }
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *wv -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimizer_step(
    weights: &ModelWeights,
    grads: &ModelWeights,
    state: &OptimizerState,
    lr: f64,
) -> Result<(ModelWeights, OptimizerState)> {
    let mut w = weights.clone();
    let mut s = state.clone();
    s.step(&mut w, grads, lr)?;
    Ok((w, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::weights::{Param, ParamKind};

    fn scalar(v: f64) -> ModelWeights {
        ModelWeights::new(vec![Param {
            name: "w".into(),
            kind: ParamKind::DenseWeight,
            tensor: Tensor::new(vec![1], vec![v]).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let w = scalar(0.7);
        let s = OptimizerState::new(OptimizerConfig::SgdMomentum { momentum: 0.9 }, &w);
        let (w2, s2) = optimizer_step(&w, &scalar(0.0), &s, 0.1).unwrap();
        assert_eq!(w2, w);
        assert_eq!(s2.step, 1);
        let s = OptimizerState::new(OptimizerConfig::adam(), &w);
        let (w2, _) = optimizer_step(&w, &scalar(0.0), &s, 0.1).unwrap();
        assert_eq!(w2, w);
    }

    #[test]
    fn sgd_momentum_single_step() {
        let w = scalar(0.0);
        let s = OptimizerState::new(OptimizerConfig::SgdMomentum { momentum: 0.9 }, &w);
        let (w2, s2) = optimizer_step(&w, &scalar(1.0), &s, 0.1).unwrap();
        assert_eq!(w2.flatten(), vec![-0.1]);
        assert_eq!(s2.slots[0].flatten(), vec![1.0]);
    }

    #[test]
    fn adam_two_steps_match_scalar_recurrence() {
        // Reference written out independently of the update loop above.
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8f64, 0.0012f64, 0.5f64);
        let mut expected = 0.3f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t as f64));
            let vh = v / (1.0 - b2.powf(t as f64));
            expected -= lr * mh / (vh.sqrt() + eps);
        }
        // with a constant gradient every bias-corrected step is lr·g/(|g|+eps)
        assert!((expected - (0.3 - 2.0 * lr * g / (g.abs() + eps))).abs() < 1e-15);

        let mut w = scalar(0.3);
        let mut s = OptimizerState::new(OptimizerConfig::adam(), &w);
        s.step(&mut w, &scalar(g), lr).unwrap();
        s.step(&mut w, &scalar(g), lr).unwrap();
        assert!((w.flatten()[0] - expected).abs() < 1e-15);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn rejects_bad_learning_rate_and_shapes() {
        let w = scalar(0.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(), &w);
        let mut w2 = w.clone();
        assert!(s.step(&mut w2, &scalar(1.0), 0.0).is_err());
        let other = crate::arch::Architecture::lenet_300_100().initialize(0);
        assert!(matches!(s.step(&mut w2, &other, 0.1), Err(Error::Shape { .. })));
    }
}

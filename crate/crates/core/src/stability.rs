//! Masked distance and angle between trained weights, and the two stability
//! estimators built on them.

use std::fmt;

use crate::checkpoint::Checkpoint;
use crate::data::DataOrderSeed;
use crate::error::{Error, Result};
use crate::imp::{train, Data, TrainPlan};
use crate::mask::PruningMask;
use crate::weights::ModelWeights;

/// Visits (w, w') for every surviving coordinate, layer by layer.
fn for_each_masked(w: &ModelWeights, w2: &ModelWeights, mask: &PruningMask, mut f: impl FnMut(f64, f64)) -> Result<()> {
    w.check_congruent(w2)?;
    mask.check_congruent(w)?;
    for ((a, b), m) in w.params().iter().zip(w2.params()).zip(mask.layers()) {
        for ((&x, &y), &keep) in a.tensor.data().iter().zip(b.tensor.data()).zip(&m.bits) {
            if keep {
                f(x, y);
            }
        }
    }
    Ok(())
}

/// ||m ⊙ W − m ⊙ W'||₂
pub fn masked_l2_distance(w: &ModelWeights, w2: &ModelWeights, mask: &PruningMask) -> Result<f64> {
    let mut ss = 0.0;
    for_each_masked(w, w2, mask, |x, y| ss += (x - y) * (x - y))?;
    Ok(ss.sqrt())
}

/// Angle in degrees between m ⊙ W and m ⊙ W'.
///
/// Computed as 2·atan2(|â − b̂|, |â + b̂|) on the unit vectors, which equals
/// arccos of the cosine but stays exact at 0° and 180° where arccos loses
/// half the significant digits.
pub fn masked_angle(w: &ModelWeights, w2: &ModelWeights, mask: &PruningMask) -> Result<f64> {
    let (mut na, mut nb) = (0.0, 0.0);
    for_each_masked(w, w2, mask, |x, y| {
        na += x * x;
        nb += y * y;
    })?;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    let (mut diff, mut sum) = (0.0, 0.0);
    for_each_masked(w, w2, mask, |x, y| {
        let (a, b) = (x / na, y / nb);
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    })?;
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees().clamp(0.0, 180.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Distance,
    Angle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StabilityKind {
    DataOrder,
    Pruning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubnetworkKind {
    Imp,
    Random,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Distance => "distance",
            MetricKind::Angle => "angle",
        })
    }
}

impl fmt::Display for StabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityKind::DataOrder => "data-order",
            StabilityKind::Pruning => "pruning",
        })
    }
}

impl fmt::Display for SubnetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubnetworkKind::Imp => "imp",
            SubnetworkKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub metric: MetricKind,
    pub stability: StabilityKind,
    pub subnetwork: SubnetworkKind,
    pub rewind_iteration: u64,
    pub sparsity: f64,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl StabilityReport {
    pub fn from_samples(
        metric: MetricKind,
        stability: StabilityKind,
        subnetwork: SubnetworkKind,
        rewind_iteration: u64,
        sparsity: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("a stability report needs at least one sample"));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(StabilityReport {
            metric,
            stability,
            subnetwork,
            rewind_iteration,
            sparsity,
            // Rounding in the mean can land just outside [min, max].
            mean: mean.clamp(min, max),
            samples,
            min,
            max,
        })
    }
}

/// Distance and angle reports from the same set of training runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPair {
    pub distance: StabilityReport,
    pub angle: StabilityReport,
    /// Iterations executed by each training run, in execution order.
    pub iterations: Vec<u64>,
}

fn pair_from(
    stability: StabilityKind,
    subnetwork: SubnetworkKind,
    k: u64,
    mask: &PruningMask,
    plan: &TrainPlan,
    runs: Vec<(ModelWeights, ModelWeights)>,
    iterations: Vec<u64>,
) -> Result<StabilityPair> {
    let sparsity = 1.0 - mask.surviving_fraction(plan.prune_scope);
    let mut dist = Vec::with_capacity(runs.len());
    let mut angle = Vec::with_capacity(runs.len());
    for (a, b) in &runs {
        dist.push(masked_l2_distance(a, b, mask)?);
        angle.push(masked_angle(a, b, mask)?);
    }
    Ok(StabilityPair {
        distance: StabilityReport::from_samples(MetricKind::Distance, stability, subnetwork, k, sparsity, dist)?,
        angle: StabilityReport::from_samples(MetricKind::Angle, stability, subnetwork, k, sparsity, angle)?,
        iterations,
    })
}

/// Trains m ⊙ W_k twice per pair, under data orders u and u', and compares
/// the results. A pair with u = u' yields distance 0.
pub fn data_order_stability(
    plan: &TrainPlan,
    data: Data<'_>,
    state: &Checkpoint,
    mask: &PruningMask,
    subnetwork: SubnetworkKind,
    pairs: &[(u64, u64)],
) -> Result<StabilityPair> {
    let budget = plan.total_iterations.saturating_sub(state.iteration);
    let mut runs = Vec::with_capacity(pairs.len());
    let mut iterations = Vec::with_capacity(2 * pairs.len());
    for &(u, u2) in pairs {
        let a = train(plan, data, &state.with_data_seed(DataOrderSeed(u)), mask, budget)?;
        let b = train(plan, data, &state.with_data_seed(DataOrderSeed(u2)), mask, budget)?;
        iterations.extend([a.iterations, b.iterations]);
        runs.push((a.final_state.weights, b.final_state.weights));
    }
    pair_from(StabilityKind::DataOrder, subnetwork, state.iteration, mask, plan, runs, iterations)
}

/// Trains the full network from W_k and m ⊙ W_k under the same data order u
/// and compares the results on the surviving coordinates.
pub fn pruning_stability(
    plan: &TrainPlan,
    data: Data<'_>,
    state: &Checkpoint,
    mask: &PruningMask,
    subnetwork: SubnetworkKind,
    seeds: &[u64],
) -> Result<StabilityPair> {
    let full = full_runs(plan, data, state, seeds)?;
    pruning_stability_against(plan, data, state, mask, subnetwork, seeds, &full)
}

/// The full-network half of pruning stability, shareable between subnetworks
/// evaluated at the same W_k and seeds.
pub fn full_runs(plan: &TrainPlan, data: Data<'_>, state: &Checkpoint, seeds: &[u64]) -> Result<Vec<ModelWeights>> {
    let budget = plan.total_iterations.saturating_sub(state.iteration);
    let trivial = PruningMask::trivial(&state.weights);
    seeds
        .iter()
        .map(|&u| {
            let start = state.with_data_seed(DataOrderSeed(u));
            Ok(train(plan, data, &start, &trivial, budget)?.final_state.weights)
        })
        .collect()
}

pub fn pruning_stability_against(
    plan: &TrainPlan,
    data: Data<'_>,
    state: &Checkpoint,
    mask: &PruningMask,
    subnetwork: SubnetworkKind,
    seeds: &[u64],
    full: &[ModelWeights],
) -> Result<StabilityPair> {
    if seeds.is_empty() {
        return Err(Error::contract("pruning stability needs at least one seed"));
    }
    if full.len() != seeds.len() {
        return Err(Error::contract("one full-network run is needed per seed"));
    }
    let budget = plan.total_iterations.saturating_sub(state.iteration);
    let mut runs = Vec::with_capacity(seeds.len());
    let mut iterations = Vec::with_capacity(seeds.len());
    for (&u, reference) in seeds.iter().zip(full) {
        let sub = train(plan, data, &state.with_data_seed(DataOrderSeed(u)), mask, budget)?;
        iterations.push(sub.iterations);
        runs.push((reference.clone(), sub.final_state.weights));
    }
    pair_from(StabilityKind::Pruning, subnetwork, state.iteration, mask, plan, runs, iterations)
}

/// random.mean / imp.mean
pub fn comparison_ratio(imp: &StabilityReport, random: &StabilityReport) -> Result<f64> {
    if imp.metric != random.metric
        || imp.stability != random.stability
        || imp.rewind_iteration != random.rewind_iteration
        || (imp.sparsity - random.sparsity).abs() > 1e-9
    {
        return Err(Error::contract("reports describe different configurations"));
    }
    if imp.mean == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(random.mean / imp.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{MaskLayer, Provenance};
    use crate::tensor::Tensor;
    use crate::weights::{Param, ParamKind};

    fn vec2(a: f64, b: f64) -> ModelWeights {
        ModelWeights::new(vec![Param {
            name: "w".into(),
            kind: ParamKind::DenseWeight,
            tensor: Tensor::new(vec![2], vec![a, b]).unwrap(),
        }])
        .unwrap()
    }

    fn mask2(a: bool, b: bool) -> PruningMask {
        PruningMask::from_layers(
            vec![MaskLayer {
                name: "w".into(),
                kind: ParamKind::DenseWeight,
                dims: vec![2],
                bits: vec![a, b],
            }],
            Provenance::Magnitude,
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let w = vec2(3.0, 4.0);
        assert_eq!(masked_l2_distance(&w, &w, &mask2(true, true)).unwrap(), 0.0);
        assert_eq!(masked_l2_distance(&w, &vec2(0.0, 0.0), &mask2(true, true)).unwrap(), 5.0);
        assert_eq!(masked_l2_distance(&w, &vec2(0.0, 0.0), &mask2(true, false)).unwrap(), 3.0);
    }

    #[test]
    fn angle_examples() {
        let m = mask2(true, true);
        let w = vec2(0.3, -1.7);
        assert_eq!(masked_angle(&w, &w, &m).unwrap(), 0.0);
        assert_eq!(masked_angle(&w, &vec2(-0.3, 1.7), &m).unwrap(), 180.0);
        assert!((masked_angle(&vec2(1.0, 0.0), &vec2(0.0, 1.0), &m).unwrap() - 90.0).abs() < 1e-12);
        let err = masked_angle(&vec2(0.0, 2.0), &w, &mask2(true, false)).unwrap_err();
        assert!(matches!(err, Error::UndefinedAngle));
    }

    #[test]
    fn ratio_examples() {
        let r = |mean: f64, sub| {
            StabilityReport::from_samples(MetricKind::Distance, StabilityKind::DataOrder, sub, 0, 0.893, vec![mean]).unwrap()
        };
        let imp = r(20.7, SubnetworkKind::Imp);
        assert_eq!(comparison_ratio(&imp, &r(20.7, SubnetworkKind::Random)).unwrap(), 1.0);
        assert!((comparison_ratio(&imp, &r(58.6, SubnetworkKind::Random)).unwrap() - 2.83).abs() < 0.005);
        assert!((comparison_ratio(&r(48.1, SubnetworkKind::Imp), &r(75.7, SubnetworkKind::Random)).unwrap() - 1.57).abs() < 0.005);
        assert!(matches!(
            comparison_ratio(&r(0.0, SubnetworkKind::Imp), &imp),
            Err(Error::UndefinedRatio)
        ));
        let mut other = imp.clone();
        other.metric = MetricKind::Angle;
        assert!(comparison_ratio(&imp, &other).is_err());
    }

    #[test]
    fn report_bounds() {
        let r = StabilityReport::from_samples(
            MetricKind::Angle,
            StabilityKind::Pruning,
            SubnetworkKind::Imp,
            3,
            0.5,
            vec![0.1, 0.1, 0.1],
        )
        .unwrap();
        assert!(r.min <= r.mean && r.mean <= r.max);
        assert_eq!(r.samples.len(), 3);
    }
}

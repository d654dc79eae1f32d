//! Deterministic training and pruning laboratory.
//!
//! Trains small dense and convolutional classifiers in 64-bit floating point
//! with a fixed reduction order, prunes them with iterative magnitude pruning
//! and rewinding, and measures how stable the resulting subnetworks are to
//! pruning and to data order.

pub mod arch;
mod binfmt;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod imp;
pub mod mask;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod stability;
pub mod tensor;
pub mod weights;

pub use arch::{Architecture, Initializer, InputShape, Layer};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{Batch, DataOrderSeed, Dataset};
pub use error::{Error, Result};
pub use imp::{imp_with_rewinding, train, Data, TrainPlan};
pub use mask::{PruneScope, PruningMask};
pub use optim::{OptimizerConfig, OptimizerState};
pub use schedule::{lr_at, LrSchedule, ScheduleShape};
pub use stability::{masked_angle, masked_l2_distance, StabilityReport};
pub use tensor::Tensor;
pub use weights::{ModelWeights, Param, ParamKind};

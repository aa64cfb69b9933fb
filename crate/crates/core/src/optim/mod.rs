//! Losses, optimizers, learning-rate decay and hyperparameter search.

mod adam;
pub mod loss;
mod schedule;
pub mod search;
mod sgd;

pub use adam::{adam_update, Adam, AdamConfig};
pub use loss::{cross_entropy_loss, mse_loss, ClassWeights, LossOutput};
pub use schedule::{apply_lr_schedule, LrSchedule};
pub use search::{hp_search, Dimension, HpPoint, Phase, Scale, SearchOutcome, SearchSpace, Trial};
pub use sgd::{sgd_momentum_update, SgdConfig, SgdMomentum};

use crate::engine::{ParamStore, Scalar, Tensor};
use crate::Result;

/// A stateful parameter update rule.
pub trait Optimizer<T: Scalar> {
    /// Updates every trainable parameter that has a gradient, using `lr` in
    /// place of the configured base rate (so schedules can drive it).
    fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()>;

    /// Named state tensors for checkpointing.
    fn export_state(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)>;

    fn import_state(
        &mut self,
        store: &ParamStore<T>,
        entries: &[(String, Tensor<T>)],
    ) -> Result<()>;
}

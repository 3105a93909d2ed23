//! Momentum-queue cross-modal contrastive training.

mod loss;
mod momentum;
mod queue;
mod train;

pub use loss::{cx_loss, info_nce, CrossProjection, CxLoss};
pub use momentum::{momentum_update, MomentumEncoder};
pub use queue::NegativeQueue;
pub use train::{ContrastiveConfig, ContrastiveTrainer, StepReport};

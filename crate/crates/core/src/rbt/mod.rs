//! Reward model: causal transformer trunk over interleaved state/action
//! tokens, a bidirectional attention head producing per-step rewards, and a
//! linear next-state decoder.

mod batch;
mod checkpoint;
mod config;
mod loss;
mod model;
mod params;
mod relabel;
mod trainer;

pub use batch::{BagBatch, Window};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::RbtConfig;
pub use loss::{composite_loss, reward_loss, state_loss, BagTarget};
pub use model::{bidirectional_attention, Forward, RbtModel};
pub use params::{BlockIndex, HeadIndex, ParamIndex, RbtParams};
pub use relabel::relabel;
pub use trainer::{bag_residual, batch_loss, loss_and_grads, LossParts, RbtTrainer, StepStats};

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum RbtError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{states} states but {actions} actions")]
    LengthMismatch { states: usize, actions: usize },
    #[error("feature dimensions {got:?}, expected {expected:?}")]
    FeatureDim { expected: (usize, usize), got: (usize, usize) },
    #[error("sequence reaches position {len}, model holds {max}")]
    SequenceLength { len: usize, max: usize },
    #[error("odd token count {0}")]
    OddTokenCount(usize),
    #[error("no bags to fit")]
    EmptyBags,
    #[error("no steps to fit")]
    EmptySteps,
    #[error("loss is not finite (reward part {reward}, state part {state})")]
    NonFiniteLoss { reward: f64, state: f64 },
    #[error("checkpoint config does not match the requested config")]
    ConfigMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

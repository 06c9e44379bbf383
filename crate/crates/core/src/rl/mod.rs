//! Rewards and the actor-critic learner.

pub mod actor_critic;
pub mod agent;
pub mod replay;
pub mod reward;

use thiserror::Error;

use crate::market::MarketError;
use crate::neural::NeuralError;

pub use actor_critic::{
    critic_gradient_check, encode_action, masked_argmax, select_with, ActorCritic, NetworkBuyer, DdpgConfig, SelectMode, Selected,
    UpdateStats, CRITIC_INPUT,
};
pub use agent::{train_rl, write_training_log, RlBuyer, TrainingLogRow, TRAINING_LOG_HEADER};
pub use replay::{Experience, ReplayBuffer, ACTION_DIM};
pub use reward::{
    metric_utility, reward_classification, reward_regression, utility, DiscountVariant, RewardContext,
    RewardSpec, UtilityFrame,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

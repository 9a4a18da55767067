//! Prediction targets at point, game, set and match level, the momentum
//! score head, the joint loss and the training loop.

mod config;
mod model;
mod targets;
mod train;

pub use config::TrainConfig;
pub use model::{
    classification_loss, predict_momentum_score, total_loss, HeadParams, HydraNetModel, InputScaling, LossParts, MatchForward,
    PROB_CLAMP,
};
pub use targets::{assemble_granularity_targets, half_time_index, Granularity, GranularitySample};
pub use train::{evaluate_loss, train, LossLog, LossRow};

#[cfg(test)]
mod tests;

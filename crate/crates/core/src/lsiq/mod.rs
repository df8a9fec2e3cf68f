//! Least-squares inverse Q-learning: reward and Q targets, the implicit-reward
//! operators, the LS-IQ / SQIL / IQ / IQv0 critic losses and the update loop.

mod analysis;
mod config;
mod loss;
mod update;

pub use analysis::{forward_backup, objective_identity_check, ObjectiveIdentity};
pub use config::{
    q_bounds, reward_targets, Algorithm, BootstrapValue, LsIqConfig, Operator, RewardTargets, SqilTargets,
    TargetUpdate,
};
pub use loss::{
    algorithm_loss_and_grad, implicit_reward, iq_loss_and_grad, iqv0_loss_and_grad, least_squares_loss_and_grad,
    ls_loss_and_grad, policy_values, sqil_loss_and_grad, LossOutput, TargetRule,
};
pub use update::{
    augmented_q, critic_step, entropy_clip_update, policy_improvement, EntropyClip, LsIqAgent, StepContext,
};

//! Behavioral cloning guided by a frozen diffusion model of expert state-action pairs.

mod loss;
mod policy;
mod train;

pub use loss::{
    agent_diff_loss, agent_diff_terms, bc_loss, dbc_objective, dm_loss, dm_term, expert_diff_loss, expert_diff_losses,
    mse_with_grad, total_loss, DbcObjective, NoiseDraw, PolicyLoss,
};
pub use policy::{act, Policy};
pub use train::{train_bc, train_guided, train_policy, DbcConfig, DiffusionGuidance, Guidance, PolicyTrainConfig};

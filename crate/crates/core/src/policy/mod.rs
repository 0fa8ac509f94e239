//! PPO backbone: tanh MLP actor-critic, GAE, clipped-surrogate updates with
//! Adam, and the Lagrangian failure penalty.

mod checkpoint;
mod gae;
mod lagrangian;
mod mlp;
mod network;
mod ppo;
mod rollout;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gae::{compute_gae, gae};
pub use lagrangian::{lagrangian_update, LagrangianState};
pub use mlp::{Dense, Mlp};
pub use network::{policy_forward, ActionDist, MlpParams, PolicyHead, DEFAULT_HIDDEN};
pub use ppo::{ppo_loss, ppo_loss_and_grad, ppo_update, Adam, LossBreakdown, Minibatch, PpoConfig, UpdateStats};
pub use rollout::RolloutBatch;

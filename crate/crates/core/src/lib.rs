//! Safe on-policy reinforcement learning with unsupervised action planning.
//!
//! Recovery actions (actions that take the agent from a danger state back to
//! a safe state) are stored in a [`safety_buffer::SafetyBuffer`], organized by
//! k-means clustering over state features, and replayed whenever the agent
//! enters danger again. The backbone learner is PPO, optionally with a
//! Lagrangian failure penalty.

pub mod bench;
pub mod clustering;
pub mod cmdp;
pub mod envs;
pub mod error;
pub mod policy;
pub mod rng;
pub mod safety_buffer;
pub mod trainer;

pub use error::{Error, Result};

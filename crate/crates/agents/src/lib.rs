//! Reinforcement-learning agents for the PlanarKitty tasks: off-policy
//! single-task learners (twin-critic entropy-regularized actor-critic and
//! its truncated-quantile variant), the latent-context meta-learner, and the
//! gradient-based meta-learner, plus shared replay, rollout, metrics, and
//! checkpoint machinery.

pub mod checkpoint;
pub mod error;
pub mod maml;
pub mod metrics;
pub mod pearl;
pub mod policy;
pub mod replay;
pub mod rollout;
pub mod sac;
pub mod singletask;
pub mod tqc;

pub use checkpoint::Checkpoint;
pub use error::{AgentError, Result};
pub use replay::{ReplayBuffer, Transition};

/// Production scalar for training; matches the checkpoint wire format.
pub type Real = f32;

//! PlanarKitty: a deterministic planar proxy of a 12-joint quadruped.
//!
//! The robot lives in the plane. Four "middle" joints produce thrust along
//! the torso heading, four corner joints steer, actuation has first-order
//! lag, and an uprightness scalar decays under jerky control. Episodes are
//! exactly 160 steps of 100 ms. Task families vary the goal, ground
//! friction, floor incline, or a sign-inversion mask on the joints — the
//! observation never reveals which, so task identity must be inferred from
//! reward.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod reward;
pub mod state;
pub mod task;
pub mod trajectory;

pub use dynamics::{Dynamics, RandomizationRanges};
pub use env::{step_state, PlanarKitty, StepInfo, StepResult};
pub use error::{EnvError, Result};
pub use reward::{compute_reward, is_success, RewardTerms};
pub use state::{EnvState, Observation, ACTION_DIM, OBS_DIM};
pub use task::{enumerate_tasks, sample_task, TaskFamily, TaskSpec};
pub use trajectory::{write_trajectory_csv, TrajectoryStep};

/// Steps per episode.
pub const EPISODE_LEN: u32 = 160;
/// Control interval in seconds.
pub const DT: f64 = 0.1;

/// Concrete environment at production precision.
pub type Env32 = PlanarKitty<f32>;

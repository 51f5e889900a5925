//! Episode dynamics: first-order actuation, planar thrust/turn, fixed
//! 160-step horizon.

use diffcore::rng::RngStream;
use diffcore::scalar::Scalar;

use crate::dynamics::{randomize_dynamics, Dynamics, RandomizationRanges};
use crate::error::{EnvError, Result};
use crate::reward::{compute_reward, is_success, RewardTerms};
use crate::state::{EnvState, Observation, ACTION_DIM};
use crate::task::{TaskSpec, MIDDLE_JOINTS};
use crate::{DT, EPISODE_LEN};

/// Base actuation rate (1/s) before the gain multiplier.
const K_ACT: f64 = 5.0;
/// Thrust force coefficient (m/s^2 at mu = f = 1).
const C_FORCE: f64 = 2.0;
/// Velocity drag (1/s) before the drag multiplier.
const C_DRAG: f64 = 1.5;
/// Effective gravity component along the slope (m/s^2).
const G_SLOPE: f64 = 4.905;
/// Turn rate coefficient (rad/s at full differential).
const C_TURN: f64 = 2.0;
/// Uprightness recovery rate (1/s).
const U_RECOVER: f64 = 2.0;
/// Uprightness penalty per squared action jerk.
const U_JERK: f64 = 0.05;

/// Per-step diagnostics.
#[derive(Clone, Debug)]
pub struct StepInfo<S> {
    pub dist: S,
    pub heading: S,
    pub success: bool,
    pub terms: RewardTerms<S>,
}

#[derive(Clone, Debug)]
pub struct StepResult<S> {
    pub observation: Observation<S>,
    pub reward: S,
    /// True only on the 160th step; episodes never terminate early.
    pub done: bool,
    pub info: StepInfo<S>,
}

/// Advance one control interval. Pure function of (state, task, dynamics,
/// action); the action is clipped to [-1, 1] and the task mask is applied
/// after clipping.
pub fn step_state<S: Scalar>(
    state: &EnvState<S>,
    task: &TaskSpec<S>,
    dynamics: &Dynamics<S>,
    action: &[S; ACTION_DIM],
) -> (EnvState<S>, StepResult<S>) {
    debug_assert!(state.step_index < EPISODE_LEN);
    let dt = S::c(DT);
    let mut next = state.clone();

    let mut clipped = [S::zero(); ACTION_DIM];
    for (c, &a) in clipped.iter_mut().zip(action) {
        *c = a.max(-S::one()).min(S::one());
    }

    // First-order actuator lag toward the masked target angle.
    let k_act = S::c(K_ACT) * dynamics.actuator_gain;
    for j in 0..ACTION_DIM {
        let target = task.mask[j] * clipped[j];
        let q_new = state.q[j] + dt * k_act * (target - state.q[j]);
        next.q_dot[j] = (q_new - state.q[j]) / dt;
        next.q[j] = q_new;
    }

    // Thrust from the middle joints, steering from the corner differential.
    let mut thrust = S::zero();
    for &j in &MIDDLE_JOINTS {
        thrust += next.q[j];
    }
    thrust = thrust / S::c(4.0);
    let turn = (next.q[0] + next.q[6] - next.q[3] - next.q[9]) / S::c(4.0);

    let mu = task.friction_mu * dynamics.friction_slide;
    let force = S::c(C_FORCE) * mu * thrust * dynamics.thrust_scale;
    let slope = S::c(G_SLOPE) * (task.incline_deg * S::c(std::f64::consts::PI / 180.0)).sin();
    let decay = S::one() - S::c(C_DRAG) * dynamics.drag * dt;
    // Velocity update sees the pre-turn heading.
    next.v[0] = decay * state.v[0] + dt * force * state.psi.cos();
    next.v[1] = decay * state.v[1] + dt * (force * state.psi.sin() - slope);
    next.p[0] = state.p[0] + dt * next.v[0];
    next.p[1] = state.p[1] + dt * next.v[1];

    next.omega = S::c(C_TURN) * turn;
    next.psi = state.psi + dt * next.omega;

    // Uprightness: recovery toward 1, penalized by action jerk.
    let mut jerk = S::zero();
    for j in 0..ACTION_DIM {
        let d = clipped[j] - state.prev_action[j];
        jerk += d * d;
    }
    let u_raw = state.u + dt * S::c(U_RECOVER) * (S::one() - state.u) - S::c(U_JERK) * jerk;
    next.u = u_raw.max(-S::one()).min(S::one());

    next.prev_action = clipped;
    next.step_index = state.step_index + 1;

    let (reward, terms, dist, heading) = compute_reward(&next, task);
    let result = StepResult {
        observation: next.observation(),
        reward,
        done: next.step_index == EPISODE_LEN,
        info: StepInfo {
            dist,
            heading,
            success: is_success(dist, heading),
            terms,
        },
    };
    (next, result)
}

/// Stateful wrapper owning the task, randomization ranges, and current
/// episode state.
#[derive(Clone, Debug)]
pub struct PlanarKitty<S> {
    task: TaskSpec<S>,
    ranges: RandomizationRanges,
    dynamics: Dynamics<S>,
    state: EnvState<S>,
    done: bool,
}

impl<S: Scalar> PlanarKitty<S> {
    pub fn new(task: TaskSpec<S>, ranges: RandomizationRanges) -> Self {
        PlanarKitty {
            task,
            ranges,
            dynamics: Dynamics::unit(),
            state: EnvState::initial(),
            done: false,
        }
    }

    pub fn task(&self) -> &TaskSpec<S> {
        &self.task
    }

    pub fn set_task(&mut self, task: TaskSpec<S>) {
        self.task = task;
    }

    pub fn state(&self) -> &EnvState<S> {
        &self.state
    }

    pub fn dynamics(&self) -> &Dynamics<S> {
        &self.dynamics
    }

    /// Start a fresh episode: canonical state, fresh dynamics multipliers.
    pub fn reset(&mut self, rng: &mut RngStream) -> (EnvState<S>, Observation<S>) {
        self.dynamics = randomize_dynamics(&self.ranges, self.task.family, rng);
        self.state = EnvState::initial();
        self.done = false;
        (self.state.clone(), self.state.observation())
    }

    pub fn step(&mut self, action: &[S; ACTION_DIM]) -> Result<StepResult<S>> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (next, result) = step_state(&self.state, &self.task, &self.dynamics, action);
        self.state = next;
        self.done = result.done;
        Ok(result)
    }
}

//! Episode rollout and evaluation helpers.

use diffcore::rng::RngStream;
use envkit::{Env32, Observation, TrajectoryStep, ACTION_DIM, EPISODE_LEN};

use crate::error::Result;
use crate::replay::Transition;
use crate::Real;

/// Summary of one finished episode. Success is the final-step predicate
/// (within 0.5 m, heading above 0.9).
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub ret: Real,
    pub success: bool,
    pub end_dist: Real,
    /// Per-step goal distance, length 160.
    pub dist_trace: Vec<Real>,
}

/// Roll one full episode, returning the outcome, the transitions, and
/// (optionally) a trajectory recording.
pub fn run_episode(
    env: &mut Env32,
    env_rng: &mut RngStream,
    mut policy: impl FnMut(&Observation<Real>) -> [Real; ACTION_DIM],
    record: bool,
) -> Result<(EpisodeOutcome, Vec<Transition>, Vec<TrajectoryStep<Real>>)> {
    let (_, mut obs) = env.reset(env_rng);
    let mut transitions = Vec::with_capacity(EPISODE_LEN as usize);
    let mut steps = Vec::new();
    let mut ret = 0.0;
    let mut dist_trace = Vec::with_capacity(EPISODE_LEN as usize);
    let mut last_success = false;
    let mut last_dist = Real::MAX;
    for t in 0..EPISODE_LEN {
        let action = policy(&obs);
        let res = env.step(&action)?;
        ret += res.reward;
        dist_trace.push(res.info.dist);
        last_success = res.info.success;
        last_dist = res.info.dist;
        transitions.push(Transition {
            obs: obs.0,
            action,
            reward: res.reward,
            next_obs: res.observation.0,
            done: res.done,
        });
        if record {
            steps.push(TrajectoryStep {
                step: t + 1,
                observation: res.observation,
                action,
                reward: res.reward,
                dist: res.info.dist,
                heading: res.info.heading,
                success: res.info.success,
            });
        }
        obs = res.observation;
    }
    Ok((
        EpisodeOutcome {
            ret,
            success: last_success,
            end_dist: last_dist,
            dist_trace,
        },
        transitions,
        steps,
    ))
}

/// Mean return / success rate / end distance over a set of outcomes.
pub fn summarize(outcomes: &[EpisodeOutcome]) -> (Real, Real, Real) {
    if outcomes.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = outcomes.len() as Real;
    let ret = outcomes.iter().map(|o| o.ret).sum::<Real>() / n;
    let succ = outcomes.iter().filter(|o| o.success).count() as Real / n;
    let dist = outcomes.iter().map(|o| o.end_dist).sum::<Real>() / n;
    (ret, succ, dist)
}

//! Shaped locomotion reward.
//!
//! r = r_upright - 100 r_falling - 4 dist + 2 r_heading + 5 small + 10 big,
//! with the upright/heading thresholds both at 0.9.

use diffcore::scalar::Scalar;

use crate::state::EnvState;
use crate::task::TaskSpec;

pub const UPRIGHT_THRESHOLD: f64 = 0.9;

/// Weighted contributions of each reward term. The total is their sum, in
/// this field order, so a breakdown always re-sums to the returned reward
/// exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms<S> {
    pub upright: S,
    pub falling: S,
    pub dist: S,
    pub heading: S,
    pub small_bonus: S,
    pub big_bonus: S,
}

impl<S: Scalar> RewardTerms<S> {
    /// Fixed-order sum; the canonical reward value.
    pub fn total(&self) -> S {
        self.upright + self.falling + self.dist + self.heading + self.small_bonus + self.big_bonus
    }
}

/// Episode-success predicate: strictly closer than 0.5 m with heading cosine
/// strictly above 0.9.
pub fn is_success<S: Scalar>(dist: S, heading: S) -> bool {
    dist < S::c(0.5) && heading > S::c(0.9)
}

/// Reward for the given state under the given task, with its term breakdown.
/// Also returns (dist, heading) since every caller wants them.
pub fn compute_reward<S: Scalar>(state: &EnvState<S>, task: &TaskSpec<S>) -> (S, RewardTerms<S>, S, S) {
    let thr = S::c(UPRIGHT_THRESHOLD);
    let scale = S::one() - thr;

    let dx = state.p[0] - task.goal[0];
    let dy = state.p[1] - task.goal[1];
    let dist = (dx * dx + dy * dy).sqrt();
    let heading = state.heading();

    let near = dist < S::c(0.5);
    let aligned = heading > S::c(0.9);

    let terms = RewardTerms {
        upright: (state.u - thr) / scale,
        falling: if state.u < thr { S::c(-100.0) } else { S::zero() },
        dist: S::c(-4.0) * dist,
        heading: S::c(2.0) * ((heading - S::c(0.9)) / S::c(0.1)),
        small_bonus: S::c(5.0)
            * (S::c(if near { 1.0 } else { 0.0 }) + S::c(if aligned { 1.0 } else { 0.0 })),
        big_bonus: if near && aligned { S::c(10.0) } else { S::zero() },
    };
    (terms.total(), terms, dist, heading)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(u: f64, p: [f64; 2]) -> EnvState<f64> {
        let mut s = EnvState::initial();
        s.u = u;
        s.p = p;
        s
    }

    fn default_task() -> TaskSpec<f64> {
        crate::task::enumerate_tasks(crate::task::TaskFamily::Direction)[0].clone()
    }

    #[test]
    fn at_goal_upright_scores_23() {
        let s = state_with(1.0, [0.0, 2.0]);
        let (r, _, dist, heading) = compute_reward(&s, &default_task());
        assert_eq!(dist, 0.0);
        assert!((heading - 1.0).abs() < 1e-12);
        assert!((r - 23.0).abs() < 1e-9, "r = {r}");
    }

    #[test]
    fn episode_start_scores_zero() {
        let s = state_with(1.0, [0.0, 0.0]);
        let (r, terms, dist, _) = compute_reward(&s, &default_task());
        assert_eq!(dist, 2.0);
        assert!((r - 0.0).abs() < 1e-9, "r = {r}");
        assert!((terms.dist + 8.0).abs() < 1e-12);
        assert!((terms.small_bonus - 5.0).abs() < 1e-12, "heading bonus only");
        assert_eq!(terms.big_bonus, 0.0);
    }

    #[test]
    fn fallen_far_scores_minus_105() {
        let s = state_with(0.5, [0.0, 0.0]);
        let (r, _, _, _) = compute_reward(&s, &default_task());
        assert!((r + 105.0).abs() < 1e-9, "r = {r}");
    }

    #[test]
    fn success_boundaries_are_strict() {
        assert!(is_success(0.4f64, 0.95));
        assert!(!is_success(0.5f64, 0.95));
        assert!(!is_success(0.1f64, 0.9));
    }
}

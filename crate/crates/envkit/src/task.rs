//! Task families and task sampling.

use diffcore::rng::RngStream;
use diffcore::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Indices of the thrust-producing middle joints, one per leg.
pub const MIDDLE_JOINTS: [usize; 4] = [1, 4, 7, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    /// Goal at (0, 2) or (0, -2), equal probability.
    Direction,
    /// Ground friction coefficient in {0.2, 0.7, 1.2}.
    Friction,
    /// Floor incline in {-15, -10, -5, 0, 5, 10, 15} degrees.
    Angle,
    /// One middle joint inverted (or none), each with probability 1/5.
    InvertedActions,
    /// Exactly two middle joints inverted; held out from InvertedActions
    /// training.
    InvertedPairs,
}

impl TaskFamily {
    pub fn parse(name: &str) -> Option<TaskFamily> {
        match name {
            "direction" => Some(TaskFamily::Direction),
            "friction" => Some(TaskFamily::Friction),
            "angle" => Some(TaskFamily::Angle),
            "inverted" => Some(TaskFamily::InvertedActions),
            "inverted2" => Some(TaskFamily::InvertedPairs),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::Direction => "direction",
            TaskFamily::Friction => "friction",
            TaskFamily::Angle => "angle",
            TaskFamily::InvertedActions => "inverted",
            TaskFamily::InvertedPairs => "inverted2",
        }
    }
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One sampled task. Defaults outside the varied dimension: goal (0, 2),
/// friction 1.0, incline 0, no inversions.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec<S> {
    pub family: TaskFamily,
    /// Goal position in meters.
    pub goal: [S; 2],
    pub friction_mu: S,
    pub incline_deg: S,
    /// Per-joint sign, -1 on inverted joints.
    pub mask: [S; 12],
}

impl<S: Scalar> TaskSpec<S> {
    fn base(family: TaskFamily) -> Self {
        TaskSpec {
            family,
            goal: [S::zero(), S::c(2.0)],
            friction_mu: S::one(),
            incline_deg: S::zero(),
            mask: [S::one(); 12],
        }
    }

    fn with_inverted(family: TaskFamily, legs: &[usize]) -> Self {
        let mut t = Self::base(family);
        for &leg in legs {
            t.mask[MIDDLE_JOINTS[leg]] = -S::one();
        }
        t
    }

    /// Legs (0..4) whose middle joint is inverted.
    pub fn inverted_legs(&self) -> Vec<usize> {
        MIDDLE_JOINTS
            .iter()
            .enumerate()
            .filter(|(_, &j)| self.mask[j] < S::zero())
            .map(|(leg, _)| leg)
            .collect()
    }

    /// Stable human-readable task label for CSV output.
    pub fn label(&self) -> String {
        match self.family {
            TaskFamily::Direction => {
                if self.goal[1] > S::zero() {
                    "forward".to_string()
                } else {
                    "backward".to_string()
                }
            }
            TaskFamily::Friction => format!("mu{:.1}", self.friction_mu.to_f64_lossy()),
            TaskFamily::Angle => format!("deg{}", self.incline_deg.to_f64_lossy() as i64),
            TaskFamily::InvertedActions | TaskFamily::InvertedPairs => {
                let legs = self.inverted_legs();
                if legs.is_empty() {
                    "noinv".to_string()
                } else {
                    format!(
                        "inv{}",
                        legs.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("")
                    )
                }
            }
        }
    }
}

/// Draw one task uniformly from its family.
pub fn sample_task<S: Scalar>(family: TaskFamily, rng: &mut RngStream) -> TaskSpec<S> {
    let tasks = enumerate_tasks::<S>(family);
    tasks[rng.below(tasks.len())].clone()
}

/// The full (finite) task set of a family, in canonical order.
pub fn enumerate_tasks<S: Scalar>(family: TaskFamily) -> Vec<TaskSpec<S>> {
    match family {
        TaskFamily::Direction => vec![
            TaskSpec::base(family),
            TaskSpec {
                goal: [S::zero(), S::c(-2.0)],
                ..TaskSpec::base(family)
            },
        ],
        TaskFamily::Friction => [0.2, 0.7, 1.2]
            .iter()
            .map(|&mu| TaskSpec {
                friction_mu: S::c(mu),
                ..TaskSpec::base(family)
            })
            .collect(),
        TaskFamily::Angle => [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0]
            .iter()
            .map(|&deg| TaskSpec {
                incline_deg: S::c(deg),
                ..TaskSpec::base(family)
            })
            .collect(),
        TaskFamily::InvertedActions => {
            let mut tasks = vec![TaskSpec::base(family)];
            for leg in 0..4 {
                tasks.push(TaskSpec::with_inverted(family, &[leg]));
            }
            tasks
        }
        TaskFamily::InvertedPairs => {
            let mut tasks = Vec::with_capacity(6);
            for a in 0..4 {
                for b in (a + 1)..4 {
                    tasks.push(TaskSpec::with_inverted(family, &[a, b]));
                }
            }
            tasks
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffcore::rng::Seeder;

    #[test]
    fn direction_goals_are_balanced() {
        let mut rng = Seeder::new(1).stream("task");
        let n = 10_000;
        let mut fwd = 0;
        for _ in 0..n {
            let t = sample_task::<f32>(TaskFamily::Direction, &mut rng);
            if t.goal[1] > 0.0 {
                fwd += 1;
            }
        }
        let freq = fwd as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "forward freq {freq}");
    }

    #[test]
    fn friction_defaults_to_one_elsewhere() {
        let mut rng = Seeder::new(2).stream("task");
        for family in [
            TaskFamily::Direction,
            TaskFamily::Angle,
            TaskFamily::InvertedActions,
        ] {
            let t = sample_task::<f32>(family, &mut rng);
            assert_eq!(t.friction_mu, 1.0);
        }
        for family in [TaskFamily::Direction, TaskFamily::InvertedActions] {
            let t = sample_task::<f32>(family, &mut rng);
            assert_eq!(t.incline_deg, 0.0, "incline off outside Angle");
        }
        let t = sample_task::<f32>(TaskFamily::Friction, &mut rng);
        assert!([0.2f32, 0.7, 1.2].contains(&t.friction_mu));
        assert_eq!(t.goal, [0.0, 2.0]);
    }

    #[test]
    fn inverted_masks_touch_only_middle_joints() {
        let mut rng = Seeder::new(3).stream("task");
        let mut seen_none = false;
        for _ in 0..200 {
            let t = sample_task::<f32>(TaskFamily::InvertedActions, &mut rng);
            let flipped: Vec<usize> = (0..12).filter(|&j| t.mask[j] < 0.0).collect();
            assert!(flipped.len() <= 1);
            for j in &flipped {
                assert!(MIDDLE_JOINTS.contains(j));
            }
            seen_none |= flipped.is_empty();
        }
        assert!(seen_none, "no-inversion case must occur");
    }

    #[test]
    fn inverted_actions_rates_match_one_fifth() {
        let mut rng = Seeder::new(4).stream("task");
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let t = sample_task::<f32>(TaskFamily::InvertedActions, &mut rng);
            let legs = t.inverted_legs();
            match legs.as_slice() {
                [] => counts[4] += 1,
                [leg] => counts[*leg] += 1,
                _ => panic!("more than one inversion"),
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 0.02, "case {i} freq {freq}");
        }
    }

    #[test]
    fn pair_family_has_six_two_leg_tasks() {
        let tasks = enumerate_tasks::<f32>(TaskFamily::InvertedPairs);
        assert_eq!(tasks.len(), 6);
        for t in &tasks {
            assert_eq!(t.inverted_legs().len(), 2);
        }
        // All pairs distinct.
        for i in 0..tasks.len() {
            for j in (i + 1)..tasks.len() {
                assert_ne!(tasks[i].inverted_legs(), tasks[j].inverted_legs());
            }
        }
    }
}

//! Single-task training loop shared by the two off-policy learners, either
//! on one fixed task or with the task resampled every episode (the
//! domain-randomization baseline).

use serde::{Deserialize, Serialize};

use diffcore::rng::Seeder;
use diffcore::Real;
use envkit::{
    enumerate_tasks, sample_task, Env32, PlanarKitty, RandomizationRanges, TaskFamily, TaskSpec,
    ACTION_DIM, EPISODE_LEN, OBS_DIM,
};

use crate::error::{AgentError, Result};
use crate::metrics::MetricsRow;
use crate::replay::{ReplayBuffer, Transition};
use crate::rollout::{run_episode, summarize, EpisodeOutcome};
use crate::sac::{SacConfig, SacLearner};
use crate::tqc::{TqcConfig, TqcLearner};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SingleTaskAlgo {
    Sac,
    Tqc,
}

/// Fixed task vs per-episode resampling from the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Index into the family's canonical task enumeration.
    Fixed(usize),
    Resample,
}

#[derive(Clone, Debug)]
pub struct SingleTaskRun {
    pub algo: SingleTaskAlgo,
    pub family: TaskFamily,
    pub mode: TaskMode,
    pub budget_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    pub sac: SacConfig,
    pub tqc: TqcConfig,
}

impl Default for SingleTaskRun {
    fn default() -> Self {
        SingleTaskRun {
            algo: SingleTaskAlgo::Sac,
            family: TaskFamily::Direction,
            mode: TaskMode::Fixed(0),
            budget_steps: 100_000,
            eval_every: 4_000,
            eval_episodes: 10,
            replay_capacity: 200_000,
            sac: SacConfig::default(),
            tqc: TqcConfig::default(),
        }
    }
}

pub enum Learner {
    Sac(SacLearner),
    Tqc(TqcLearner),
}

impl Learner {
    pub fn act_stochastic(
        &self,
        obs: &[Real],
        rng: &mut diffcore::rng::RngStream,
    ) -> Result<[Real; ACTION_DIM]> {
        Ok(match self {
            Learner::Sac(l) => l.actor.act_stochastic(&l.actor_store, obs, rng)?.0,
            Learner::Tqc(l) => l.actor.act_stochastic(&l.actor_store, obs, rng)?.0,
        })
    }

    pub fn act_mean(&self, obs: &[Real]) -> Result<[Real; ACTION_DIM]> {
        Ok(match self {
            Learner::Sac(l) => l.actor.act_mean(&l.actor_store, obs)?,
            Learner::Tqc(l) => l.actor.act_mean(&l.actor_store, obs)?,
        })
    }

    fn update(
        &mut self,
        batch: &crate::replay::BatchTensors,
        rng: &mut diffcore::rng::RngStream,
    ) -> Result<crate::sac::SacLosses> {
        match self {
            Learner::Sac(l) => l.update(batch, rng),
            Learner::Tqc(l) => l.update(batch, rng),
        }
    }

    fn batch_size(&self) -> usize {
        match self {
            Learner::Sac(l) => l.cfg.batch,
            Learner::Tqc(l) => l.cfg.sac.batch,
        }
    }

    fn update_every(&self) -> usize {
        match self {
            Learner::Sac(l) => l.cfg.update_every,
            Learner::Tqc(l) => l.cfg.sac.update_every,
        }
    }

    fn learning_starts(&self) -> usize {
        match self {
            Learner::Sac(l) => l.cfg.learning_starts,
            Learner::Tqc(l) => l.cfg.sac.learning_starts,
        }
    }
}

pub struct SingleTaskArtifacts {
    pub learner: Learner,
    pub metrics: Vec<MetricsRow>,
    pub env_steps: u64,
}

/// Deterministic evaluation: `episodes` rollouts under the mean policy.
/// In Resample mode tasks cycle through the family enumeration so every task
/// is covered evenly.
pub fn evaluate_learner(
    learner: &Learner,
    family: TaskFamily,
    mode: &TaskMode,
    episodes: usize,
    seeder: &Seeder,
    eval_tag: u64,
) -> Result<Vec<EpisodeOutcome>> {
    let tasks = enumerate_tasks::<Real>(family);
    let mut outcomes = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let task = match mode {
            TaskMode::Fixed(i) => tasks[*i].clone(),
            TaskMode::Resample => tasks[ep % tasks.len()].clone(),
        };
        let mut env: Env32 = PlanarKitty::new(task, RandomizationRanges::default());
        let mut env_rng = seeder.stream_indexed("eval_env", eval_tag * 1_000 + ep as u64);
        let (outcome, _, _) = run_episode(
            &mut env,
            &mut env_rng,
            |obs| learner.act_mean(obs.as_slice()).unwrap_or([0.0; ACTION_DIM]),
            false,
        )?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Train an off-policy learner on one task (or a task family with
/// per-episode resampling). Returns the learner, the periodic-eval metrics,
/// and the environment step count.
pub fn train_single_task(run: &SingleTaskRun, seeder: &Seeder) -> Result<SingleTaskArtifacts> {
    let tasks = enumerate_tasks::<Real>(run.family);
    if let TaskMode::Fixed(i) = run.mode {
        if i >= tasks.len() {
            return Err(AgentError::InvalidConfig(format!(
                "task index {i} out of range for {} ({} tasks)",
                run.family,
                tasks.len()
            )));
        }
    }

    let mut init_rng = seeder.stream("init");
    let mut learner = match run.algo {
        SingleTaskAlgo::Sac => Learner::Sac(SacLearner::new(
            OBS_DIM,
            ACTION_DIM,
            run.sac.clone(),
            &mut init_rng,
        )?),
        SingleTaskAlgo::Tqc => Learner::Tqc(TqcLearner::new(
            OBS_DIM,
            ACTION_DIM,
            run.tqc.clone(),
            &mut init_rng,
        )?),
    };

    let mut buffer = ReplayBuffer::new(run.replay_capacity);
    let mut env_rng = seeder.stream("env");
    let mut task_rng = seeder.stream("task_sampling");
    let mut policy_rng = seeder.stream("policy_noise");
    let mut warmup_rng = seeder.stream("warmup_actions");
    let mut update_rng = seeder.stream("update_noise");

    let mut metrics = Vec::new();
    let mut eval_tag = 0;
    let record_eval = |learner: &Learner, step: u64, metrics: &mut Vec<MetricsRow>, tag: u64| -> Result<()> {
        let outcomes = evaluate_learner(learner, run.family, &run.mode, run.eval_episodes, seeder, tag)?;
        let (mean_return, success_rate, end_dist) = summarize(&outcomes);
        metrics.push(MetricsRow {
            step,
            mean_return,
            success_rate,
            end_dist,
        });
        Ok(())
    };

    record_eval(&learner, 0, &mut metrics, eval_tag)?;
    eval_tag += 1;

    let mut steps: u64 = 0;
    let mut next_eval = run.eval_every;
    'outer: while steps < run.budget_steps {
        // One episode of collection.
        let task: TaskSpec<Real> = match &run.mode {
            TaskMode::Fixed(i) => tasks[*i].clone(),
            TaskMode::Resample => sample_task(run.family, &mut task_rng),
        };
        let mut env: Env32 = PlanarKitty::new(task, RandomizationRanges::default());
        let (_, mut obs) = env.reset(&mut env_rng);
        for _ in 0..EPISODE_LEN {
            let action = if (buffer.total_pushed() as usize) < learner.learning_starts() {
                let mut a = [0.0; ACTION_DIM];
                for v in &mut a {
                    *v = warmup_rng.uniform(-1.0, 1.0) as Real;
                }
                a
            } else {
                learner.act_stochastic(obs.as_slice(), &mut policy_rng)?
            };
            let res = env.step(&action)?;
            buffer.push(Transition {
                obs: obs.0,
                action,
                reward: res.reward,
                next_obs: res.observation.0,
                done: res.done,
            });
            obs = res.observation;
            steps += 1;

            let warm = buffer.len() >= learner.batch_size()
                && buffer.total_pushed() as usize >= learner.learning_starts();
            if warm && steps % learner.update_every() as u64 == 0 {
                let idx = buffer.sample_indices(learner.batch_size(), &mut update_rng);
                let batch = buffer.gather(&idx);
                learner.update(&batch, &mut update_rng)?;
            }

            if steps >= next_eval {
                record_eval(&learner, steps, &mut metrics, eval_tag)?;
                eval_tag += 1;
                next_eval += run.eval_every;
            }
            if steps >= run.budget_steps {
                break 'outer;
            }
        }
    }

    record_eval(&learner, steps, &mut metrics, eval_tag)?;
    Ok(SingleTaskArtifacts {
        learner,
        metrics,
        env_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_returns_initial_metrics_only() {
        let run = SingleTaskRun {
            budget_steps: 0,
            eval_episodes: 2,
            sac: SacConfig {
                hidden: vec![16],
                ..Default::default()
            },
            ..Default::default()
        };
        let artifacts = train_single_task(&run, &Seeder::new(0)).unwrap();
        assert_eq!(artifacts.env_steps, 0);
        // Initial eval plus the final eval of the untouched policy.
        assert!(artifacts.metrics.len() <= 2);
        assert_eq!(artifacts.metrics[0].step, 0);
    }

    #[test]
    fn fixed_mode_rejects_out_of_range_index() {
        let run = SingleTaskRun {
            mode: TaskMode::Fixed(9),
            ..Default::default()
        };
        assert!(train_single_task(&run, &Seeder::new(0)).is_err());
    }

    #[test]
    fn short_run_is_deterministic() {
        let run = SingleTaskRun {
            budget_steps: 500,
            eval_every: 250,
            eval_episodes: 2,
            sac: SacConfig {
                hidden: vec![16],
                batch: 32,
                learning_starts: 100,
                update_every: 8,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = train_single_task(&run, &Seeder::new(7)).unwrap();
        let b = train_single_task(&run, &Seeder::new(7)).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }
}

//! Gradient-based meta-learner: on-policy vanilla policy gradient with
//! generalized advantage estimation in the inner loop, meta-optimized
//! initialization in the outer loop.
//!
//! The policy is an unsquashed diagonal Gaussian (tanh-free log-probs keep
//! the meta-gradient simple); the environment clips actions at its bounds.

use serde::{Deserialize, Serialize};

use diffcore::graph::{GraphParams, Tape};
use diffcore::rng::{RngStream, Seeder};
use diffcore::scalar::Scalar;
use diffcore::{Activation, Adam, AdamConfig, Mlp, MlpSpec, ParamStore32, Real, Tensor32};
use envkit::{
    enumerate_tasks, Env32, PlanarKitty, RandomizationRanges, TaskFamily, TaskSpec,
    ACTION_DIM, EPISODE_LEN, OBS_DIM,
};

use crate::checkpoint::Checkpoint;
use crate::error::{AgentError, Result};
use crate::metrics::MetricsRow;
use crate::rollout::{run_episode, summarize, EpisodeOutcome};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const LOG_STD_MIN: Real = -20.0;
const LOG_STD_MAX: Real = 2.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MamlConfig {
    pub inner_lr: Real,
    pub outer_lr: f64,
    /// Episodes collected per task for each adaptation step (3200 steps).
    pub episodes_per_task: usize,
    pub gamma: Real,
    pub gae_lambda: Real,
    pub hidden: Vec<usize>,
    pub init_log_std: Real,
    pub tasks_per_outer_step: usize,
    /// Exact meta-gradient via a Hessian-vector product instead of the
    /// first-order approximation.
    pub second_order: bool,
    pub eval_episodes: usize,
    /// Meta-test probe cadence in environment steps.
    pub eval_every: u64,
    /// Ridge coefficient for the linear value baseline fit.
    pub baseline_ridge: f64,
}

impl Default for MamlConfig {
    fn default() -> Self {
        MamlConfig {
            inner_lr: 0.1,
            outer_lr: 3e-4,
            episodes_per_task: 20,
            gamma: 0.99,
            gae_lambda: 0.97,
            hidden: vec![128, 128],
            init_log_std: -0.5,
            tasks_per_outer_step: 3,
            second_order: false,
            eval_episodes: 10,
            eval_every: 200_000,
            baseline_ridge: 1e-4,
        }
    }
}

/// One on-policy episode.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub obs: Vec<[Real; OBS_DIM]>,
    pub actions: Vec<[Real; ACTION_DIM]>,
    pub rewards: Vec<Real>,
    pub log_probs: Vec<Real>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Raw GAE advantages: delta_t = r_t + gamma V_{t+1} - V_t,
/// A_t = sum_k (gamma lambda)^k delta_{t+k}. `values` must hold T+1 entries
/// (bootstrap at the episode end, zero for our fixed-length episodes).
pub fn gae_advantages<S: Scalar>(rewards: &[S], values: &[S], gamma: S, lambda: S) -> Vec<S> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap");
    let mut adv = vec![S::zero(); rewards.len()];
    let mut running = S::zero();
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// In-place normalization to zero mean, unit variance.
pub fn normalize_advantages(adv: &mut [Real]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as Real;
    let mean = adv.iter().sum::<Real>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<Real>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv {
        *a = (*a - mean) / std;
    }
}

/// Discounted returns-to-go (terminal bootstrap zero).
pub fn returns_to_go(rewards: &[Real], gamma: Real) -> Vec<Real> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Linear state-value baseline on fixed features of (observation, time),
/// refit per task batch by ridge regression.
pub struct LinearBaseline {
    weights: Vec<f64>,
}

const BASELINE_FEATURES: usize = 2 * OBS_DIM + 4;

fn baseline_features(obs: &[Real; OBS_DIM], t: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(BASELINE_FEATURES);
    for &o in obs.iter() {
        f.push(o as f64);
    }
    for &o in obs.iter() {
        f.push((o as f64) * (o as f64));
    }
    let tt = t as f64 / EPISODE_LEN as f64;
    f.push(tt);
    f.push(tt * tt);
    f.push(tt * tt * tt);
    f.push(1.0);
    f
}

impl LinearBaseline {
    /// Least-squares fit of discounted returns on the features.
    pub fn fit(trajectories: &[Trajectory], gamma: Real, ridge: f64) -> LinearBaseline {
        let d = BASELINE_FEATURES;
        let mut ata = vec![0.0f64; d * d];
        let mut atb = vec![0.0f64; d];
        for traj in trajectories {
            let returns = returns_to_go(&traj.rewards, gamma);
            for (t, obs) in traj.obs.iter().enumerate() {
                let f = baseline_features(obs, t);
                let y = returns[t] as f64;
                for i in 0..d {
                    atb[i] += f[i] * y;
                    for j in i..d {
                        ata[i * d + j] += f[i] * f[j];
                    }
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                ata[i * d + j] = ata[j * d + i];
            }
            ata[i * d + i] += ridge;
        }
        let weights = solve_spd(&mut ata, &mut atb, d);
        LinearBaseline { weights }
    }

    pub fn value(&self, obs: &[Real; OBS_DIM], t: usize) -> Real {
        let f = baseline_features(obs, t);
        f.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() as Real
    }
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_spd(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        let p = a[col * n + col];
        if p.abs() < 1e-12 {
            continue;
        }
        for r in col + 1..n {
            let factor = a[r * n + col] / p;
            if factor != 0.0 {
                for c in col..n {
                    a[r * n + c] -= factor * a[col * n + c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * x[c];
        }
        let p = a[r * n + r];
        x[r] = if p.abs() < 1e-12 { 0.0 } else { acc / p };
    }
    x
}

pub struct MamlLearner {
    pub cfg: MamlConfig,
    policy: Mlp,
    pub store: ParamStore32,
    adam: Adam<Real>,
}

impl MamlLearner {
    pub fn new(cfg: MamlConfig, init_rng: &mut RngStream) -> Result<Self> {
        let spec = MlpSpec::new(OBS_DIM, &cfg.hidden, ACTION_DIM, Activation::Tanh);
        let policy = Mlp::new("pi", spec)?;
        let mut store = ParamStore32::new();
        policy.init(&mut store, init_rng);
        store.insert(
            "pi.log_std",
            Tensor32::full(&[ACTION_DIM], cfg.init_log_std),
        );
        let adam = Adam::new(AdamConfig::with_lr(cfg.outer_lr), &store);
        Ok(MamlLearner {
            cfg,
            policy,
            store,
            adam,
        })
    }

    fn log_std_of(store: &ParamStore32) -> Vec<Real> {
        store
            .get("pi.log_std")
            .unwrap()
            .data()
            .iter()
            .map(|v| v.max(LOG_STD_MIN).min(LOG_STD_MAX))
            .collect()
    }

    /// Stochastic action with its log-probability under `store`.
    pub fn act_stochastic(
        &self,
        store: &ParamStore32,
        obs: &[Real],
        rng: &mut RngStream,
    ) -> Result<([Real; ACTION_DIM], Real)> {
        let mean = self.policy.infer_vec(store, obs)?;
        let log_std = Self::log_std_of(store);
        let mut action = [0.0; ACTION_DIM];
        let mut logp = 0.0;
        for j in 0..ACTION_DIM {
            let std = log_std[j].exp();
            let eps = rng.normal() as Real;
            let a = mean[j] + std * eps;
            action[j] = a;
            logp += -0.5 * eps * eps - log_std[j] - HALF_LN_2PI as Real;
        }
        Ok((action, logp))
    }

    /// Deterministic (mean) action.
    pub fn act_mean(&self, store: &ParamStore32, obs: &[Real]) -> Result<[Real; ACTION_DIM]> {
        let mean = self.policy.infer_vec(store, obs)?;
        let mut action = [0.0; ACTION_DIM];
        action.copy_from_slice(&mean);
        Ok(action)
    }

    /// Collect `episodes` stochastic episodes on `task`.
    pub fn collect(
        &self,
        store: &ParamStore32,
        task: &TaskSpec<Real>,
        episodes: usize,
        env_rng: &mut RngStream,
        noise_rng: &mut RngStream,
    ) -> Result<(Vec<Trajectory>, Vec<EpisodeOutcome>)> {
        let mut env: Env32 = PlanarKitty::new(task.clone(), RandomizationRanges::default());
        let mut trajectories = Vec::with_capacity(episodes);
        let mut outcomes = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut traj = Trajectory {
                obs: Vec::with_capacity(EPISODE_LEN as usize),
                actions: Vec::with_capacity(EPISODE_LEN as usize),
                rewards: Vec::with_capacity(EPISODE_LEN as usize),
                log_probs: Vec::with_capacity(EPISODE_LEN as usize),
            };
            let (_, mut obs) = env.reset(env_rng);
            let mut ret = 0.0;
            let mut success = false;
            let mut end_dist = 0.0;
            let mut dist_trace = Vec::with_capacity(EPISODE_LEN as usize);
            for _ in 0..EPISODE_LEN {
                let (action, logp) = self.act_stochastic(store, obs.as_slice(), noise_rng)?;
                let res = env.step(&action)?;
                traj.obs.push(obs.0);
                traj.actions.push(action);
                traj.rewards.push(res.reward);
                traj.log_probs.push(logp);
                ret += res.reward;
                success = res.info.success;
                end_dist = res.info.dist;
                dist_trace.push(res.info.dist);
                obs = res.observation;
            }
            trajectories.push(traj);
            outcomes.push(EpisodeOutcome {
                ret,
                success,
                end_dist,
                dist_trace,
            });
        }
        Ok((trajectories, outcomes))
    }

    /// Advantages for a task batch: GAE against the refit linear baseline,
    /// normalized across the batch.
    pub fn advantages(&self, trajectories: &[Trajectory]) -> Vec<Vec<Real>> {
        let baseline = LinearBaseline::fit(trajectories, self.cfg.gamma, self.cfg.baseline_ridge);
        let mut all: Vec<Vec<Real>> = trajectories
            .iter()
            .map(|traj| {
                let mut values: Vec<Real> = traj
                    .obs
                    .iter()
                    .enumerate()
                    .map(|(t, o)| baseline.value(o, t))
                    .collect();
                values.push(0.0);
                gae_advantages(&traj.rewards, &values, self.cfg.gamma, self.cfg.gae_lambda)
            })
            .collect();
        let mut flat: Vec<Real> = all.iter().flatten().copied().collect();
        normalize_advantages(&mut flat);
        let mut cursor = 0;
        for traj_adv in &mut all {
            for a in traj_adv.iter_mut() {
                *a = flat[cursor];
                cursor += 1;
            }
        }
        all
    }

    /// Policy-gradient surrogate -mean(log pi(a|s) * A) and its gradients
    /// w.r.t. `store`.
    pub fn vpg_loss_and_grads(
        &self,
        store: &ParamStore32,
        trajectories: &[Trajectory],
        advantages: &[Vec<Real>],
    ) -> Result<(Real, Vec<Tensor32>)> {
        let total: usize = trajectories.iter().map(|t| t.len()).sum();
        let mut obs_data = Vec::with_capacity(total * OBS_DIM);
        let mut act_data = Vec::with_capacity(total * ACTION_DIM);
        let mut adv_data = Vec::with_capacity(total);
        for (traj, adv) in trajectories.iter().zip(advantages) {
            for t in 0..traj.len() {
                obs_data.extend_from_slice(&traj.obs[t]);
                act_data.extend_from_slice(&traj.actions[t]);
                adv_data.push(adv[t]);
            }
        }
        let tape: Tape<Real> = Tape::new();
        let bind = GraphParams::bind(&tape, store);
        let x = tape.constant(Tensor32::from_vec(&[total, OBS_DIM], obs_data).unwrap());
        let mean = self.policy.forward(&bind, x)?;
        let log_std = bind
            .var("pi.log_std")?
            .clamp_(LOG_STD_MIN as f64, LOG_STD_MAX as f64)
            .broadcast_row(total);
        let actions = tape.constant(Tensor32::from_vec(&[total, ACTION_DIM], act_data).unwrap());
        let inv_std = log_std.neg_().exp_();
        let zscore = actions.sub(mean).mul(inv_std);
        let per_dim = zscore
            .square()
            .mul_scalar(-0.5)
            .sub(log_std)
            .add_scalar(-HALF_LN_2PI);
        let logp = per_dim.sum_rows();
        let adv = tape.constant(Tensor32::from_vec(&[total, 1], adv_data).unwrap());
        let loss = logp.mul(adv).mean_all().mul_scalar(-1.0);
        let value = loss.item();
        let mut grads = tape.backward(loss)?;
        Ok((value, bind.collect(&mut grads, store)))
    }

    /// One inner adaptation step: theta' = theta - lr * grad. Pure; the
    /// original parameters are untouched.
    pub fn inner_adapt(
        &self,
        store: &ParamStore32,
        trajectories: &[Trajectory],
        inner_lr: Real,
    ) -> Result<ParamStore32> {
        let advantages = self.advantages(trajectories);
        let (_, grads) = self.vpg_loss_and_grads(store, trajectories, &advantages)?;
        Ok(store.stepped(&grads, inner_lr))
    }

    /// Meta-gradient for one task given pre-adaptation trajectories and
    /// post-adaptation trajectories (with the adapted parameters).
    ///
    /// First order: gradient of the post-adaptation loss at the adapted
    /// parameters. Second order additionally subtracts
    /// inner_lr * H_pre(theta) . g_post, with the Hessian-vector product
    /// taken by central differences of the pre-loss gradient.
    fn meta_gradient(
        &self,
        pre_trajs: &[Trajectory],
        adapted: &ParamStore32,
        post_trajs: &[Trajectory],
    ) -> Result<(Real, Vec<Tensor32>)> {
        let post_adv = self.advantages(post_trajs);
        let (post_loss, g_post) = self.vpg_loss_and_grads(adapted, post_trajs, &post_adv)?;
        if !self.cfg.second_order {
            return Ok((post_loss, g_post));
        }
        let pre_adv = self.advantages(pre_trajs);
        let norm: Real = g_post
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<Real>()
            .sqrt()
            .max(1e-8);
        let eps = 1e-3 / norm;
        let plus = self.store.stepped(&g_post, -eps);
        let minus = self.store.stepped(&g_post, eps);
        let (_, g_plus) = self.vpg_loss_and_grads(&plus, pre_trajs, &pre_adv)?;
        let (_, g_minus) = self.vpg_loss_and_grads(&minus, pre_trajs, &pre_adv)?;
        let mut meta = g_post;
        for ((m, p), q) in meta.iter_mut().zip(&g_plus).zip(&g_minus) {
            for ((mv, &pv), &qv) in m.data_mut().iter_mut().zip(p.data()).zip(q.data()) {
                let hv = (pv - qv) / (2.0 * eps);
                *mv -= self.cfg.inner_lr * hv;
            }
        }
        Ok((post_loss, meta))
    }

    /// One outer optimization step over a batch of tasks. Returns the mean
    /// post-adaptation loss.
    pub fn outer_step(
        &mut self,
        tasks: &[TaskSpec<Real>],
        env_rng: &mut RngStream,
        noise_rng: &mut RngStream,
    ) -> Result<Real> {
        let mut meta_grads = zero_like(&self.store);
        let mut meta_loss = 0.0;
        for task in tasks {
            let (pre_trajs, _) = self.collect(
                &self.store,
                task,
                self.cfg.episodes_per_task,
                env_rng,
                noise_rng,
            )?;
            let adapted = self.inner_adapt(&self.store, &pre_trajs, self.cfg.inner_lr)?;
            let (post_trajs, _) = self.collect(
                &adapted,
                task,
                self.cfg.episodes_per_task,
                env_rng,
                noise_rng,
            )?;
            let (loss, grads) = self.meta_gradient(&pre_trajs, &adapted, &post_trajs)?;
            meta_loss += loss;
            for (acc, g) in meta_grads.iter_mut().zip(grads) {
                acc.add_scaled(&g, 1.0);
            }
        }
        let n = tasks.len() as Real;
        for g in &mut meta_grads {
            for v in g.data_mut() {
                *v /= n;
            }
        }
        self.adam.step(&mut self.store, &meta_grads)?;
        Ok(meta_loss / n)
    }

    /// Test protocol: deterministic pre-adaptation evaluation, 20 adaptation
    /// episodes (3200 steps), one inner step, deterministic post-adaptation
    /// evaluation. The meta-parameters are never mutated.
    pub fn meta_test(
        &self,
        task: &TaskSpec<Real>,
        seeder: &Seeder,
        trial_tag: u64,
    ) -> Result<MamlTestReport> {
        let mut env_rng = seeder.stream_indexed("maml_test_env", trial_tag);
        let mut noise_rng = seeder.stream_indexed("maml_test_noise", trial_tag);

        // Pre and post evaluations share the seed tag: identical per-episode
        // dynamics draws make the comparison paired, and a zero inner step
        // reproduces the pre-adaptation results exactly.
        let pre_eval = self.evaluate(&self.store, task, seeder, trial_tag)?;
        let (adapt_trajs, adapt_outcomes) = self.collect(
            &self.store,
            task,
            self.cfg.episodes_per_task,
            &mut env_rng,
            &mut noise_rng,
        )?;
        let adaptation_steps: u64 = adapt_trajs.iter().map(|t| t.len() as u64).sum();
        let adapted = self.inner_adapt(&self.store, &adapt_trajs, self.cfg.inner_lr)?;
        let post_eval = self.evaluate(&adapted, task, seeder, trial_tag)?;
        Ok(MamlTestReport {
            pre_eval,
            adaptation: adapt_outcomes,
            adaptation_steps,
            post_eval,
        })
    }

    fn evaluate(
        &self,
        store: &ParamStore32,
        task: &TaskSpec<Real>,
        seeder: &Seeder,
        tag: u64,
    ) -> Result<Vec<EpisodeOutcome>> {
        let mut outcomes = Vec::with_capacity(self.cfg.eval_episodes);
        for ep in 0..self.cfg.eval_episodes {
            let mut env: Env32 = PlanarKitty::new(task.clone(), RandomizationRanges::default());
            let mut env_rng = seeder.stream_indexed("maml_eval_env", tag * 1000 + ep as u64);
            let (outcome, _, _) = run_episode(
                &mut env,
                &mut env_rng,
                |obs| self.act_mean(store, obs.as_slice()).unwrap_or([0.0; ACTION_DIM]),
                false,
            )?;
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    pub fn to_checkpoint(&self, step_count: u64, config: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new("maml", step_count, config);
        ck.add_store("policy", self.store.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: MamlConfig) -> Result<Self> {
        let mut rng = Seeder::new(0).stream("ckpt_rebuild");
        let mut learner = Self::new(cfg, &mut rng)?;
        learner.store = ck.store("policy")?.clone();
        Ok(learner)
    }
}

/// Outcome of one meta-test trial.
#[derive(Clone, Debug)]
pub struct MamlTestReport {
    pub pre_eval: Vec<EpisodeOutcome>,
    pub adaptation: Vec<EpisodeOutcome>,
    /// Environment steps consumed by the adaptation episodes.
    pub adaptation_steps: u64,
    pub post_eval: Vec<EpisodeOutcome>,
}

fn zero_like(store: &ParamStore32) -> Vec<Tensor32> {
    store.iter().map(|(_, t)| Tensor32::zeros(t.shape())).collect()
}

/// Meta-training driver. Budget counts environment steps across all
/// collection.
pub fn meta_train(
    family: TaskFamily,
    cfg: MamlConfig,
    budget_steps: u64,
    seeder: &Seeder,
) -> Result<(MamlLearner, Vec<MetricsRow>, u64)> {
    let tasks = enumerate_tasks::<Real>(family);
    let mut init_rng = seeder.stream("init");
    let mut learner = MamlLearner::new(cfg.clone(), &mut init_rng)?;
    let mut env_rng = seeder.stream("env");
    let mut noise_rng = seeder.stream("policy_noise");

    let steps_per_outer = (cfg.tasks_per_outer_step as u64)
        * (cfg.episodes_per_task as u64)
        * 2
        * u64::from(EPISODE_LEN);
    if budget_steps > 0 && budget_steps < steps_per_outer {
        return Err(AgentError::InvalidConfig(format!(
            "budget {budget_steps} is below one outer step ({steps_per_outer})"
        )));
    }

    let mut metrics = Vec::new();
    let mut steps = 0u64;
    let mut rotation = 0usize;
    let mut probe = 0u64;
    let mut next_eval = cfg.eval_every;
    while steps + steps_per_outer <= budget_steps {
        let batch: Vec<TaskSpec<Real>> = (0..cfg.tasks_per_outer_step)
            .map(|k| tasks[(rotation + k) % tasks.len()].clone())
            .collect();
        rotation = (rotation + cfg.tasks_per_outer_step) % tasks.len();
        learner.outer_step(&batch, &mut env_rng, &mut noise_rng)?;
        steps += steps_per_outer;

        if steps >= next_eval {
            let task = &tasks[(probe as usize) % tasks.len()];
            let report = learner.meta_test(task, seeder, 900_000 + probe)?;
            let (mean_return, success_rate, end_dist) = summarize(&report.post_eval);
            metrics.push(MetricsRow {
                step: steps,
                mean_return,
                success_rate,
                end_dist,
            });
            // Meta-test consumed env steps too; count them.
            steps += report.adaptation_steps;
            probe += 1;
            next_eval += cfg.eval_every;
        }
    }
    Ok((learner, metrics, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_telescopes_with_unit_discounts() {
        // gamma = 1, lambda = 1, zero values: advantages are reverse sums.
        let adv = gae_advantages(&[1.0f64, 1.0, 1.0], &[0.0; 4], 1.0, 1.0);
        assert_eq!(adv, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn gae_lambda_zero_is_one_step_residual() {
        let adv = gae_advantages(&[2.0f64, -1.0, 0.5], &[0.0; 4], 0.9, 0.0);
        assert_eq!(adv, vec![2.0, -1.0, 0.5]);
    }

    #[test]
    fn gae_hand_recursion() {
        // gamma = 0.5, lambda = 1, rewards [0, 0, 1]: [0.25, 0.5, 1].
        let adv = gae_advantages(&[0.0f64, 0.0, 1.0], &[0.0; 4], 0.5, 1.0);
        assert!((adv[0] - 0.25).abs() < 1e-12);
        assert!((adv[1] - 0.5).abs() < 1e-12);
        assert!((adv[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gae_matches_monte_carlo_at_unit_lambda() {
        // lambda = 1, gamma = 1, zero baseline: A_t equals the
        // Monte-Carlo return-to-go.
        let mut rng = Seeder::new(3).stream("mc");
        let rewards: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let adv = gae_advantages(&rewards, &vec![0.0; 51], 1.0, 1.0);
        let mut mc = vec![0.0; 50];
        for t in 0..50 {
            mc[t] = rewards[t..].iter().sum();
        }
        for (a, m) in adv.iter().zip(&mc) {
            assert!((a - m).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_hits_zero_mean_unit_variance() {
        let mut rng = Seeder::new(4).stream("norm");
        let mut adv: Vec<Real> = (0..512).map(|_| (rng.normal() * 3.0 + 1.0) as Real).collect();
        normalize_advantages(&mut adv);
        let mean = adv.iter().sum::<Real>() / adv.len() as Real;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<Real>() / adv.len() as Real;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_advantages_leave_params_unchanged() {
        let cfg = MamlConfig {
            hidden: vec![16],
            ..Default::default()
        };
        let mut rng = Seeder::new(5).stream("init");
        let learner = MamlLearner::new(cfg, &mut rng).unwrap();
        let mut noise = Seeder::new(6).stream("noise");
        let mut env_rng = Seeder::new(6).stream("env");
        let task = enumerate_tasks::<Real>(TaskFamily::Direction)[0].clone();
        let (trajs, _) = learner
            .collect(&learner.store, &task, 2, &mut env_rng, &mut noise)
            .unwrap();
        let zeros: Vec<Vec<Real>> = trajs.iter().map(|t| vec![0.0; t.len()]).collect();
        let (loss, grads) = learner
            .vpg_loss_and_grads(&learner.store, &trajs, &zeros)
            .unwrap();
        assert_eq!(loss, 0.0);
        let adapted = learner.store.stepped(&grads, learner.cfg.inner_lr);
        assert_eq!(adapted, learner.store);
    }

    fn cosine(a: &[Tensor32], b: &[Tensor32]) -> f64 {
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            for (&u, &v) in x.data().iter().zip(y.data()) {
                dot += u as f64 * v as f64;
                na += (u as f64) * (u as f64);
                nb += (v as f64) * (v as f64);
            }
        }
        dot / (na.sqrt() * nb.sqrt()).max(1e-12)
    }

    #[test]
    fn meta_gradients_match_composite_fd_oracle_on_tiny_policy() {
        let cfg = MamlConfig {
            hidden: vec![1],
            episodes_per_task: 2,
            inner_lr: 0.05,
            ..Default::default()
        };
        let mut rng = Seeder::new(9).stream("init");
        let mut learner = MamlLearner::new(cfg, &mut rng).unwrap();
        let task = enumerate_tasks::<Real>(TaskFamily::Direction)[0].clone();
        let mut env_rng = Seeder::new(10).stream("env");
        let mut noise = Seeder::new(10).stream("noise");
        let (pre, _) = learner
            .collect(&learner.store, &task, 2, &mut env_rng, &mut noise)
            .unwrap();
        let adapted = learner
            .inner_adapt(&learner.store, &pre, learner.cfg.inner_lr)
            .unwrap();
        let (post, _) = learner
            .collect(&adapted, &task, 2, &mut env_rng, &mut noise)
            .unwrap();

        let g_first = learner.meta_gradient(&pre, &adapted, &post).unwrap().1;
        learner.cfg.second_order = true;
        let g_second = learner.meta_gradient(&pre, &adapted, &post).unwrap().1;

        // Oracle: central differences of the full composite surrogate
        // theta -> L_post(theta - lr * grad L_pre(theta)), fixed data.
        let adv_pre = learner.advantages(&pre);
        let adv_post = learner.advantages(&post);
        let composite = |store: &ParamStore32| -> f64 {
            let (_, g_pre) = learner.vpg_loss_and_grads(store, &pre, &adv_pre).unwrap();
            let stepped = store.stepped(&g_pre, learner.cfg.inner_lr);
            let (loss, _) = learner.vpg_loss_and_grads(&stepped, &post, &adv_post).unwrap();
            loss as f64
        };
        let h = 2e-3;
        let mut fd: Vec<Tensor32> = learner
            .store
            .iter()
            .map(|(_, t)| Tensor32::zeros(t.shape()))
            .collect();
        for entry in 0..learner.store.len() {
            let len = learner.store.entry(entry).1.numel();
            for j in 0..len {
                let mut plus = learner.store.clone();
                plus.entry_mut(entry).data_mut()[j] += h as Real;
                let mut minus = learner.store.clone();
                minus.entry_mut(entry).data_mut()[j] -= h as Real;
                fd[entry].data_mut()[j] = ((composite(&plus) - composite(&minus)) / (2.0 * h)) as Real;
            }
        }

        let c2 = cosine(&g_second, &fd);
        let c1 = cosine(&g_first, &fd);
        assert!(c2 > 0.95, "second-order vs oracle cosine {c2}");
        assert!(c1 > 0.8, "first-order vs oracle cosine {c1}");
    }

    #[test]
    fn inner_adapt_with_zero_lr_is_identity_and_pure() {
        let cfg = MamlConfig {
            hidden: vec![16],
            ..Default::default()
        };
        let mut rng = Seeder::new(7).stream("init");
        let learner = MamlLearner::new(cfg, &mut rng).unwrap();
        let mut noise = Seeder::new(8).stream("noise");
        let mut env_rng = Seeder::new(8).stream("env");
        let task = enumerate_tasks::<Real>(TaskFamily::Friction)[0].clone();
        let (trajs, _) = learner
            .collect(&learner.store, &task, 2, &mut env_rng, &mut noise)
            .unwrap();
        let before = learner.store.checksum();
        let adapted = learner.inner_adapt(&learner.store, &trajs, 0.0).unwrap();
        assert_eq!(adapted, learner.store);
        // Repeat with a real step: inputs unchanged, output deterministic.
        let a1 = learner.inner_adapt(&learner.store, &trajs, 0.1).unwrap();
        let a2 = learner.inner_adapt(&learner.store, &trajs, 0.1).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, learner.store);
        assert_eq!(learner.store.checksum(), before);
    }
}

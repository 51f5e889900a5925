//! Latent-context meta-learner.
//!
//! A permutation-invariant encoder maps each transition (s, a, r, s') to a
//! diagonal-Gaussian factor; the task posterior is the normalized product of
//! the factors (unit prior when the context is empty). The inner loop is the
//! value-network actor-critic on observations augmented with a sampled z.
//! The Bellman error backpropagates into the encoder; a KL term toward the
//! unit prior regularizes the posterior. At test time the context starts
//! empty, z is drawn once per episode, and the networks are never mutated.

use serde::{Deserialize, Serialize};

use diffcore::graph::{GraphParams, Tape, Var};
use diffcore::rng::{RngStream, Seeder};
use diffcore::scalar::Scalar;
use diffcore::{Activation, Adam, AdamConfig, Mlp, MlpSpec, ParamStore32, Real, Tensor, Tensor32};
use envkit::{Env32, PlanarKitty, RandomizationRanges, TaskSpec, ACTION_DIM, EPISODE_LEN, OBS_DIM};

use crate::checkpoint::Checkpoint;
use crate::error::{AgentError, Result};
use crate::metrics::{LatentRow, MetricsRow};
use crate::policy::SquashedActor;
use crate::replay::{BatchTensors, ReplayBuffer, Transition};
use crate::rollout::{run_episode, EpisodeOutcome};
use crate::sac::SacConfig;

/// Diagonal Gaussian over the latent task variable.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> GaussianDiag<S> {
    pub fn unit(dim: usize) -> Self {
        GaussianDiag {
            mean: vec![S::zero(); dim],
            var: vec![S::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<S> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| m + v.sqrt() * S::c(rng.normal()))
            .collect()
    }
}

/// Precision-weighted fusion of independent Gaussian factors. An empty list
/// yields the unit prior — the defined posterior for an empty context.
pub fn product_of_gaussians<S: Scalar>(factors: &[GaussianDiag<S>], dim: usize) -> GaussianDiag<S> {
    if factors.is_empty() {
        return GaussianDiag::unit(dim);
    }
    let mut precision = vec![S::zero(); dim];
    let mut weighted_mean = vec![S::zero(); dim];
    for f in factors {
        debug_assert_eq!(f.dim(), dim);
        for d in 0..dim {
            let p = S::one() / f.var[d];
            precision[d] += p;
            weighted_mean[d] += f.mean[d] * p;
        }
    }
    let var: Vec<S> = precision.iter().map(|&p| S::one() / p).collect();
    let mean: Vec<S> = weighted_mean
        .iter()
        .zip(&var)
        .map(|(&wm, &v)| wm * v)
        .collect();
    GaussianDiag { mean, var }
}

/// KL(q || N(0, I)) = 0.5 sum(mu^2 + var - ln var - 1).
pub fn kl_to_unit_prior<S: Scalar>(q: &GaussianDiag<S>) -> S {
    let mut acc = S::zero();
    for (&m, &v) in q.mean.iter().zip(&q.var) {
        acc += S::c(0.5) * (m * m + v - v.ln() - S::one());
    }
    acc
}

/// Width of the encoder input: (s, a, r, s').
pub const CONTEXT_DIM: usize = OBS_DIM + ACTION_DIM + 1 + OBS_DIM;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PearlConfig {
    pub latent_dim: usize,
    pub kl_weight: Real,
    /// Tasks per training step (all tasks when the family is smaller).
    pub meta_batch: usize,
    /// Transitions per sampled context batch.
    pub context_size: usize,
    /// Contexts are sampled from this many most-recent transitions.
    pub context_window: usize,
    pub encoder_hidden: Vec<usize>,
    pub net_hidden: Vec<usize>,
    /// Reward multiplier inside Bellman targets.
    pub reward_scale: Real,
    /// Fixed feature scaling of the reward entry in encoder inputs.
    pub encoder_reward_scale: Real,
    /// Floor added to the softplus variance head.
    pub var_floor: Real,
    pub sac: SacConfig,
    /// Episodes collected per task with z ~ prior before training starts.
    pub warmup_episodes: usize,
    /// Gradient steps per collection round.
    pub train_steps_per_round: usize,
    /// Meta-test probe cadence, in environment steps.
    pub eval_every: u64,
    pub replay_capacity: usize,
}

impl Default for PearlConfig {
    fn default() -> Self {
        PearlConfig {
            latent_dim: 5,
            kl_weight: 0.1,
            meta_batch: 4,
            context_size: 100,
            context_window: 1600,
            encoder_hidden: vec![200, 200, 200],
            net_hidden: vec![300, 300, 300],
            reward_scale: 5.0,
            encoder_reward_scale: 0.05,
            var_floor: 1e-6,
            sac: SacConfig::default(),
            warmup_episodes: 2,
            train_steps_per_round: 2,
            eval_every: 20_000,
            replay_capacity: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PearlLosses {
    pub critic_bellman: Real,
    pub value: Real,
    pub actor: Real,
    pub kl: Real,
    pub skipped_tasks: usize,
}

/// Context batch plus RL batch for one task.
pub struct TaskBatch {
    pub context: Tensor32,
    pub rl: BatchTensors,
}

pub struct PearlLearner {
    pub cfg: PearlConfig,
    encoder: Mlp,
    pub encoder_store: ParamStore32,
    pub actor: SquashedActor,
    pub actor_store: ParamStore32,
    critic: Mlp,
    pub q1: ParamStore32,
    pub q2: ParamStore32,
    value: Mlp,
    pub value_store: ParamStore32,
    pub value_target: ParamStore32,
    pub log_alpha: ParamStore32,
    adam_encoder: Adam<Real>,
    adam_actor: Adam<Real>,
    adam_q1: Adam<Real>,
    adam_q2: Adam<Real>,
    adam_value: Adam<Real>,
    adam_alpha: Adam<Real>,
    updates: u64,
}

impl PearlLearner {
    pub fn new(cfg: PearlConfig, init_rng: &mut RngStream) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(AgentError::InvalidConfig("latent_dim must be positive".into()));
        }
        cfg.sac.validate()?;
        let z = cfg.latent_dim;

        let encoder_spec = MlpSpec::new(CONTEXT_DIM, &cfg.encoder_hidden, 2 * z, Activation::Relu);
        let encoder = Mlp::new("encoder", encoder_spec)?;
        let mut encoder_store = ParamStore32::new();
        encoder.init(&mut encoder_store, init_rng);

        let actor = SquashedActor::new("actor", OBS_DIM + z, &cfg.net_hidden, ACTION_DIM)?;
        let mut actor_store = ParamStore32::new();
        actor.init(&mut actor_store, init_rng);

        let critic_spec = MlpSpec::new(OBS_DIM + ACTION_DIM + z, &cfg.net_hidden, 1, Activation::Relu);
        let critic = Mlp::new("q", critic_spec)?;
        let mut q1 = ParamStore32::new();
        critic.init(&mut q1, init_rng);
        let mut q2 = ParamStore32::new();
        critic.init(&mut q2, init_rng);

        let value_spec = MlpSpec::new(OBS_DIM + z, &cfg.net_hidden, 1, Activation::Relu);
        let value = Mlp::new("v", value_spec)?;
        let mut value_store = ParamStore32::new();
        value.init(&mut value_store, init_rng);
        let value_target = value_store.clone();

        let mut log_alpha = ParamStore32::new();
        log_alpha.insert(
            "log_alpha",
            Tensor32::scalar(cfg.sac.init_alpha.max(1e-30).ln()),
        );

        let adam = AdamConfig::with_lr(cfg.sac.lr);
        Ok(PearlLearner {
            adam_encoder: Adam::new(adam, &encoder_store),
            adam_actor: Adam::new(adam, &actor_store),
            adam_q1: Adam::new(adam, &q1),
            adam_q2: Adam::new(adam, &q2),
            adam_value: Adam::new(adam, &value_store),
            adam_alpha: Adam::new(adam, &log_alpha),
            encoder,
            encoder_store,
            actor,
            actor_store,
            critic,
            q1,
            q2,
            value,
            value_store,
            value_target,
            log_alpha,
            cfg,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> Real {
        if self.cfg.sac.auto_alpha {
            self.log_alpha.get("log_alpha").unwrap().item().exp()
        } else {
            self.cfg.sac.init_alpha
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Flatten one transition into the encoder input layout.
    pub fn context_vector(&self, t: &Transition) -> [Real; CONTEXT_DIM] {
        let mut c = [0.0; CONTEXT_DIM];
        c[..OBS_DIM].copy_from_slice(&t.obs);
        c[OBS_DIM..OBS_DIM + ACTION_DIM].copy_from_slice(&t.action);
        c[OBS_DIM + ACTION_DIM] = t.reward * self.cfg.encoder_reward_scale;
        c[OBS_DIM + ACTION_DIM + 1..].copy_from_slice(&t.next_obs);
        c
    }

    /// Encode one transition into its Gaussian factor (no graph).
    pub fn encode_transition(&self, c: &[Real]) -> Result<GaussianDiag<Real>> {
        if c.len() != CONTEXT_DIM {
            return Err(AgentError::InvalidConfig(format!(
                "context vector must have width {CONTEXT_DIM}, got {}",
                c.len()
            )));
        }
        let out = self.encoder.infer_vec(&self.encoder_store, c)?;
        let z = self.cfg.latent_dim;
        let mean = out[..z].to_vec();
        let var = out[z..]
            .iter()
            .map(|&raw| softplus(raw) + self.cfg.var_floor)
            .collect();
        Ok(GaussianDiag { mean, var })
    }

    /// Posterior over z given a set of context transitions (unit prior when
    /// empty).
    pub fn infer_posterior(&self, context: &[Transition]) -> Result<GaussianDiag<Real>> {
        if context.is_empty() {
            return Ok(GaussianDiag::unit(self.cfg.latent_dim));
        }
        let n = context.len();
        let mut data = Vec::with_capacity(n * CONTEXT_DIM);
        for t in context {
            data.extend_from_slice(&self.context_vector(t));
        }
        let x = Tensor32::from_vec(&[n, CONTEXT_DIM], data).unwrap();
        let out = self.encoder.infer_batch(&self.encoder_store, &x)?;
        let z = self.cfg.latent_dim;
        let factors: Vec<GaussianDiag<Real>> = (0..n)
            .map(|r| {
                let row = out.row(r);
                GaussianDiag {
                    mean: row[..z].to_vec(),
                    var: row[z..]
                        .iter()
                        .map(|&raw| softplus(raw) + self.cfg.var_floor)
                        .collect(),
                }
            })
            .collect();
        Ok(product_of_gaussians(&factors, z))
    }

    /// Observation augmented with z for the policy/value inputs.
    fn augment(obs: &[Real], z: &[Real]) -> Vec<Real> {
        let mut v = Vec::with_capacity(obs.len() + z.len());
        v.extend_from_slice(obs);
        v.extend_from_slice(z);
        v
    }

    fn augment_batch(obs: &Tensor32, z: &[Real]) -> Tensor32 {
        let b = obs.rows();
        let mut data = Vec::with_capacity(b * (obs.cols() + z.len()));
        for r in 0..b {
            data.extend_from_slice(obs.row(r));
            data.extend_from_slice(z);
        }
        Tensor32::from_vec(&[b, obs.cols() + z.len()], data).unwrap()
    }

    pub fn act_stochastic(
        &self,
        obs: &[Real],
        z: &[Real],
        rng: &mut RngStream,
    ) -> Result<[Real; ACTION_DIM]> {
        Ok(self
            .actor
            .act_stochastic(&self.actor_store, &Self::augment(obs, z), rng)?
            .0)
    }

    /// Recorded posterior from a context batch; returns (mean, var) nodes of
    /// shape [latent_dim].
    fn posterior_on_tape<'t>(
        &self,
        bind_enc: &GraphParams<'t, Real>,
        ctx: Var<'t, Real>,
    ) -> Result<(Var<'t, Real>, Var<'t, Real>)> {
        let z = self.cfg.latent_dim;
        let out = self.encoder.forward(bind_enc, ctx)?;
        let mean_f = out.slice_cols(0, z);
        let var_f = out
            .slice_cols(z, 2 * z)
            .softplus()
            .add_scalar(self.cfg.var_floor as f64);
        let precision = var_f.recip_();
        let sum_precision = precision.sum_axis0();
        let post_var = sum_precision.recip_();
        let weighted = mean_f.mul(precision).sum_axis0();
        let post_mean = post_var.mul(weighted);
        Ok((post_mean, post_var))
    }

    /// One gradient step over a meta-batch of task batches. Gradients are
    /// averaged across tasks; each optimizer steps once.
    pub fn train_step(&mut self, batches: &[TaskBatch], rng: &mut RngStream) -> Result<PearlLosses> {
        let tasks: Vec<&TaskBatch> = batches
            .iter()
            .filter(|tb| tb.context.rows() > 0 && !tb.rl.is_empty())
            .collect();
        let skipped_tasks = batches.len() - tasks.len();
        if tasks.is_empty() {
            return Err(AgentError::UpdateAborted(
                "no task had enough context for a training step".into(),
            ));
        }
        let n_tasks = tasks.len() as Real;
        let alpha = self.alpha();
        let zdim = self.cfg.latent_dim;

        let mut g_encoder = zero_grads(&self.encoder_store);
        let mut g_q1 = zero_grads(&self.q1);
        let mut g_q2 = zero_grads(&self.q2);
        let mut g_actor = zero_grads(&self.actor_store);
        let mut g_value = zero_grads(&self.value_store);
        let mut g_alpha = zero_grads(&self.log_alpha);

        let mut loss_bellman = 0.0;
        let mut loss_kl = 0.0;
        let mut loss_actor = 0.0;
        let mut loss_value = 0.0;

        for tb in &tasks {
            let b = tb.rl.len();

            // --- Critic + encoder tape -----------------------------------
            let znoise: Vec<Real> = {
                let mut n = vec![0.0; zdim];
                rng.fill_normal_f32(&mut n);
                n
            };
            let (z_val, bellman_item, kl_item) = {
                let tape: Tape<Real> = Tape::new();
                let bind_enc = GraphParams::bind(&tape, &self.encoder_store);
                let bind_q1 = GraphParams::bind(&tape, &self.q1);
                let bind_q2 = GraphParams::bind(&tape, &self.q2);
                let ctx = tape.constant(tb.context.clone());
                let (post_mean, post_var) = self.posterior_on_tape(&bind_enc, ctx)?;
                let noise_v = tape.constant(Tensor::from_vec(&[zdim], znoise.clone()).unwrap());
                let z = post_mean.add(post_var.sqrt_().mul(noise_v));
                let z_val = z.value().into_data();

                // Bellman targets through the target value network, z fixed.
                let next_aug = Self::augment_batch(&tb.rl.next_obs, &z_val);
                let v_next = self.value.infer_batch(&self.value_target, &next_aug)?;
                let targets: Vec<Real> = (0..b)
                    .map(|i| {
                        self.cfg.reward_scale * tb.rl.reward[i]
                            + self.cfg.sac.gamma * v_next.data()[i]
                    })
                    .collect();

                let s = tape.constant(tb.rl.obs.clone());
                let a = tape.constant(tb.rl.action.clone());
                let zb = z.broadcast_row(b);
                let qx = tape.concat_cols(&[s, a, zb]);
                let p1 = self.critic.forward(&bind_q1, qx)?;
                let p2 = self.critic.forward(&bind_q2, qx)?;
                let y = tape.constant(Tensor32::from_vec(&[b, 1], targets).unwrap());
                let bellman = p1.sub(y).square().mean_all().add(p2.sub(y).square().mean_all());

                let kl = post_mean
                    .square()
                    .add(post_var)
                    .sub(post_var.ln_())
                    .add_scalar(-1.0)
                    .sum_all()
                    .mul_scalar(0.5);
                let loss = bellman.add(kl.mul_scalar(self.cfg.kl_weight as f64));

                let bellman_item = bellman.item();
                let kl_item = kl.item();
                let mut grads = tape.backward(loss)?;
                accumulate(&mut g_encoder, bind_enc.collect(&mut grads, &self.encoder_store));
                accumulate(&mut g_q1, bind_q1.collect(&mut grads, &self.q1));
                accumulate(&mut g_q2, bind_q2.collect(&mut grads, &self.q2));
                (z_val, bellman_item, kl_item)
            };
            loss_bellman += bellman_item;
            loss_kl += kl_item;

            // --- Actor tape (z detached) ----------------------------------
            let aug_obs = Self::augment_batch(&tb.rl.obs, &z_val);
            let mut noise = vec![0.0; b * ACTION_DIM];
            rng.fill_normal_f32(&mut noise);
            let noise_t = Tensor32::from_vec(&[b, ACTION_DIM], noise).unwrap();
            let (qmin_vals, logp_vals, actor_item) = {
                let tape: Tape<Real> = Tape::new();
                let bind_a = GraphParams::bind(&tape, &self.actor_store);
                let bind_q1 = GraphParams::bind_frozen(&tape, &self.q1);
                let bind_q2 = GraphParams::bind_frozen(&tape, &self.q2);
                let sz = tape.constant(aug_obs.clone());
                let (a_new, logp) = self.actor.sample_on_tape(&tape, &bind_a, sz, &noise_t)?;
                let s = tape.constant(tb.rl.obs.clone());
                let mut zb_data = Vec::with_capacity(b * zdim);
                for _ in 0..b {
                    zb_data.extend_from_slice(&z_val);
                }
                let zb = tape.constant(Tensor32::from_vec(&[b, zdim], zb_data).unwrap());
                let qx = tape.concat_cols(&[s, a_new, zb]);
                let qa1 = self.critic.forward(&bind_q1, qx)?;
                let qa2 = self.critic.forward(&bind_q2, qx)?;
                let qmin = qa1.min_elem(qa2);
                let loss = logp.mul_scalar(alpha as f64).sub(qmin).mean_all();
                let actor_item = loss.item();
                let qmin_vals = qmin.value().into_data();
                let logp_vals = logp.value().into_data();
                let mut grads = tape.backward(loss)?;
                accumulate(&mut g_actor, bind_a.collect(&mut grads, &self.actor_store));
                (qmin_vals, logp_vals, actor_item)
            };
            loss_actor += actor_item;

            // --- Value tape ------------------------------------------------
            let value_item = {
                let tape: Tape<Real> = Tape::new();
                let bind_v = GraphParams::bind(&tape, &self.value_store);
                let sz = tape.constant(aug_obs.clone());
                let pred = self.value.forward(&bind_v, sz)?;
                let y: Vec<Real> = (0..b)
                    .map(|i| qmin_vals[i] - alpha * logp_vals[i])
                    .collect();
                let yt = tape.constant(Tensor32::from_vec(&[b, 1], y).unwrap());
                let loss = pred.sub(yt).square().mean_all();
                let item = loss.item();
                let mut grads = tape.backward(loss)?;
                accumulate(&mut g_value, bind_v.collect(&mut grads, &self.value_store));
                item
            };
            loss_value += value_item;

            // --- Temperature ----------------------------------------------
            if self.cfg.sac.auto_alpha {
                let mean_logp = logp_vals.iter().sum::<Real>() / b as Real;
                g_alpha[0].data_mut()[0] += -(mean_logp + self.cfg.sac.target_entropy);
            }
        }

        scale_grads(&mut g_encoder, 1.0 / n_tasks);
        scale_grads(&mut g_q1, 1.0 / n_tasks);
        scale_grads(&mut g_q2, 1.0 / n_tasks);
        scale_grads(&mut g_actor, 1.0 / n_tasks);
        scale_grads(&mut g_value, 1.0 / n_tasks);
        scale_grads(&mut g_alpha, 1.0 / n_tasks);

        self.adam_encoder.step(&mut self.encoder_store, &g_encoder)?;
        self.adam_q1.step(&mut self.q1, &g_q1)?;
        self.adam_q2.step(&mut self.q2, &g_q2)?;
        self.adam_actor.step(&mut self.actor_store, &g_actor)?;
        self.adam_value.step(&mut self.value_store, &g_value)?;
        if self.cfg.sac.auto_alpha {
            self.adam_alpha.step(&mut self.log_alpha, &g_alpha)?;
        }
        self.value_target
            .lerp_from(&self.value_store, self.cfg.sac.tau_target);
        self.updates += 1;

        Ok(PearlLosses {
            critic_bellman: loss_bellman / n_tasks,
            value: loss_value / n_tasks,
            actor: loss_actor / n_tasks,
            kl: loss_kl / n_tasks,
            skipped_tasks,
        })
    }

    /// Meta-test protocol: empty context, z resampled from the posterior at
    /// each episode start, episodes appended to the context. Never mutates
    /// the networks. Returns per-episode outcomes and the latent trace
    /// (trial field left 0 for the caller to fill).
    pub fn meta_test(
        &self,
        task: &TaskSpec<Real>,
        episodes: usize,
        seeder: &Seeder,
        trial_tag: u64,
    ) -> Result<(Vec<EpisodeOutcome>, Vec<LatentRow>)> {
        let mut env: Env32 = PlanarKitty::new(task.clone(), RandomizationRanges::default());
        let mut env_rng = seeder.stream_indexed("meta_test_env", trial_tag);
        let mut z_rng = seeder.stream_indexed("meta_test_z", trial_tag);
        let mut noise_rng = seeder.stream_indexed("meta_test_noise", trial_tag);
        let mut context: Vec<Transition> = Vec::new();
        let mut outcomes = Vec::with_capacity(episodes);
        let mut latents = Vec::with_capacity(episodes);

        for ep in 1..=episodes {
            let posterior = self.infer_posterior(&context)?;
            let z = posterior.sample(&mut z_rng);
            let (outcome, transitions, _) = run_episode(
                &mut env,
                &mut env_rng,
                |obs| {
                    self.act_stochastic(obs.as_slice(), &z, &mut noise_rng)
                        .unwrap_or([0.0; ACTION_DIM])
                },
                false,
            )?;
            latents.push(LatentRow {
                trial: trial_tag as u32,
                episode: ep as u32,
                z: fixed5(&z),
                posterior_mean: fixed5(&posterior.mean),
                posterior_var: fixed5(&posterior.var),
            });
            context.extend(transitions);
            outcomes.push(outcome);
        }
        Ok((outcomes, latents))
    }

    pub fn to_checkpoint(&self, step_count: u64, config: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new("pearl", step_count, config);
        ck.add_store("encoder", self.encoder_store.clone());
        ck.add_store("actor", self.actor_store.clone());
        ck.add_store("q1", self.q1.clone());
        ck.add_store("q2", self.q2.clone());
        ck.add_store("value", self.value_store.clone());
        ck.add_store("value_target", self.value_target.clone());
        ck.add_store("log_alpha", self.log_alpha.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: PearlConfig) -> Result<Self> {
        let mut rng = Seeder::new(0).stream("ckpt_rebuild");
        let mut learner = Self::new(cfg, &mut rng)?;
        learner.encoder_store = ck.store("encoder")?.clone();
        learner.actor_store = ck.store("actor")?.clone();
        learner.q1 = ck.store("q1")?.clone();
        learner.q2 = ck.store("q2")?.clone();
        learner.value_store = ck.store("value")?.clone();
        learner.value_target = ck.store("value_target")?.clone();
        learner.log_alpha = ck.store("log_alpha")?.clone();
        Ok(learner)
    }
}

fn softplus(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn fixed5(v: &[Real]) -> [Real; 5] {
    let mut out = [0.0; 5];
    for (o, &x) in out.iter_mut().zip(v) {
        *o = x;
    }
    out
}

fn zero_grads(store: &ParamStore32) -> Vec<Tensor32> {
    store.iter().map(|(_, t)| Tensor32::zeros(t.shape())).collect()
}

fn accumulate(acc: &mut [Tensor32], grads: Vec<Tensor32>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.add_scaled(&g, 1.0);
    }
}

fn scale_grads(grads: &mut [Tensor32], s: Real) {
    for g in grads {
        for v in g.data_mut() {
            *v *= s;
        }
    }
}

/// Meta-training driver: rotate collection over the family's tasks, then run
/// gradient steps on the freshest meta-batch. Budget counts environment
/// steps.
pub fn meta_train(
    family: envkit::TaskFamily,
    cfg: PearlConfig,
    budget_steps: u64,
    seeder: &Seeder,
) -> Result<(PearlLearner, Vec<MetricsRow>, u64)> {
    let tasks = envkit::enumerate_tasks::<Real>(family);
    let n_tasks = tasks.len();
    let mut init_rng = seeder.stream("init");
    let mut learner = PearlLearner::new(cfg.clone(), &mut init_rng)?;

    let mut buffers: Vec<ReplayBuffer> = (0..n_tasks)
        .map(|_| ReplayBuffer::new(cfg.replay_capacity))
        .collect();
    let mut env_rng = seeder.stream("env");
    let mut z_rng = seeder.stream("z_sampling");
    let mut noise_rng = seeder.stream("policy_noise");
    let mut ctx_rng = seeder.stream("context_sampling");
    let mut update_rng = seeder.stream("update_noise");

    let mut steps: u64 = 0;
    let mut metrics = Vec::new();
    let mut probe = 0u64;
    let mut next_eval = cfg.eval_every;

    let collect_episode = |learner: &PearlLearner,
                               task_idx: usize,
                               use_prior: bool,
                               buffers: &mut [ReplayBuffer],
                               env_rng: &mut RngStream,
                               z_rng: &mut RngStream,
                               noise_rng: &mut RngStream,
                               ctx_rng: &mut RngStream|
     -> Result<()> {
        let posterior = if use_prior || buffers[task_idx].is_empty() {
            GaussianDiag::unit(learner.cfg.latent_dim)
        } else {
            let n = learner.cfg.context_size.min(buffers[task_idx].len());
            let idx = buffers[task_idx].sample_recent_indices(n, learner.cfg.context_window, ctx_rng);
            let ctx: Vec<Transition> = idx.iter().map(|&i| buffers[task_idx].get(i).clone()).collect();
            learner.infer_posterior(&ctx)?
        };
        let z = posterior.sample(z_rng);
        let mut env: Env32 = PlanarKitty::new(tasks[task_idx].clone(), RandomizationRanges::default());
        let (_, transitions, _) = run_episode(
            &mut env,
            env_rng,
            |obs| {
                learner
                    .act_stochastic(obs.as_slice(), &z, noise_rng)
                    .unwrap_or([0.0; ACTION_DIM])
            },
            false,
        )?;
        for t in transitions {
            buffers[task_idx].push(t);
        }
        Ok(())
    };

    // Warmup with the prior.
    for task_idx in 0..n_tasks {
        for _ in 0..cfg.warmup_episodes {
            collect_episode(
                &learner, task_idx, true, &mut buffers, &mut env_rng, &mut z_rng, &mut noise_rng,
                &mut ctx_rng,
            )?;
            steps += u64::from(EPISODE_LEN);
        }
    }

    let batch_tasks = cfg.meta_batch.min(n_tasks);
    let mut rotation = 0usize;
    while steps < budget_steps {
        // Collect one posterior-conditioned episode for the next batch of
        // tasks in rotation.
        let selected: Vec<usize> = (0..batch_tasks)
            .map(|k| (rotation + k) % n_tasks)
            .collect();
        rotation = (rotation + batch_tasks) % n_tasks;
        for &task_idx in &selected {
            collect_episode(
                &learner, task_idx, false, &mut buffers, &mut env_rng, &mut z_rng, &mut noise_rng,
                &mut ctx_rng,
            )?;
            steps += u64::from(EPISODE_LEN);
        }

        for _ in 0..cfg.train_steps_per_round {
            let mut batches = Vec::with_capacity(selected.len());
            for &task_idx in &selected {
                let buf = &buffers[task_idx];
                if buf.len() < cfg.context_size || buf.len() < cfg.sac.batch {
                    continue;
                }
                let ctx_idx = buf.sample_recent_indices(cfg.context_size, cfg.context_window, &mut ctx_rng);
                let mut ctx_data = Vec::with_capacity(cfg.context_size * CONTEXT_DIM);
                for &i in &ctx_idx {
                    ctx_data.extend_from_slice(&learner.context_vector(buf.get(i)));
                }
                let context =
                    Tensor32::from_vec(&[ctx_idx.len(), CONTEXT_DIM], ctx_data).unwrap();
                let rl_idx = buf.sample_indices(cfg.sac.batch, &mut update_rng);
                batches.push(TaskBatch {
                    context,
                    rl: buf.gather(&rl_idx),
                });
            }
            if !batches.is_empty() {
                learner.train_step(&batches, &mut update_rng)?;
            }
        }

        if steps >= next_eval {
            // Probe: short meta-test on a rotating task; summary over
            // episodes 4..10 to match the reporting convention.
            let task = &tasks[(probe as usize) % n_tasks];
            let (outcomes, _) = learner.meta_test(task, 10, seeder, 1_000_000 + probe)?;
            let tail = &outcomes[3..];
            let (mean_return, success_rate, end_dist) = crate::rollout::summarize(tail);
            metrics.push(MetricsRow {
                step: steps,
                mean_return,
                success_rate,
                end_dist,
            });
            probe += 1;
            next_eval += cfg.eval_every;
        }
    }

    Ok((learner, metrics, steps))
}

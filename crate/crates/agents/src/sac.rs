//! Twin-critic entropy-regularized actor-critic (standalone variant with
//! target critics and no value network).

use serde::{Deserialize, Serialize};

use diffcore::graph::{GraphParams, Tape};
use diffcore::rng::RngStream;
use diffcore::{Activation, Adam, AdamConfig, Mlp, MlpSpec, ParamStore32, Real, Tensor32};

use crate::error::{AgentError, Result};
use crate::policy::SquashedActor;
use crate::replay::BatchTensors;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: Real,
    pub tau_target: Real,
    pub lr: f64,
    pub batch: usize,
    /// Learn the temperature in log space toward this policy entropy.
    pub auto_alpha: bool,
    pub target_entropy: Real,
    pub init_alpha: Real,
    pub hidden: Vec<usize>,
    /// Reward multiplier inside the Bellman targets only; reported metrics
    /// stay in raw units.
    pub reward_scale: Real,
    /// Environment steps per gradient update during training.
    pub update_every: usize,
    /// Uniform-random warmup steps before the policy drives collection.
    pub learning_starts: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau_target: 0.005,
            lr: 3e-4,
            batch: 256,
            auto_alpha: true,
            target_entropy: -12.0,
            init_alpha: 1.0,
            hidden: vec![256, 256, 256],
            reward_scale: 1.0,
            update_every: 2,
            learning_starts: 1000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(AgentError::InvalidConfig("gamma must be in (0, 1]".into()));
        }
        if !(self.tau_target > 0.0 && self.tau_target <= 1.0) {
            return Err(AgentError::InvalidConfig("tau must be in (0, 1]".into()));
        }
        if self.batch == 0 || self.update_every == 0 {
            return Err(AgentError::InvalidConfig("batch and update_every must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values of one update.
#[derive(Clone, Copy, Debug)]
pub struct SacLosses {
    pub critic: Real,
    /// Value-network loss where the variant has one; otherwise unused.
    pub value: Option<Real>,
    pub actor: Real,
    pub temperature: Real,
}

pub struct SacLearner {
    pub cfg: SacConfig,
    pub actor: SquashedActor,
    pub actor_store: ParamStore32,
    critic: Mlp,
    pub q1: ParamStore32,
    pub q2: ParamStore32,
    pub q1_target: ParamStore32,
    pub q2_target: ParamStore32,
    pub log_alpha: ParamStore32,
    adam_actor: Adam<Real>,
    adam_q1: Adam<Real>,
    adam_q2: Adam<Real>,
    adam_alpha: Adam<Real>,
    obs_dim: usize,
    act_dim: usize,
    updates: u64,
}

impl SacLearner {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: SacConfig, init_rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let actor = SquashedActor::new("actor", obs_dim, &cfg.hidden, act_dim)?;
        let mut actor_store = ParamStore32::new();
        actor.init(&mut actor_store, init_rng);

        let q_spec = MlpSpec::new(obs_dim + act_dim, &cfg.hidden, 1, Activation::Relu);
        let critic = Mlp::new("q", q_spec)?;
        let mut q1 = ParamStore32::new();
        critic.init(&mut q1, init_rng);
        let mut q2 = ParamStore32::new();
        critic.init(&mut q2, init_rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();

        let mut log_alpha = ParamStore32::new();
        log_alpha.insert(
            "log_alpha",
            Tensor32::scalar(cfg.init_alpha.max(1e-30).ln()),
        );

        let adam = AdamConfig::with_lr(cfg.lr);
        Ok(SacLearner {
            adam_actor: Adam::new(adam, &actor_store),
            adam_q1: Adam::new(adam, &q1),
            adam_q2: Adam::new(adam, &q2),
            adam_alpha: Adam::new(adam, &log_alpha),
            actor,
            actor_store,
            critic,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha,
            cfg,
            obs_dim,
            act_dim,
            updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn alpha(&self) -> Real {
        if self.cfg.auto_alpha {
            self.log_alpha.get("log_alpha").unwrap().item().exp()
        } else {
            self.cfg.init_alpha
        }
    }

    fn input_with_action(obs: &Tensor32, action: &Tensor32) -> Tensor32 {
        let b = obs.rows();
        let total = obs.cols() + action.cols();
        let mut data = Vec::with_capacity(b * total);
        for r in 0..b {
            data.extend_from_slice(obs.row(r));
            data.extend_from_slice(action.row(r));
        }
        Tensor32::from_vec(&[b, total], data).unwrap()
    }

    /// Q-value under the first online critic for a single (obs, action).
    pub fn q_value(&self, obs: &[Real], action: &[Real]) -> Result<Real> {
        let mut input = obs.to_vec();
        input.extend_from_slice(action);
        Ok(self.critic.infer_vec(&self.q1, &input)?[0])
    }

    /// One gradient update on a sampled batch.
    pub fn update(&mut self, batch: &BatchTensors, noise_rng: &mut RngStream) -> Result<SacLosses> {
        let b = batch.len();
        let alpha = self.alpha();

        // Bellman targets from the target critics and a fresh policy sample.
        let (next_actions, next_logp) =
            self.actor
                .sample_batch(&self.actor_store, &batch.next_obs, noise_rng)?;
        let next_in = Self::input_with_action(&batch.next_obs, &next_actions);
        let q1t = self.critic.infer_batch(&self.q1_target, &next_in)?;
        let q2t = self.critic.infer_batch(&self.q2_target, &next_in)?;
        let mut targets = Vec::with_capacity(b);
        for i in 0..b {
            let q_min = q1t.data()[i].min(q2t.data()[i]);
            // Fixed-horizon truncation, not true termination: bootstrap through.
            targets.push(
                self.cfg.reward_scale * batch.reward[i]
                    + self.cfg.gamma * (q_min - alpha * next_logp[i]),
            );
        }

        // Critic regression.
        let critic_loss = {
            let tape: Tape<Real> = Tape::new();
            let bind1 = GraphParams::bind(&tape, &self.q1);
            let bind2 = GraphParams::bind(&tape, &self.q2);
            let x = tape.constant(Self::input_with_action(&batch.obs, &batch.action));
            let y = tape.constant(Tensor32::from_vec(&[b, 1], targets).unwrap());
            let p1 = self.critic.forward(&bind1, x)?;
            let p2 = self.critic.forward(&bind2, x)?;
            let loss = p1.sub(y).square().mean_all().add(p2.sub(y).square().mean_all());
            let value = loss.item();
            let mut grads = tape.backward(loss)?;
            let g1 = bind1.collect(&mut grads, &self.q1);
            let g2 = bind2.collect(&mut grads, &self.q2);
            self.adam_q1.step(&mut self.q1, &g1)?;
            self.adam_q2.step(&mut self.q2, &g2)?;
            value
        };

        // Actor: maximize min-Q of a reparameterized action plus entropy.
        let mut noise = vec![0.0; b * self.act_dim];
        noise_rng.fill_normal_f32(&mut noise);
        let noise_t = Tensor32::from_vec(&[b, self.act_dim], noise).unwrap();
        let (actor_loss, mean_logp) = {
            let tape: Tape<Real> = Tape::new();
            let bind_a = GraphParams::bind(&tape, &self.actor_store);
            let bind_q1 = GraphParams::bind_frozen(&tape, &self.q1);
            let bind_q2 = GraphParams::bind_frozen(&tape, &self.q2);
            let s = tape.constant(batch.obs.clone());
            let (a_new, logp) = self.actor.sample_on_tape(&tape, &bind_a, s, &noise_t)?;
            let qx = tape.concat_cols(&[s, a_new]);
            let qa1 = self.critic.forward(&bind_q1, qx)?;
            let qa2 = self.critic.forward(&bind_q2, qx)?;
            let q_min = qa1.min_elem(qa2);
            let loss = logp.mul_scalar(alpha as f64).sub(q_min).mean_all();
            let value = loss.item();
            let mean_logp = logp.value().data().iter().sum::<Real>() / b as Real;
            let mut grads = tape.backward(loss)?;
            let ga = bind_a.collect(&mut grads, &self.actor_store);
            self.adam_actor.step(&mut self.actor_store, &ga)?;
            (value, mean_logp)
        };

        // Temperature toward the target entropy.
        let temperature_loss = if self.cfg.auto_alpha {
            let tape: Tape<Real> = Tape::new();
            let bind = GraphParams::bind(&tape, &self.log_alpha);
            let la = bind.var("log_alpha")?;
            let coeff = -(mean_logp + self.cfg.target_entropy);
            let loss = la.mul_scalar(coeff as f64).sum_all();
            let value = loss.item();
            let mut grads = tape.backward(loss)?;
            let g = bind.collect(&mut grads, &self.log_alpha);
            self.adam_alpha.step(&mut self.log_alpha, &g)?;
            value
        } else {
            0.0
        };

        self.q1_target.lerp_from(&self.q1, self.cfg.tau_target);
        self.q2_target.lerp_from(&self.q2, self.cfg.tau_target);
        self.updates += 1;

        Ok(SacLosses {
            critic: critic_loss,
            value: None,
            actor: actor_loss,
            temperature: temperature_loss,
        })
    }
}

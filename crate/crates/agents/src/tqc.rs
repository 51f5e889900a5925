//! Truncated-quantile-critics variant: each critic predicts a set of return
//! quantiles; targets pool every critic's atoms, drop the largest few, and
//! average the rest to fight overestimation.

use serde::{Deserialize, Serialize};

use diffcore::graph::{GraphParams, Tape, Var};
use diffcore::rng::RngStream;
use diffcore::{Activation, Adam, AdamConfig, Mlp, MlpSpec, ParamStore32, Real, Tensor32};

use crate::error::{AgentError, Result};
use crate::policy::SquashedActor;
use crate::replay::BatchTensors;
use crate::sac::{SacConfig, SacLosses};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TqcConfig {
    pub n_critics: usize,
    pub n_quantiles: usize,
    /// Atoms dropped from the top of the pooled target distribution,
    /// per critic network.
    pub drop_per_net: usize,
    pub huber_kappa: f64,
    #[serde(flatten)]
    pub sac: SacConfig,
}

impl Default for TqcConfig {
    fn default() -> Self {
        TqcConfig {
            n_critics: 2,
            n_quantiles: 25,
            drop_per_net: 2,
            huber_kappa: 1.0,
            sac: SacConfig::default(),
        }
    }
}

impl TqcConfig {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if self.n_critics == 0 || self.n_quantiles == 0 {
            return Err(AgentError::InvalidConfig("need at least one critic and quantile".into()));
        }
        let total = self.n_critics * self.n_quantiles;
        if self.drop_per_net * self.n_critics >= total {
            return Err(AgentError::InvalidConfig(format!(
                "truncation would drop all {total} atoms"
            )));
        }
        Ok(())
    }
}

/// Quantile fractions at midpoints (2i - 1) / 2M.
pub fn quantile_midpoints(m: usize) -> Vec<Real> {
    (1..=m)
        .map(|i| (2 * i - 1) as Real / (2 * m) as Real)
        .collect()
}

/// Pool all atoms, sort ascending, drop the largest `drop_per_net * n_critics`.
/// Returns the kept atoms in ascending order.
pub fn tqc_truncate(atoms: &[Real], n_critics: usize, drop_per_net: usize) -> Result<Vec<Real>> {
    let drop = drop_per_net * n_critics;
    if drop >= atoms.len() {
        return Err(AgentError::InvalidConfig(format!(
            "cannot drop {drop} of {} atoms",
            atoms.len()
        )));
    }
    if atoms.iter().any(|a| !a.is_finite()) {
        return Err(AgentError::UpdateAborted("non-finite atom".into()));
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.truncate(atoms.len() - drop);
    Ok(sorted)
}

/// Plain quantile-Huber (pinball) loss between predicted atoms and target
/// atoms; mirrors the differentiable op for direct testing.
pub fn quantile_huber_loss(pred: &[Real], target: &[Real], taus: &[Real], kappa: Real) -> Real {
    assert_eq!(pred.len(), taus.len());
    let mut acc = 0.0;
    for (i, &z) in pred.iter().enumerate() {
        for &y in target {
            let u = y - z;
            let au = u.abs();
            let huber = if au <= kappa {
                0.5 * u * u
            } else {
                kappa * (au - 0.5 * kappa)
            };
            let w = if u < 0.0 { 1.0 - taus[i] } else { taus[i] };
            acc += w * huber;
        }
    }
    acc / (pred.len() * target.len()) as Real
}

pub struct TqcLearner {
    pub cfg: TqcConfig,
    pub actor: SquashedActor,
    pub actor_store: ParamStore32,
    critic: Mlp,
    pub critics: Vec<ParamStore32>,
    pub critic_targets: Vec<ParamStore32>,
    pub log_alpha: ParamStore32,
    adam_actor: Adam<Real>,
    adam_critics: Vec<Adam<Real>>,
    adam_alpha: Adam<Real>,
    taus: Vec<Real>,
    act_dim: usize,
    updates: u64,
}

impl TqcLearner {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: TqcConfig, init_rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let actor = SquashedActor::new("actor", obs_dim, &cfg.sac.hidden, act_dim)?;
        let mut actor_store = ParamStore32::new();
        actor.init(&mut actor_store, init_rng);

        let spec = MlpSpec::new(obs_dim + act_dim, &cfg.sac.hidden, cfg.n_quantiles, Activation::Relu);
        let critic = Mlp::new("zq", spec)?;
        let mut critics = Vec::with_capacity(cfg.n_critics);
        for _ in 0..cfg.n_critics {
            let mut s = ParamStore32::new();
            critic.init(&mut s, init_rng);
            critics.push(s);
        }
        let critic_targets = critics.clone();

        let mut log_alpha = ParamStore32::new();
        log_alpha.insert(
            "log_alpha",
            Tensor32::scalar(cfg.sac.init_alpha.max(1e-30).ln()),
        );

        let adam = AdamConfig::with_lr(cfg.sac.lr);
        Ok(TqcLearner {
            adam_actor: Adam::new(adam, &actor_store),
            adam_critics: critics.iter().map(|s| Adam::new(adam, s)).collect(),
            adam_alpha: Adam::new(adam, &log_alpha),
            taus: quantile_midpoints(cfg.n_quantiles),
            actor,
            actor_store,
            critic,
            critics,
            critic_targets,
            log_alpha,
            cfg,
            act_dim,
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

    /// Mean truncated value estimate for a single (obs, action) under the
    /// online critics.
    pub fn value_estimate(&self, obs: &[Real], action: &[Real]) -> Result<Real> {
        let mut input = obs.to_vec();
        input.extend_from_slice(action);
        let mut atoms = Vec::with_capacity(self.cfg.n_critics * self.cfg.n_quantiles);
        for s in &self.critics {
            atoms.extend(self.critic.infer_vec(s, &input)?);
        }
        let kept = tqc_truncate(&atoms, self.cfg.n_critics, self.cfg.drop_per_net)?;
        Ok(kept.iter().sum::<Real>() / kept.len() as Real)
    }

    pub fn update(&mut self, batch: &BatchTensors, noise_rng: &mut RngStream) -> Result<SacLosses> {
        let b = batch.len();
        let alpha = self.alpha();
        let m = self.cfg.n_quantiles;
        let kept = self.cfg.n_critics * m - self.cfg.drop_per_net * self.cfg.n_critics;

        // Target atoms: pooled-sorted-truncated at the next state.
        let (next_actions, next_logp) =
            self.actor
                .sample_batch(&self.actor_store, &batch.next_obs, noise_rng)?;
        let next_in = input_with_action(&batch.next_obs, &next_actions);
        let target_atoms: Vec<Tensor32> = self
            .critic_targets
            .iter()
            .map(|s| self.critic.infer_batch(s, &next_in))
            .collect::<std::result::Result<_, _>>()?;
        let mut targets = Vec::with_capacity(b * kept);
        for i in 0..b {
            let mut pooled = Vec::with_capacity(self.cfg.n_critics * m);
            for t in &target_atoms {
                pooled.extend_from_slice(t.row(i));
            }
            let keep = tqc_truncate(&pooled, self.cfg.n_critics, self.cfg.drop_per_net)?;
            for atom in keep {
                targets.push(
                    self.cfg.sac.reward_scale * batch.reward[i]
                        + self.cfg.sac.gamma * (atom - alpha * next_logp[i]),
                );
            }
        }
        let target_t = Tensor32::from_vec(&[b, kept], targets).unwrap();

        // Quantile regression per critic.
        let mut critic_loss = 0.0;
        let x_in = input_with_action(&batch.obs, &batch.action);
        for ci in 0..self.cfg.n_critics {
            let tape: Tape<Real> = Tape::new();
            let bind = GraphParams::bind(&tape, &self.critics[ci]);
            let x = tape.constant(x_in.clone());
            let pred = self.critic.forward(&bind, x)?;
            let loss = tape.quantile_huber(pred, &target_t, &self.taus, self.cfg.huber_kappa);
            critic_loss += loss.item();
            let mut grads = tape.backward(loss)?;
            let g = bind.collect(&mut grads, &self.critics[ci]);
            self.adam_critics[ci].step(&mut self.critics[ci], &g)?;
        }

        // Actor: maximize the mean of all predicted atoms plus entropy.
        let mut noise = vec![0.0; b * self.act_dim];
        noise_rng.fill_normal_f32(&mut noise);
        let noise_t = Tensor32::from_vec(&[b, self.act_dim], noise).unwrap();
        let (actor_loss, mean_logp) = {
            let tape: Tape<Real> = Tape::new();
            let bind_a = GraphParams::bind(&tape, &self.actor_store);
            let s = tape.constant(batch.obs.clone());
            let (a_new, logp) = self.actor.sample_on_tape(&tape, &bind_a, s, &noise_t)?;
            let qx = tape.concat_cols(&[s, a_new]);
            let mut mean_q: Option<Var<'_, Real>> = None;
            for store in &self.critics {
                let bind_q = GraphParams::bind_frozen(&tape, store);
                let atoms = self.critic.forward(&bind_q, qx)?;
                let mq = atoms.mean_all();
                mean_q = Some(match mean_q {
                    None => mq,
                    Some(acc) => acc.add(mq),
                });
            }
            let q_term = mean_q.unwrap().mul_scalar(1.0 / self.cfg.n_critics as f64);
            let loss = logp.mean_all().mul_scalar(alpha as f64).sub(q_term);
            let value = loss.item();
            let mean_logp = logp.value().data().iter().sum::<Real>() / b as Real;
            let mut grads = tape.backward(loss)?;
            let ga = bind_a.collect(&mut grads, &self.actor_store);
            self.adam_actor.step(&mut self.actor_store, &ga)?;
            (value, mean_logp)
        };

        let temperature_loss = if self.cfg.sac.auto_alpha {
            let tape: Tape<Real> = Tape::new();
            let bind = GraphParams::bind(&tape, &self.log_alpha);
            let la = bind.var("log_alpha")?;
            let coeff = -(mean_logp + self.cfg.sac.target_entropy);
            let loss = la.mul_scalar(coeff as f64).sum_all();
            let value = loss.item();
            let mut grads = tape.backward(loss)?;
            let g = bind.collect(&mut grads, &self.log_alpha);
            self.adam_alpha.step(&mut self.log_alpha, &g)?;
            value
        } else {
            0.0
        };

        for (t, s) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.lerp_from(s, self.cfg.sac.tau_target);
        }
        self.updates += 1;

        Ok(SacLosses {
            critic: critic_loss,
            value: None,
            actor: actor_loss,
            temperature: temperature_loss,
        })
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_drops_largest_atoms() {
        // 2 nets x 5 quantiles, k = 1: atoms 1..10 keep 1..8, mean 4.5.
        let atoms: Vec<Real> = vec![7.0, 1.0, 9.0, 3.0, 5.0, 2.0, 10.0, 4.0, 6.0, 8.0];
        let kept = tqc_truncate(&atoms, 2, 1).unwrap();
        assert_eq!(kept, (1..=8).map(|v| v as Real).collect::<Vec<_>>());
        let mean = kept.iter().sum::<Real>() / kept.len() as Real;
        assert_eq!(mean, 4.5);
    }

    #[test]
    fn zero_drop_keeps_everything() {
        let atoms: Vec<Real> = vec![3.0, 1.0, 2.0];
        assert_eq!(tqc_truncate(&atoms, 1, 0).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_atoms_have_constant_mean_for_any_valid_drop() {
        let atoms = vec![2.5 as Real; 10];
        for k in 0..5 {
            let kept = tqc_truncate(&atoms, 2, k).unwrap();
            let mean = kept.iter().sum::<Real>() / kept.len() as Real;
            assert_eq!(mean, 2.5);
        }
    }

    #[test]
    fn overdrop_rejected() {
        let atoms = vec![1.0 as Real; 10];
        assert!(tqc_truncate(&atoms, 2, 5).is_err());
        assert!(TqcConfig {
            n_critics: 2,
            n_quantiles: 5,
            drop_per_net: 5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn pinball_hand_case() {
        // Single atom, target 0, pred 1, kappa 1, tau 0.5 -> 0.25.
        let loss = quantile_huber_loss(&[1.0], &[0.0], &[0.5], 1.0);
        assert!((loss - 0.25).abs() < 1e-7);
    }

    #[test]
    fn matching_atoms_beat_any_shifted_prediction() {
        // The midpoint fractions sum to M/2, so the subgradient along a
        // common shift vanishes exactly at pred == target, and the on-atom
        // quadratic zones make shifts strictly worse.
        let taus = quantile_midpoints(5);
        let target: Vec<Real> = vec![-1.0, -0.2, 0.0, 0.4, 1.3];
        let base = quantile_huber_loss(&target, &target, &taus, 1.0);
        for delta in [-1.5, -0.3, 0.3, 1.5] {
            let pred: Vec<Real> = target.iter().map(|v| v + delta).collect();
            assert!(
                quantile_huber_loss(&pred, &target, &taus, 1.0) > base,
                "shift {delta} should not improve the fit"
            );
        }
    }

    #[test]
    fn matching_atoms_are_the_pinball_minimizer_per_atom() {
        // With a kappa far below the atom gaps the loss is effectively pure
        // pinball, whose unique per-atom minimizers at the midpoint
        // fractions are the sorted target atoms themselves.
        let taus = quantile_midpoints(5);
        let target: Vec<Real> = vec![-1.0, -0.2, 0.0, 0.4, 1.3];
        let kappa = 0.01;
        let base = quantile_huber_loss(&target, &target, &taus, kappa);
        for i in 0..5 {
            for delta in [-0.15, 0.15] {
                let mut pred = target.clone();
                pred[i] += delta;
                assert!(
                    quantile_huber_loss(&pred, &target, &taus, kappa) > base,
                    "perturbing atom {i} by {delta} should not improve the fit"
                );
            }
        }
    }

    #[test]
    fn pinball_loss_nonnegative_on_random_pairs() {
        let mut rng = diffcore::rng::Seeder::new(5).stream("pinball");
        let taus = quantile_midpoints(7);
        for _ in 0..1000 {
            let pred: Vec<Real> = (0..7).map(|_| rng.normal() as Real).collect();
            let target: Vec<Real> = (0..4).map(|_| rng.normal() as Real * 3.0).collect();
            assert!(quantile_huber_loss(&pred, &target, &taus, 1.0) >= 0.0);
        }
    }
}

//! Squashed-Gaussian actor shared by the off-policy learners.

use diffcore::graph::{GraphParams, Tape, Var};
use diffcore::head::{gaussian_head_sample, gaussian_sample_plain};
use diffcore::rng::RngStream;
use diffcore::{Activation, Mlp, MlpSpec, ParamStore32, Real, Tensor32};
use envkit::ACTION_DIM;

use crate::error::Result;

/// Actor whose MLP emits [mean | log_std]; actions are squashed to (-1, 1).
#[derive(Clone, Debug)]
pub struct SquashedActor {
    net: Mlp,
    input_dim: usize,
    act_dim: usize,
}

impl SquashedActor {
    pub fn new(prefix: &str, input_dim: usize, hidden: &[usize], act_dim: usize) -> Result<Self> {
        let spec = MlpSpec::new(input_dim, hidden, 2 * act_dim, Activation::Relu);
        Ok(SquashedActor {
            net: Mlp::new(prefix, spec)?,
            input_dim,
            act_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn init(&self, store: &mut ParamStore32, rng: &mut RngStream) {
        self.net.init(store, rng);
    }

    /// Stochastic action for one input row; also returns the log-probability.
    pub fn act_stochastic(
        &self,
        store: &ParamStore32,
        input: &[Real],
        rng: &mut RngStream,
    ) -> Result<([Real; ACTION_DIM], Real)> {
        let out = self.net.infer_vec(store, input)?;
        let (mean, log_std) = out.split_at(self.act_dim);
        let mut noise = vec![0.0; self.act_dim];
        rng.fill_normal_f32(&mut noise);
        let (a, logp) = gaussian_sample_plain(mean, log_std, &noise);
        Ok((to_action(&a), logp))
    }

    /// Deterministic action: tanh of the mean.
    pub fn act_mean(&self, store: &ParamStore32, input: &[Real]) -> Result<[Real; ACTION_DIM]> {
        let out = self.net.infer_vec(store, input)?;
        let (mean, log_std) = out.split_at(self.act_dim);
        let zeros = vec![0.0; self.act_dim];
        let (a, _) = gaussian_sample_plain(mean, log_std, &zeros);
        Ok(to_action(&a))
    }

    /// Batched stochastic sampling without a graph; used for target values.
    pub fn sample_batch(
        &self,
        store: &ParamStore32,
        input: &Tensor32,
        rng: &mut RngStream,
    ) -> Result<(Tensor32, Vec<Real>)> {
        let out = self.net.infer_batch(store, input)?;
        let b = out.rows();
        let mut actions = Vec::with_capacity(b * self.act_dim);
        let mut logps = Vec::with_capacity(b);
        let mut noise = vec![0.0; self.act_dim];
        for r in 0..b {
            let row = out.row(r);
            let (mean, log_std) = row.split_at(self.act_dim);
            rng.fill_normal_f32(&mut noise);
            let (a, logp) = gaussian_sample_plain(mean, log_std, &noise);
            actions.extend_from_slice(&a);
            logps.push(logp);
        }
        Ok((
            Tensor32::from_vec(&[b, self.act_dim], actions).unwrap(),
            logps,
        ))
    }

    /// Recorded reparameterized sample: returns (action [B,D], log_prob [B,1]).
    /// The noise tensor must be [B,D].
    pub fn sample_on_tape<'t>(
        &self,
        tape: &'t Tape<Real>,
        bind: &GraphParams<'t, Real>,
        input: Var<'t, Real>,
        noise: &Tensor32,
    ) -> Result<(Var<'t, Real>, Var<'t, Real>)> {
        let out = self.net.forward(bind, input)?;
        let mean = out.slice_cols(0, self.act_dim);
        let log_std = out.slice_cols(self.act_dim, 2 * self.act_dim);
        Ok(gaussian_head_sample(tape, mean, log_std, noise))
    }
}

fn to_action(v: &[Real]) -> [Real; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    a[..v.len()].copy_from_slice(v);
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffcore::rng::Seeder;

    #[test]
    fn mean_action_is_deterministic_and_bounded() {
        let actor = SquashedActor::new("actor", 44, &[32, 32], ACTION_DIM).unwrap();
        let mut store = ParamStore32::new();
        actor.init(&mut store, &mut Seeder::new(3).stream("init"));
        let obs = vec![0.2; 44];
        let a1 = actor.act_mean(&store, &obs).unwrap();
        let a2 = actor.act_mean(&store, &obs).unwrap();
        assert_eq!(a1, a2);
        assert!(a1.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn batch_and_single_sampling_agree() {
        let actor = SquashedActor::new("actor", 10, &[16], 4).unwrap();
        let mut store = ParamStore32::new();
        actor.init(&mut store, &mut Seeder::new(5).stream("init"));
        let x = vec![0.1; 10];
        let xt = Tensor32::from_vec(&[1, 10], x.clone()).unwrap();
        let (a_b, lp_b) = actor
            .sample_batch(&store, &xt, &mut Seeder::new(7).stream("noise"))
            .unwrap();
        let (a_s, lp_s) = actor
            .act_stochastic(&store, &x, &mut Seeder::new(7).stream("noise"))
            .unwrap();
        assert_eq!(a_b.row(0), &a_s[..4]);
        assert!((lp_b[0] - lp_s).abs() < 1e-6);
    }
}

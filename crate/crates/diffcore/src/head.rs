//! Squashed diagonal-Gaussian policy head.
//!
//! Actions are tanh(mean + exp(log_std) * noise); the log-probability carries
//! the tanh change-of-variables term, computed through the numerically stable
//! identity ln(1 - tanh²(x)) = 2·(ln 2 - x - softplus(-2x)).

use crate::graph::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const LN_2: f64 = std::f64::consts::LN_2;
// tanh rounds to exactly 1.0 for large inputs; pull actions back inside the
// open interval. tanh's own gradient is ~0 out there, so clamping loses
// nothing.
const ACTION_BOUND: f64 = 1.0 - 1e-6;

/// Reparameterized sample on the tape. `mean` and `log_std` are [B,D];
/// `noise` is a fixed standard-normal draw of the same shape. Returns the
/// squashed action [B,D] and the per-sample log-probability [B,1], both
/// differentiable w.r.t. `mean` and `log_std`.
pub fn gaussian_head_sample<'t, S: Scalar>(
    tape: &'t Tape<S>,
    mean: Var<'t, S>,
    log_std: Var<'t, S>,
    noise: &Tensor<S>,
) -> (Var<'t, S>, Var<'t, S>) {
    assert_eq!(mean.shape(), log_std.shape(), "head: mean/log_std shape");
    assert_eq!(&mean.shape()[..], noise.shape(), "head: noise shape");
    let log_std = log_std.clamp_(LOG_STD_MIN, LOG_STD_MAX);
    let noise_v = tape.constant(noise.clone());
    let std = log_std.exp_();
    let pre = mean.add(std.mul(noise_v));
    let action = pre.tanh_().clamp_(-ACTION_BOUND, ACTION_BOUND);

    // Normal density at the sample: -0.5 eps² - log_std - 0.5 ln 2pi, where
    // eps is the fixed noise (the (x-mu)/sigma terms cancel algebraically).
    let half_sq: Tensor<S> = noise.map(|e| S::c(-0.5) * e * e);
    let normal_term = tape.constant(half_sq).add(log_std.neg_()).add_scalar(-HALF_LN_2PI);

    // -ln(1 - tanh²(pre)) = 2 (pre + softplus(-2 pre) - ln 2)
    let squash_correction = pre
        .add(pre.mul_scalar(-2.0).softplus())
        .add_scalar(-LN_2)
        .mul_scalar(2.0);
    let log_prob = normal_term.add(squash_correction).sum_rows();
    (action, log_prob)
}

/// Plain (graph-free) version for rollouts. Inputs are one sample's mean,
/// log_std and noise; returns (action, total log-probability).
pub fn gaussian_sample_plain<S: Scalar>(mean: &[S], log_std: &[S], noise: &[S]) -> (Vec<S>, S) {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), noise.len());
    let mut action = Vec::with_capacity(mean.len());
    let mut logp = S::zero();
    for i in 0..mean.len() {
        let ls = log_std[i].max(S::c(LOG_STD_MIN)).min(S::c(LOG_STD_MAX));
        let pre = mean[i] + ls.exp() * noise[i];
        let bound = S::c(ACTION_BOUND);
        action.push(pre.tanh().max(-bound).min(bound));
        let softplus = (-S::c(2.0) * pre).max(S::zero())
            + (-((-S::c(2.0) * pre).abs())).exp().ln_1p();
        let squash = S::c(2.0) * (S::c(LN_2) - pre - softplus);
        logp += S::c(-0.5) * noise[i] * noise[i] - ls - S::c(HALF_LN_2PI) - squash;
    }
    (action, logp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_zero_mean_density() {
        let (action, logp) = gaussian_sample_plain::<f64>(&[0.0], &[0.0], &[0.0]);
        assert_eq!(action, vec![0.0]);
        assert!((logp - (-HALF_LN_2PI)).abs() < 1e-12, "logp = {logp}");
    }

    #[test]
    fn zero_noise_gives_tanh_of_mean() {
        let mean = [0.7, -2.0, 5.0];
        let (action, _) = gaussian_sample_plain::<f64>(&mean, &[0.3; 3], &[0.0; 3]);
        for (a, m) in action.iter().zip(&mean) {
            assert!((a - m.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_and_plain_agree() {
        let mean = [0.4, -0.9];
        let log_std = [-0.5, 0.2];
        let noise = [1.3, -0.6];
        let (pa, plp) = gaussian_sample_plain::<f64>(&mean, &log_std, &noise);

        let tape = Tape::new();
        let m = tape.leaf(Tensor::from_vec(&[1, 2], mean.to_vec()).unwrap());
        let ls = tape.leaf(Tensor::from_vec(&[1, 2], log_std.to_vec()).unwrap());
        let n = Tensor::from_vec(&[1, 2], noise.to_vec()).unwrap();
        let (a, lp) = gaussian_head_sample(&tape, m, ls, &n);
        for (x, y) in a.value().data().iter().zip(&pa) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!((lp.value().item() - plp).abs() < 1e-12);
    }

    #[test]
    fn samples_stay_strictly_inside_unit_box() {
        let mut rng = crate::rng::Seeder::new(17).stream("head");
        for _ in 0..2000 {
            let mean = [rng.uniform(-50.0, 50.0)];
            let log_std = [rng.uniform(-25.0, 5.0)];
            let noise = [rng.normal()];
            let (a, lp) = gaussian_sample_plain::<f64>(&mean, &log_std, &noise);
            assert!(a[0] > -1.0 && a[0] < 1.0, "action {}", a[0]);
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn density_integrates_to_one_in_1d() {
        // Quadrature over the squashed action space: sum p(a) da ~= 1.
        let mean = 0.35f64;
        let log_std = -0.4f64;
        let n = 20_000;
        let mut integral = 0.0;
        let mut prev_a = -1.0 + 1e-9;
        for i in 1..n {
            // Uniform grid in pre-tanh space, mapped through tanh.
            let u = -8.0 + 16.0 * i as f64 / n as f64;
            let a = u.tanh();
            let eps = (u - mean) / log_std.exp();
            let (_, lp) = gaussian_sample_plain::<f64>(&[mean], &[log_std], &[eps]);
            integral += lp.exp() * (a - prev_a);
            prev_a = a;
        }
        assert!((integral - 1.0).abs() < 0.01, "integral = {integral}");
    }
}

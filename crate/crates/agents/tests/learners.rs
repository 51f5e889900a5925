//! Convergence oracles on a degenerate single-state MDP and policy-gradient
//! sign checks. The scalar MDP has one state, one action, reward 1 and
//! gamma 0.5, so the true action value is the geometric series 1/(1-0.5) = 2.

use agents::replay::BatchTensors;
use agents::sac::{SacConfig, SacLearner};
use agents::tqc::{TqcConfig, TqcLearner};
use agents::Real;
use diffcore::rng::Seeder;
use diffcore::Tensor32;

fn scalar_mdp_batch(b: usize) -> BatchTensors {
    BatchTensors {
        obs: Tensor32::from_vec(&[b, 1], vec![0.0; b]).unwrap(),
        action: Tensor32::from_vec(&[b, 1], vec![0.0; b]).unwrap(),
        reward: vec![1.0; b],
        next_obs: Tensor32::from_vec(&[b, 1], vec![0.0; b]).unwrap(),
        done: vec![false; b],
    }
}

fn fast_cfg() -> SacConfig {
    SacConfig {
        gamma: 0.5,
        tau_target: 0.02,
        lr: 1e-3,
        batch: 32,
        auto_alpha: false,
        init_alpha: 0.0,
        hidden: vec![32, 32],
        ..Default::default()
    }
}

#[test]
fn sac_value_converges_to_geometric_series() {
    let mut rng = Seeder::new(0).stream("init");
    let mut learner = SacLearner::new(1, 1, fast_cfg(), &mut rng).unwrap();
    let batch = scalar_mdp_batch(32);
    let mut noise = Seeder::new(1).stream("noise");
    for _ in 0..6000 {
        learner.update(&batch, &mut noise).unwrap();
    }
    let q = learner.q_value(&[0.0], &[0.0]).unwrap();
    assert!((q - 2.0).abs() <= 0.01, "Q = {q}, expected 2 +- 0.01");
}

#[test]
fn tqc_truncated_value_converges_to_geometric_series() {
    let cfg = TqcConfig {
        sac: fast_cfg(),
        ..Default::default()
    };
    let mut rng = Seeder::new(2).stream("init");
    let mut learner = TqcLearner::new(1, 1, cfg, &mut rng).unwrap();
    let batch = scalar_mdp_batch(32);
    let mut noise = Seeder::new(3).stream("noise");
    for _ in 0..6000 {
        learner.update(&batch, &mut noise).unwrap();
    }
    let v = learner.value_estimate(&[0.0], &[0.0]).unwrap();
    assert!((v - 2.0).abs() <= 0.01, "value = {v}, expected 2 +- 0.01");
}

#[test]
fn tqc_with_single_quantile_degenerates_to_expected_value_regression() {
    // One quantile at tau = 0.5, no truncation: the pinball loss is a
    // symmetric Huber toward the mean return.
    let cfg = TqcConfig {
        n_quantiles: 1,
        drop_per_net: 0,
        sac: fast_cfg(),
        ..Default::default()
    };
    let mut rng = Seeder::new(4).stream("init");
    let mut learner = TqcLearner::new(1, 1, cfg, &mut rng).unwrap();
    let batch = scalar_mdp_batch(32);
    let mut noise = Seeder::new(5).stream("noise");
    for _ in 0..6000 {
        learner.update(&batch, &mut noise).unwrap();
    }
    let v = learner.value_estimate(&[0.0], &[0.0]).unwrap();
    assert!((v - 2.0).abs() <= 0.01, "value = {v}, expected 2 +- 0.01");
}

#[test]
fn positive_advantage_increases_that_actions_log_prob() {
    use agents::maml::{MamlConfig, MamlLearner};
    use envkit::{enumerate_tasks, TaskFamily, ACTION_DIM};

    let cfg = MamlConfig {
        hidden: vec![16],
        ..Default::default()
    };
    let mut rng = Seeder::new(6).stream("init");
    let learner = MamlLearner::new(cfg, &mut rng).unwrap();
    let task = enumerate_tasks::<Real>(TaskFamily::Direction)[0].clone();
    let mut env_rng = Seeder::new(7).stream("env");
    let mut noise = Seeder::new(7).stream("noise");
    let (trajs, _) = learner
        .collect(&learner.store, &task, 1, &mut env_rng, &mut noise)
        .unwrap();

    // Reward exactly one (s, a) pair.
    let mut advantages = vec![vec![0.0 as Real; trajs[0].len()]];
    advantages[0][40] = 1.0;
    let (_, grads) = learner
        .vpg_loss_and_grads(&learner.store, &trajs, &advantages)
        .unwrap();
    let stepped = learner.store.stepped(&grads, 0.01);

    let log_prob = |store: &diffcore::ParamStore32| -> Real {
        let mean = learner.act_mean(store, &trajs[0].obs[40]).unwrap();
        let log_std = store.get("pi.log_std").unwrap();
        let mut lp = 0.0;
        for j in 0..ACTION_DIM {
            let ls = log_std.data()[j];
            let z = (trajs[0].actions[40][j] - mean[j]) / ls.exp();
            lp += -0.5 * z * z - ls - 0.918_938_5;
        }
        lp
    };
    let before = log_prob(&learner.store);
    let after = log_prob(&stepped);
    assert!(
        after > before,
        "log-prob must increase: {before} -> {after}"
    );
}

//! Meta-test protocol contracts that hold regardless of training quality:
//! prior-first sampling, posterior sharpening, parameter isolation, and the
//! fixed adaptation budget.

use agents::maml::{MamlConfig, MamlLearner};
use agents::pearl::{PearlConfig, PearlLearner};
use agents::sac::SacConfig;
use agents::Real;
use diffcore::rng::Seeder;
use envkit::{enumerate_tasks, TaskFamily};

fn small_pearl() -> PearlLearner {
    let cfg = PearlConfig {
        encoder_hidden: vec![32],
        net_hidden: vec![32],
        sac: SacConfig {
            hidden: vec![32],
            batch: 16,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut rng = Seeder::new(100).stream("init");
    PearlLearner::new(cfg, &mut rng).unwrap()
}

#[test]
fn first_episode_uses_the_unit_prior() {
    let learner = small_pearl();
    let task = enumerate_tasks::<Real>(TaskFamily::Direction)[0].clone();
    let (_, latents) = learner.meta_test(&task, 3, &Seeder::new(5), 0).unwrap();
    assert_eq!(latents[0].episode, 1);
    assert_eq!(latents[0].posterior_mean, [0.0; 5]);
    assert_eq!(latents[0].posterior_var, [1.0; 5]);
    // Later episodes have a data-driven posterior.
    assert_ne!(latents[1].posterior_var, [1.0; 5]);
}

#[test]
fn posterior_variance_shrinks_as_context_accumulates() {
    let learner = small_pearl();
    let task = enumerate_tasks::<Real>(TaskFamily::Direction)[1].clone();
    let (_, latents) = learner.meta_test(&task, 6, &Seeder::new(6), 0).unwrap();
    for w in latents.windows(2) {
        for d in 0..5 {
            assert!(
                w[1].posterior_var[d] <= w[0].posterior_var[d] + 1e-6,
                "posterior variance grew between episodes {} and {}",
                w[0].episode,
                w[1].episode
            );
        }
    }
}

#[test]
fn meta_test_never_mutates_parameters() {
    let learner = small_pearl();
    let before: Vec<u64> = [
        learner.encoder_store.checksum(),
        learner.actor_store.checksum(),
        learner.q1.checksum(),
        learner.q2.checksum(),
        learner.value_store.checksum(),
        learner.value_target.checksum(),
    ]
    .to_vec();
    let task = enumerate_tasks::<Real>(TaskFamily::Friction)[0].clone();
    learner.meta_test(&task, 4, &Seeder::new(7), 3).unwrap();
    let after = [
        learner.encoder_store.checksum(),
        learner.actor_store.checksum(),
        learner.q1.checksum(),
        learner.q2.checksum(),
        learner.value_store.checksum(),
        learner.value_target.checksum(),
    ];
    assert_eq!(before, after);
}

#[test]
fn meta_test_is_deterministic_per_seed_and_trial() {
    let learner = small_pearl();
    let task = enumerate_tasks::<Real>(TaskFamily::Direction)[0].clone();
    let (o1, l1) = learner.meta_test(&task, 3, &Seeder::new(8), 2).unwrap();
    let (o2, l2) = learner.meta_test(&task, 3, &Seeder::new(8), 2).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in o1.iter().zip(&o2) {
        assert_eq!(a.ret, b.ret);
    }
    let (_, l3) = learner.meta_test(&task, 3, &Seeder::new(8), 4).unwrap();
    assert_ne!(l1[0].z, l3[0].z, "trials draw independent streams");
}

#[test]
fn pearl_checkpoint_roundtrip_reproduces_meta_test() {
    let learner = small_pearl();
    let dir = std::env::temp_dir().join("agents_pearl_ckpt");
    std::fs::create_dir_all(&dir).unwrap();
    let path = learner
        .to_checkpoint(42, serde_json::json!({}))
        .save(&dir.join("pearl"))
        .unwrap();
    let loaded = agents::Checkpoint::load(&path).unwrap();
    let restored = PearlLearner::from_checkpoint(&loaded, learner.cfg.clone()).unwrap();
    let task = enumerate_tasks::<Real>(TaskFamily::Direction)[0].clone();
    let (o1, l1) = learner.meta_test(&task, 3, &Seeder::new(9), 0).unwrap();
    let (o2, l2) = restored.meta_test(&task, 3, &Seeder::new(9), 0).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in o1.iter().zip(&o2) {
        assert_eq!(a.ret, b.ret);
        assert_eq!(a.end_dist, b.end_dist);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn maml_adaptation_consumes_exactly_3200_steps_and_restores_params() {
    let cfg = MamlConfig {
        hidden: vec![16],
        ..Default::default()
    };
    let mut rng = Seeder::new(11).stream("init");
    let learner = MamlLearner::new(cfg, &mut rng).unwrap();
    let before = learner.store.checksum();
    let task = enumerate_tasks::<Real>(TaskFamily::Friction)[1].clone();
    let report = learner.meta_test(&task, &Seeder::new(12), 0).unwrap();
    assert_eq!(report.adaptation_steps, 3200);
    assert_eq!(report.adaptation.len(), 20);
    assert_eq!(learner.store.checksum(), before);
}

#[test]
fn maml_zero_inner_lr_meta_test_equals_direct_evaluation() {
    let cfg = MamlConfig {
        hidden: vec![16],
        inner_lr: 0.0,
        ..Default::default()
    };
    let mut rng = Seeder::new(13).stream("init");
    let learner = MamlLearner::new(cfg, &mut rng).unwrap();
    let task = enumerate_tasks::<Real>(TaskFamily::Angle)[3].clone();
    let report = learner.meta_test(&task, &Seeder::new(14), 0).unwrap();
    for (pre, post) in report.pre_eval.iter().zip(&report.post_eval) {
        assert_eq!(pre.ret, post.ret);
        assert_eq!(pre.end_dist, post.end_dist);
    }
}

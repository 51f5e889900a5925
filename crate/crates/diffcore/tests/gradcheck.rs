//! Finite-difference verification of the tape's analytic gradients on the
//! network shapes the training stack actually builds.

use diffcore::fdcheck::{check_head_gradients, check_mlp_gradients};
use diffcore::{Activation, MlpSpec};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn assert_clean(spec: &MlpSpec, seed: u64, probes: usize) {
    let report = check_mlp_gradients(spec, seed, probes, 6, STEP);
    assert!(
        report.max_rel_err < TOL,
        "{}-{:?}-{} max rel err {} over {} coords",
        spec.input_dim,
        spec.hidden,
        spec.output_dim,
        report.max_rel_err,
        report.coords_checked
    );
    assert!(report.coords_checked >= probes * 4, "too many skipped probes");
}

#[test]
fn observation_critic_shape_matches_fd() {
    // 44-dim observation, 3x256 relu trunk, scalar value.
    assert_clean(
        &MlpSpec::new(44, &[256, 256, 256], 1, Activation::Relu),
        11,
        25,
    );
}

#[test]
fn small_tanh_net_matches_fd() {
    assert_clean(&MlpSpec::new(6, &[32, 32], 4, Activation::Tanh), 13, 25);
}

#[test]
fn transition_encoder_shape_matches_fd() {
    // 101-dim transition input, 3x200 relu, 10 outputs.
    assert_clean(
        &MlpSpec::new(101, &[200, 200, 200], 10, Activation::Relu),
        17,
        10,
    );
}

#[test]
fn gaussian_head_matches_fd() {
    let report = check_head_gradients(12, 23, 50, STEP);
    assert!(
        report.max_rel_err < TOL,
        "head max rel err {}",
        report.max_rel_err
    );
}

#[test]
fn forward_is_deterministic() {
    use diffcore::{Mlp, ParamStore, Seeder, Tensor};
    let spec = MlpSpec::new(10, &[64, 64], 3, Activation::Relu);
    let mlp = Mlp::new("net", spec).unwrap();
    let mut store: ParamStore<f32> = ParamStore::new();
    mlp.init(&mut store, &mut Seeder::new(5).stream("init"));
    let x = Tensor::from_vec(&[2, 10], (0..20).map(|i| (i as f32) * 0.1 - 1.0).collect()).unwrap();
    let a = mlp.infer_batch(&store, &x).unwrap();
    let b = mlp.infer_batch(&store, &x).unwrap();
    assert_eq!(a.data(), b.data());
}

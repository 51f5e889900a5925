//! Test support: central finite-difference gradient oracle.
//!
//! Everything here recomputes forward values with its own naive loops — no
//! tape, no shared kernels — so it stays an independent check on the graph's
//! analytic gradients. Only test code should call into this module.
//!
//! ReLU networks are piecewise linear, so central differences are exact on a
//! fixed activation pattern; probes whose pattern flips between the two
//! perturbed evaluations sit on a kink (no derivative there) and are redrawn.

use crate::head::{LOG_STD_MAX, LOG_STD_MIN};
use crate::mlp::{Activation, Mlp, MlpSpec, ParamStore};
use crate::rng::{RngStream, Seeder};
use crate::tensor::Tensor;

/// Outcome of one gradient check sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub kinks_skipped: usize,
}

/// Naive forward pass: weights row-major [out, in], biases per layer, hidden
/// activation on all but the last layer. Returns outputs plus the ReLU
/// activation pattern used for kink detection.
fn naive_forward(
    dims: &[(usize, usize)],
    activation: Activation,
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
    x: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let mut h = x.to_vec();
    let mut pattern = Vec::new();
    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let mut next = vec![0.0f64; fan_out];
        for o in 0..fan_out {
            let mut acc = biases[layer][o];
            for i in 0..fan_in {
                acc += weights[layer][o * fan_in + i] * h[i];
            }
            next[o] = acc;
        }
        if layer + 1 < dims.len() {
            for v in &mut next {
                match activation {
                    Activation::Relu => {
                        pattern.push(*v > 0.0);
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    Activation::Tanh => *v = v.tanh(),
                }
            }
        }
        h = next;
    }
    (h, pattern)
}

fn store_to_layers(spec: &MlpSpec, prefix: &str, store: &ParamStore<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dims = spec.layer_dims();
    let mut weights = Vec::with_capacity(dims.len());
    let mut biases = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        weights.push(store.get(&format!("{prefix}.w{i}")).unwrap().data().to_vec());
        biases.push(store.get(&format!("{prefix}.b{i}")).unwrap().data().to_vec());
    }
    (weights, biases)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Check the tape's MLP gradients against central differences.
///
/// Per probe: fresh random parameters and input, a random linear functional
/// of the outputs as the scalar loss, one analytic backward, then
/// `coords_per_probe` finite-difference coordinates at the given step.
pub fn check_mlp_gradients(
    spec: &MlpSpec,
    seed: u64,
    probes: usize,
    coords_per_probe: usize,
    step: f64,
) -> FdReport {
    use crate::graph::{GraphParams, Tape};

    let mlp = Mlp::new("net", spec.clone()).unwrap();
    let dims = spec.layer_dims();
    let mut report = FdReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        kinks_skipped: 0,
    };
    let seeder = Seeder::new(seed);

    for probe in 0..probes {
        let mut rng = seeder.stream_indexed("probe", probe as u64);
        let mut store: ParamStore<f64> = ParamStore::new();
        mlp.init(&mut store, &mut rng);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.normal()).collect();
        let functional: Vec<f64> = (0..spec.output_dim).map(|_| rng.normal()).collect();

        // Analytic gradients from the tape.
        let tape = Tape::new();
        let bind = GraphParams::bind(&tape, &store);
        let xv = tape.constant(Tensor::from_vec(&[1, x.len()], x.clone()).unwrap());
        let out = mlp.forward(&bind, xv).unwrap();
        let fv = tape.constant(Tensor::from_vec(&[1, functional.len()], functional.clone()).unwrap());
        let loss = out.mul(fv).sum_all();
        let mut grads = tape.backward(loss).unwrap();
        let analytic = bind.collect(&mut grads, &store);

        let (weights, biases) = store_to_layers(spec, "net", &store);
        let scalar_of = |weights: &[Vec<f64>], biases: &[Vec<f64>]| -> (f64, Vec<bool>) {
            let (out, pattern) = naive_forward(&dims, spec.activation, weights, biases, &x);
            let v = out.iter().zip(&functional).map(|(o, f)| o * f).sum();
            (v, pattern)
        };

        let mut checked = 0;
        let mut attempts = 0;
        while checked < coords_per_probe && attempts < coords_per_probe * 20 {
            attempts += 1;
            // Pick a random parameter coordinate: layer, weight-or-bias, index.
            let layer = rng.below(dims.len());
            let is_weight = rng.next_f64() < 0.9;
            let (vecs, entry): (&[Vec<f64>], usize) = if is_weight {
                (&weights, layer)
            } else {
                (&biases, layer)
            };
            let idx = rng.below(vecs[entry].len());

            let mut wp = weights.clone();
            let mut bp = biases.clone();
            {
                let target = if is_weight { &mut wp[layer] } else { &mut bp[layer] };
                target[idx] += step;
            }
            let (f_plus, pat_plus) = scalar_of(&wp, &bp);
            {
                let target = if is_weight { &mut wp[layer] } else { &mut bp[layer] };
                target[idx] -= 2.0 * step;
            }
            let (f_minus, pat_minus) = scalar_of(&wp, &bp);
            if pat_plus != pat_minus {
                report.kinks_skipped += 1;
                continue;
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            let store_idx = 2 * layer + usize::from(!is_weight);
            let an = analytic[store_idx].data()[idx];
            let err = rel_err(fd, an);
            report.max_rel_err = report.max_rel_err.max(err);
            checked += 1;
        }
        report.coords_checked += checked;
    }
    report
}

/// Check the squashed-Gaussian head gradients (w.r.t. mean and log_std)
/// against central differences. The oracle recomputes action and
/// log-probability with its own formulas.
pub fn check_head_gradients(dim: usize, seed: u64, probes: usize, step: f64) -> FdReport {
    use crate::graph::Tape;
    use crate::head::gaussian_head_sample;

    let mut report = FdReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        kinks_skipped: 0,
    };
    let seeder = Seeder::new(seed);

    let naive = |mean: &[f64], log_std: &[f64], noise: &[f64], functional: &[f64]| -> f64 {
        // functional: dim weights on the action + 1 weight on log_prob.
        let mut acc = 0.0;
        let mut logp = 0.0;
        for i in 0..mean.len() {
            let ls = log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let pre = mean[i] + ls.exp() * noise[i];
            acc += functional[i] * pre.tanh();
            let squash = 2.0 * ((2.0f64).ln() - pre - softplus_f64(-2.0 * pre));
            logp += -0.5 * noise[i] * noise[i] - ls - 0.918_938_533_204_672_7 - squash;
        }
        acc + functional[mean.len()] * logp
    };

    for probe in 0..probes {
        let mut rng = seeder.stream_indexed("head_probe", probe as u64);
        let mean: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let log_std: Vec<f64> = (0..dim).map(|_| rng.uniform(-3.0, 0.5)).collect();
        let noise: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let functional: Vec<f64> = (0..=dim).map(|_| rng.normal()).collect();

        let tape = Tape::new();
        let m = tape.leaf(Tensor::from_vec(&[1, dim], mean.clone()).unwrap());
        let ls = tape.leaf(Tensor::from_vec(&[1, dim], log_std.clone()).unwrap());
        let n = Tensor::from_vec(&[1, dim], noise.clone()).unwrap();
        let (action, log_prob) = gaussian_head_sample(&tape, m, ls, &n);
        let fa = tape.constant(Tensor::from_vec(&[1, dim], functional[..dim].to_vec()).unwrap());
        let fl = tape.constant_scalar(functional[dim]);
        let loss = action.mul(fa).sum_all().add(log_prob.sum_all().mul(fl));
        let mut grads = tape.backward(loss).unwrap();
        let g_mean = grads.take(m).unwrap();
        let g_ls = grads.take(ls).unwrap();

        for i in 0..dim {
            for which in 0..2 {
                let mut mp = mean.clone();
                let mut lp = log_std.clone();
                let (vec, an) = if which == 0 {
                    (&mut mp, g_mean.data()[i])
                } else {
                    (&mut lp, g_ls.data()[i])
                };
                vec[i] += step;
                let f_plus = naive(&mp, &lp, &noise, &functional);
                let vec = if which == 0 { &mut mp } else { &mut lp };
                vec[i] -= 2.0 * step;
                let f_minus = naive(&mp, &lp, &noise, &functional);
                let fd = (f_plus - f_minus) / (2.0 * step);
                report.max_rel_err = report.max_rel_err.max(rel_err(fd, an));
                report.coords_checked += 1;
            }
        }
    }
    report
}

fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Probe a caller-supplied scalar function against a caller-supplied
/// analytic gradient at `theta`. Used for composite losses whose forward has
/// no ReLU kinks.
pub fn fd_vs_analytic(
    f: impl Fn(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    let mut max_err = 0.0f64;
    for i in 0..theta.len() {
        let mut t = theta.to_vec();
        t[i] += step;
        let fp = f(&t);
        t[i] -= 2.0 * step;
        let fm = f(&t);
        let fd = (fp - fm) / (2.0 * step);
        max_err = max_err.max(rel_err(fd, analytic[i]));
    }
    max_err
}

/// Deterministic stream helper so callers don't need to own a Seeder.
pub fn probe_stream(seed: u64, tag: &str) -> RngStream {
    Seeder::new(seed).stream(tag)
}

//! Minimal reverse-mode differentiation engine for small dense networks.
//!
//! The engine records a computation graph per forward pass ([`Tape`]), runs
//! one backward sweep to produce gradients for every reachable parameter,
//! and frees the graph afterwards. It is deliberately small: dense layers,
//! elementwise math, a handful of reductions, and the squashed-Gaussian
//! policy head are all that the training code needs.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). Production
//! training runs on [`Real`] (= `f32`); tests instantiate the same code at
//! `f64` where exact oracles need the headroom.

pub mod adam;
pub mod error;
pub mod fdcheck;
pub mod graph;
pub mod head;
pub mod mlp;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Error, Result};
pub use graph::{GraphParams, Gradients, Tape, Var};
pub use head::{gaussian_head_sample, gaussian_sample_plain, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{Activation, Mlp, MlpSpec, ParamStore};
pub use rng::{RngStream, Seeder};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Scalar type used by the production training stack.
pub type Real = f32;
/// Tensor at production precision.
pub type Tensor32 = Tensor<Real>;
/// Tape at production precision.
pub type Tape32 = Tape<Real>;
/// Parameter store at production precision.
pub type ParamStore32 = ParamStore<Real>;

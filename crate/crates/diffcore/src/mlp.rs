//! Multilayer perceptrons over named parameter stores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{linear_forward, GraphParams, Var};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Architecture of a dense network: hidden layers share one activation, the
/// output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec("zero input or output width".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidSpec("at least one hidden layer".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidSpec("zero hidden width".into()));
        }
        Ok(())
    }

    /// (in, out) of every dense layer including the output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Ordered, name-addressed parameter collection. Order is insertion order and
/// determines gradient/optimizer alignment and checkpoint layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        let name = name.into();
        debug_assert!(
            self.position(&name).is_none(),
            "duplicate parameter '{name}'"
        );
        self.entries.push((name, tensor));
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.position(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        match self.position(name) {
            Some(i) => Ok(&mut self.entries[i].1),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn entry(&self, i: usize) -> (&str, &Tensor<S>) {
        let (n, t) = &self.entries[i];
        (n.as_str(), t)
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.entries[i].1
    }

    /// self <- (1 - tau) * self + tau * other, entry by entry.
    pub fn lerp_from(&mut self, other: &ParamStore<S>, tau: S) {
        debug_assert_eq!(self.len(), other.len());
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            debug_assert_eq!(dst.0, src.0);
            for (d, &s) in dst.1.data_mut().iter_mut().zip(src.1.data()) {
                *d = (S::one() - tau) * *d + tau * s;
            }
        }
    }

    /// New store with entries self - lr * grads (grads aligned by order).
    pub fn stepped(&self, grads: &[Tensor<S>], lr: S) -> ParamStore<S> {
        debug_assert_eq!(self.len(), grads.len());
        let entries = self
            .entries
            .iter()
            .zip(grads)
            .map(|((n, t), g)| {
                let mut t = t.clone();
                t.add_scaled(g, -lr);
                (n.clone(), t)
            })
            .collect();
        ParamStore { entries }
    }

    /// FNV-1a over the parameter bytes; used to assert protocols do not
    /// mutate networks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.entries {
            for b in name.as_bytes() {
                h = (h ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3);
            }
            for v in t.data() {
                for b in v.to_f64_lossy().to_le_bytes() {
                    h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }
}

/// A dense network whose parameters live in a [`ParamStore`] under
/// `{prefix}.w{i}` / `{prefix}.b{i}`.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    prefix: String,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Mlp {
            spec,
            prefix: prefix.into(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn w_name(&self, i: usize) -> String {
        format!("{}.w{i}", self.prefix)
    }

    fn b_name(&self, i: usize) -> String {
        format!("{}.b{i}", self.prefix)
    }

    /// Insert freshly initialized parameters into `store`. Weights use
    /// He-uniform for relu and Xavier-uniform for tanh; biases start at zero.
    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut RngStream) {
        for (i, (fan_in, fan_out)) in self.spec.layer_dims().into_iter().enumerate() {
            let limit = match self.spec.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let data: Vec<S> = (0..fan_in * fan_out)
                .map(|_| S::c(rng.uniform(-limit, limit)))
                .collect();
            store.insert(
                self.w_name(i),
                Tensor::from_vec(&[fan_out, fan_in], data).unwrap(),
            );
            store.insert(self.b_name(i), Tensor::zeros(&[fan_out]));
        }
    }

    /// Recorded forward pass; `x` is [B, input_dim].
    pub fn forward<'t, S: Scalar>(
        &self,
        bind: &GraphParams<'t, S>,
        x: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let got = x.shape();
        let cols = if got.len() >= 2 { got[1] } else { got[0] };
        if cols != self.spec.input_dim {
            return Err(Error::shape(
                format!("mlp '{}' forward", self.prefix),
                format!("last dim {}", self.spec.input_dim),
                format!("{got:?}"),
            ));
        }
        let n_layers = self.spec.hidden.len() + 1;
        let mut h = x;
        for i in 0..n_layers {
            let w = bind.var(&self.w_name(i))?;
            let b = bind.var(&self.b_name(i))?;
            h = h.linear(w, b);
            if i + 1 < n_layers {
                h = match self.spec.activation {
                    Activation::Relu => h.relu(),
                    Activation::Tanh => h.tanh_(),
                };
            }
        }
        Ok(h)
    }

    /// Plain forward pass without graph recording; `x` is [B, input_dim].
    pub fn infer_batch<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape(
                format!("mlp '{}' infer", self.prefix),
                format!("last dim {}", self.spec.input_dim),
                format!("{:?}", x.shape()),
            ));
        }
        let n_layers = self.spec.hidden.len() + 1;
        let mut h = x.clone();
        for i in 0..n_layers {
            let w = store.get(&self.w_name(i))?;
            let b = store.get(&self.b_name(i))?;
            h = linear_forward(&h, w, b);
            if i + 1 < n_layers {
                h = match self.spec.activation {
                    Activation::Relu => h.map(|v| v.max(S::zero())),
                    Activation::Tanh => h.map(|v| v.tanh()),
                };
            }
        }
        Ok(h)
    }

    /// Single-sample inference convenience.
    pub fn infer_vec<S: Scalar>(&self, store: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
        let t = Tensor::from_vec(&[1, x.len()], x.to_vec())?;
        Ok(self.infer_batch(store, &t)?.into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tape;
    use crate::rng::Seeder;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(4, &[], 2, Activation::Relu).validate().is_err());
        assert!(MlpSpec::new(4, &[0], 2, Activation::Relu).validate().is_err());
        assert!(MlpSpec::new(0, &[8], 2, Activation::Relu).validate().is_err());
        assert!(MlpSpec::new(4, &[8, 8], 2, Activation::Relu).validate().is_ok());
    }

    #[test]
    fn zero_params_zero_output() {
        let mlp = Mlp::new("net", MlpSpec::new(3, &[4], 2, Activation::Relu)).unwrap();
        let mut store: ParamStore<f32> = ParamStore::new();
        for (i, (fi, fo)) in mlp.spec().layer_dims().into_iter().enumerate() {
            store.insert(format!("net.w{i}"), Tensor::zeros(&[fo, fi]));
            store.insert(format!("net.b{i}"), Tensor::zeros(&[fo]));
        }
        let out = mlp.infer_vec(&store, &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_applies_relu() {
        // W0 = I, W1 = I, biases zero: relu(x) passes through the hidden layer.
        let mlp = Mlp::new("net", MlpSpec::new(2, &[2], 2, Activation::Relu)).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        store.insert("net.w0", eye.clone());
        store.insert("net.b0", Tensor::zeros(&[2]));
        store.insert("net.w1", eye);
        store.insert("net.b1", Tensor::zeros(&[2]));
        let out = mlp.infer_vec(&store, &[-1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mlp = Mlp::new("net", MlpSpec::new(3, &[4], 1, Activation::Relu)).unwrap();
        let mut store: ParamStore<f32> = ParamStore::new();
        let mut rng = Seeder::new(0).stream("init");
        mlp.init(&mut store, &mut rng);
        assert!(mlp.infer_vec(&store, &[1.0, 2.0]).is_err());
        let tape = Tape::new();
        let bind = GraphParams::bind(&tape, &store);
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        assert!(mlp.forward(&bind, x).is_err());
    }

    #[test]
    fn recorded_and_plain_forward_agree() {
        let mlp = Mlp::new("net", MlpSpec::new(5, &[8, 8], 3, Activation::Tanh)).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = Seeder::new(42).stream("init");
        mlp.init(&mut store, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.7).collect();
        let plain = mlp.infer_vec(&store, &x).unwrap();
        let tape = Tape::new();
        let bind = GraphParams::bind(&tape, &store);
        let xv = tape.constant(Tensor::from_vec(&[1, 5], x).unwrap());
        let out = mlp.forward(&bind, xv).unwrap().value();
        for (a, b) in plain.iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

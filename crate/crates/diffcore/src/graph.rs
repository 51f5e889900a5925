//! Tape-recorded computation graph with one-shot backward.
//!
//! A [`Tape`] owns the nodes of a single forward pass. Values are computed
//! eagerly as ops are recorded; [`Tape::backward`] then sweeps the tape in
//! reverse and returns a gradient per node. The tape is confined to one
//! thread and dropped after the update that consumed it.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::mlp::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

enum Op<S> {
    Leaf,
    /// y = x · Wᵀ + b, with x [B,I], w [O,I], b [O].
    Linear { x: usize, w: usize, b: usize },
    Relu { x: usize },
    Tanh { x: usize },
    Exp { x: usize },
    Ln { x: usize },
    Softplus { x: usize },
    Sqrt { x: usize },
    Recip { x: usize },
    Neg { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// Elementwise minimum; gradient follows the smaller side (ties -> a).
    MinElem { a: usize, b: usize },
    AddScalar { x: usize },
    MulScalar { x: usize, c: f64 },
    SumAll { x: usize },
    MeanAll { x: usize },
    /// [B,D] -> [B,1] sums within each row.
    SumRows { x: usize },
    /// [N,D] -> [D] sums down the rows.
    SumAxis0 { x: usize },
    /// [D] -> [B,D] repeats a row vector.
    BroadcastRow { x: usize, rows: usize },
    ConcatCols { parts: Vec<usize> },
    SliceCols { x: usize, start: usize, end: usize },
    /// Elementwise Huber value with threshold kappa.
    Huber { x: usize, kappa: f64 },
    /// Asymmetric Huber-weighted pinball loss between predicted quantile
    /// atoms [B,M] and fixed target atoms [B,K]; scalar output.
    QuantileHuber {
        pred: usize,
        target: Tensor<S>,
        taus: Vec<S>,
        kappa: f64,
    },
}

struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    requires_grad: bool,
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss w.r.t. `var`, if the node required gradients and
    /// was reachable. Leaves that were never touched report `None`.
    pub fn wrt(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, S>) -> Option<Tensor<S>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<S>, value: Tensor<S>, requires_grad: bool) -> Var<'_, S> {
        debug_assert!(value.is_finite(), "non-finite values entered the graph");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&self, v: S) -> Var<'_, S> {
        self.constant(Tensor::scalar(v))
    }

    fn value_clone(&self, id: usize) -> Tensor<S> {
        self.nodes.borrow()[id].value.clone()
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, S>]) -> Var<'t, S> {
        assert!(!parts.is_empty());
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].value.rows();
        let total: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let t = &nodes[p.id].value;
                debug_assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        let value = Tensor::from_vec(&[rows, total], data).unwrap();
        self.push(
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            value,
            rg,
        )
    }

    /// Pinball/Huber loss between predicted atoms [B,M] (quantile fractions
    /// `taus`) and fixed targets [B,K], averaged over all (sample, pred,
    /// target) triples.
    pub fn quantile_huber<'t>(
        &'t self,
        pred: Var<'t, S>,
        target: &Tensor<S>,
        taus: &[S],
        kappa: f64,
    ) -> Var<'t, S> {
        let (loss, rg) = {
            let nodes = self.nodes.borrow();
            let p = &nodes[pred.id].value;
            assert_eq!(p.rows(), target.rows(), "quantile_huber batch mismatch");
            assert_eq!(p.cols(), taus.len(), "quantile_huber tau count");
            let k = S::c(kappa);
            let mut acc = S::zero();
            for b in 0..p.rows() {
                let pr = p.row(b);
                let tr = target.row(b);
                for (i, &z) in pr.iter().enumerate() {
                    let tau = taus[i];
                    for &y in tr {
                        let u = y - z;
                        let au = u.abs();
                        let huber = if au <= k {
                            S::c(0.5) * u * u
                        } else {
                            k * (au - S::c(0.5) * k)
                        };
                        let w = if u < S::zero() { S::one() - tau } else { tau };
                        acc += w * huber;
                    }
                }
            }
            let n = S::c((p.rows() * p.cols() * target.cols()) as f64);
            (acc / n, nodes[pred.id].requires_grad)
        };
        self.push(
            Op::QuantileHuber {
                pred: pred.id,
                target: target.clone(),
                taus: taus.to_vec(),
                kappa,
            },
            Tensor::scalar(loss),
            rg,
        )
    }

    /// Reverse sweep from a scalar loss. Returns a gradient per reachable
    /// differentiable node; parameters the loss never touched stay `None`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let ln = &nodes[loss.id];
        if ln.value.numel() != 1 {
            return Err(Error::NonScalarLoss(format!("{:?}", ln.value.shape())));
        }
        let lv = ln.value.item();
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss(lv.to_f64_lossy()));
        }

        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(S::one()));

        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            // Re-store: callers may still want this node's gradient.
            let out_val = &nodes[id].value;

            macro_rules! grad_buf {
                ($tid:expr) => {{
                    let shape = nodes[$tid].value.shape().to_vec();
                    grads[$tid].get_or_insert_with(|| Tensor::zeros(&shape))
                }};
            }

            match &nodes[id].op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let xv = &nodes[*x].value;
                    let wv = &nodes[*w].value;
                    let bsz = xv.rows();
                    let i_dim = xv.cols();
                    let o_dim = wv.rows();
                    if nodes[*x].requires_grad {
                        let gx = grad_buf!(*x);
                        // dX += dY · W
                        for bi in 0..bsz {
                            let dy = gy.row(bi);
                            let dst = &mut gx.data_mut()[bi * i_dim..(bi + 1) * i_dim];
                            for o in 0..o_dim {
                                let c = dy[o];
                                if c != S::zero() {
                                    axpy(dst, wv.row(o), c);
                                }
                            }
                        }
                    }
                    if nodes[*w].requires_grad {
                        let gw = grad_buf!(*w);
                        // dW += dYᵀ · X
                        for bi in 0..bsz {
                            let dy = gy.row(bi);
                            let xr = xv.row(bi);
                            for o in 0..o_dim {
                                let c = dy[o];
                                if c != S::zero() {
                                    let dst = &mut gw.data_mut()[o * i_dim..(o + 1) * i_dim];
                                    axpy(dst, xr, c);
                                }
                            }
                        }
                    }
                    if nodes[*b].requires_grad {
                        let gb = grad_buf!(*b);
                        for bi in 0..bsz {
                            let dy = gy.row(bi);
                            for (d, &g) in gb.data_mut().iter_mut().zip(dy) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Relu { x } => accumulate_unary(&nodes, &mut grads, *x, &gy, |i, _| {
                    if out_val.data()[i] > S::zero() {
                        S::one()
                    } else {
                        S::zero()
                    }
                }),
                Op::Tanh { x } => accumulate_unary(&nodes, &mut grads, *x, &gy, |i, _| {
                    let y = out_val.data()[i];
                    S::one() - y * y
                }),
                Op::Exp { x } => {
                    accumulate_unary(&nodes, &mut grads, *x, &gy, |i, _| out_val.data()[i])
                }
                Op::Ln { x } => {
                    accumulate_unary(&nodes, &mut grads, *x, &gy, |i, xv| {
                        let _ = i;
                        S::one() / xv
                    })
                }
                Op::Softplus { x } => accumulate_unary(&nodes, &mut grads, *x, &gy, |i, _| {
                    // sigmoid(x) = 1 - exp(-softplus(x))
                    S::one() - (-out_val.data()[i]).exp()
                }),
                Op::Sqrt { x } => accumulate_unary(&nodes, &mut grads, *x, &gy, |i, _| {
                    S::c(0.5) / out_val.data()[i]
                }),
                Op::Recip { x } => accumulate_unary(&nodes, &mut grads, *x, &gy, |i, _| {
                    let y = out_val.data()[i];
                    -(y * y)
                }),
                Op::Neg { x } => {
                    accumulate_unary(&nodes, &mut grads, *x, &gy, |_, _| -S::one())
                }
                Op::Clamp { x, lo, hi } => {
                    let lo = S::c(*lo);
                    let hi = S::c(*hi);
                    accumulate_unary(&nodes, &mut grads, *x, &gy, |_, xv| {
                        if xv >= lo && xv <= hi {
                            S::one()
                        } else {
                            S::zero()
                        }
                    })
                }
                Op::Add { a, b } => {
                    for t in [a, b] {
                        if nodes[*t].requires_grad {
                            grad_buf!(*t).add_scaled(&gy, S::one());
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if nodes[*a].requires_grad {
                        grad_buf!(*a).add_scaled(&gy, S::one());
                    }
                    if nodes[*b].requires_grad {
                        grad_buf!(*b).add_scaled(&gy, -S::one());
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[*a].requires_grad {
                        let bv = &nodes[*b].value;
                        let ga = grad_buf!(*a);
                        for ((d, &g), &o) in ga.data_mut().iter_mut().zip(gy.data()).zip(bv.data())
                        {
                            *d += g * o;
                        }
                    }
                    if nodes[*b].requires_grad {
                        let av = &nodes[*a].value;
                        let gb = grad_buf!(*b);
                        for ((d, &g), &o) in gb.data_mut().iter_mut().zip(gy.data()).zip(av.data())
                        {
                            *d += g * o;
                        }
                    }
                }
                Op::MinElem { a, b } => {
                    let av = nodes[*a].value.clone();
                    let bv = nodes[*b].value.clone();
                    if nodes[*a].requires_grad {
                        let ga = grad_buf!(*a);
                        for (i, (d, &g)) in ga.data_mut().iter_mut().zip(gy.data()).enumerate() {
                            if av.data()[i] <= bv.data()[i] {
                                *d += g;
                            }
                        }
                    }
                    if nodes[*b].requires_grad {
                        let gb = grad_buf!(*b);
                        for (i, (d, &g)) in gb.data_mut().iter_mut().zip(gy.data()).enumerate() {
                            if av.data()[i] > bv.data()[i] {
                                *d += g;
                            }
                        }
                    }
                }
                Op::AddScalar { x } => {
                    if nodes[*x].requires_grad {
                        grad_buf!(*x).add_scaled(&gy, S::one());
                    }
                }
                Op::MulScalar { x, c } => {
                    if nodes[*x].requires_grad {
                        grad_buf!(*x).add_scaled(&gy, S::c(*c));
                    }
                }
                Op::SumAll { x } => {
                    if nodes[*x].requires_grad {
                        let g = gy.item();
                        let gx = grad_buf!(*x);
                        for d in gx.data_mut() {
                            *d += g;
                        }
                    }
                }
                Op::MeanAll { x } => {
                    if nodes[*x].requires_grad {
                        let n = S::c(nodes[*x].value.numel() as f64);
                        let g = gy.item() / n;
                        let gx = grad_buf!(*x);
                        for d in gx.data_mut() {
                            *d += g;
                        }
                    }
                }
                Op::SumRows { x } => {
                    if nodes[*x].requires_grad {
                        let cols = nodes[*x].value.cols();
                        let gx = grad_buf!(*x);
                        for (r, &g) in gy.data().iter().enumerate() {
                            for d in &mut gx.data_mut()[r * cols..(r + 1) * cols] {
                                *d += g;
                            }
                        }
                    }
                }
                Op::SumAxis0 { x } => {
                    if nodes[*x].requires_grad {
                        let cols = nodes[*x].value.cols();
                        let rows = nodes[*x].value.rows();
                        let gx = grad_buf!(*x);
                        for r in 0..rows {
                            let dst = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                            for (d, &g) in dst.iter_mut().zip(gy.data()) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::BroadcastRow { x, rows } => {
                    if nodes[*x].requires_grad {
                        let cols = nodes[*x].value.numel();
                        let gx = grad_buf!(*x);
                        for r in 0..*rows {
                            let src = &gy.data()[r * cols..(r + 1) * cols];
                            for (d, &g) in gx.data_mut().iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let rows = out_val.rows();
                    let mut offset = 0usize;
                    for pid in parts {
                        let pc = nodes[*pid].value.cols();
                        if nodes[*pid].requires_grad {
                            let total = out_val.cols();
                            let gp = grad_buf!(*pid);
                            for r in 0..rows {
                                let src = &gy.data()[r * total + offset..r * total + offset + pc];
                                let dst = &mut gp.data_mut()[r * pc..(r + 1) * pc];
                                for (d, &g) in dst.iter_mut().zip(src) {
                                    *d += g;
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { x, start, end } => {
                    if nodes[*x].requires_grad {
                        let cols = nodes[*x].value.cols();
                        let width = end - start;
                        let rows = out_val.rows();
                        let gx = grad_buf!(*x);
                        for r in 0..rows {
                            let src = &gy.data()[r * width..(r + 1) * width];
                            let dst = &mut gx.data_mut()[r * cols + start..r * cols + end];
                            for (d, &g) in dst.iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Huber { x, kappa } => {
                    let k = S::c(*kappa);
                    accumulate_unary(&nodes, &mut grads, *x, &gy, |_, xv| {
                        xv.max(-k).min(k)
                    })
                }
                Op::QuantileHuber {
                    pred,
                    target,
                    taus,
                    kappa,
                } => {
                    if nodes[*pred].requires_grad {
                        let g = gy.item();
                        let pv = nodes[*pred].value.clone();
                        let k = S::c(*kappa);
                        let n = S::c((pv.rows() * pv.cols() * target.cols()) as f64);
                        let gp = grad_buf!(*pred);
                        for b in 0..pv.rows() {
                            let pr = pv.row(b);
                            let tr = target.row(b);
                            for (i, &z) in pr.iter().enumerate() {
                                let tau = taus[i];
                                let mut acc = S::zero();
                                for &y in tr {
                                    let u = y - z;
                                    let w = if u < S::zero() { S::one() - tau } else { tau };
                                    // d/dz huber(y - z) = -clamp(u, -k, k)
                                    acc -= w * u.max(-k).min(k);
                                }
                                gp.data_mut()[b * pv.cols() + i] += g * acc / n;
                            }
                        }
                    }
                }
            }
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }
}

#[inline]
fn axpy<S: Scalar>(dst: &mut [S], src: &[S], c: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn accumulate_unary<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Tensor<S>>],
    x: usize,
    gy: &Tensor<S>,
    local: impl Fn(usize, S) -> S,
) {
    if !nodes[x].requires_grad {
        return;
    }
    let xv = &nodes[x].value;
    let shape = xv.shape().to_vec();
    let gx = grads[x].get_or_insert_with(|| Tensor::zeros(&shape));
    for (i, (d, &g)) in gx.data_mut().iter_mut().zip(gy.data()).enumerate() {
        *d += g * local(i, xv.data()[i]);
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<S> {
        self.tape.value_clone(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    /// Scalar payload of a 1-element node.
    pub fn item(&self) -> S {
        let nodes = self.tape.nodes.borrow();
        nodes[self.id].value.item()
    }

    fn unary(self, f: impl Fn(S) -> S, op: impl FnOnce(usize) -> Op<S>) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.map(&f)
        };
        let rg = self.tape.rg(self.id);
        self.tape.push(op(self.id), value, rg)
    }

    fn binary(
        self,
        other: Var<'t, S>,
        f: impl Fn(S, S) -> S,
        op: impl FnOnce(usize, usize) -> Op<S>,
    ) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_vec(a.shape(), data).unwrap()
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape.push(op(self.id, other.id), value, rg)
    }

    /// Dense layer x · Wᵀ + b.
    pub fn linear(self, w: Var<'t, S>, b: Var<'t, S>) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let xv = &nodes[self.id].value;
            let wv = &nodes[w.id].value;
            let bv = &nodes[b.id].value;
            linear_forward(xv, wv, bv)
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(w.id) || self.tape.rg(b.id);
        self.tape.push(
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            value,
            rg,
        )
    }

    pub fn relu(self) -> Var<'t, S> {
        self.unary(|v| v.max(S::zero()), |x| Op::Relu { x })
    }

    pub fn tanh_(self) -> Var<'t, S> {
        self.unary(|v| v.tanh(), |x| Op::Tanh { x })
    }

    pub fn exp_(self) -> Var<'t, S> {
        self.unary(|v| v.exp(), |x| Op::Exp { x })
    }

    pub fn ln_(self) -> Var<'t, S> {
        self.unary(|v| v.ln(), |x| Op::Ln { x })
    }

    pub fn softplus(self) -> Var<'t, S> {
        self.unary(
            |v| v.max(S::zero()) + (-v.abs()).exp().ln_1p(),
            |x| Op::Softplus { x },
        )
    }

    pub fn sqrt_(self) -> Var<'t, S> {
        self.unary(|v| v.sqrt(), |x| Op::Sqrt { x })
    }

    pub fn recip_(self) -> Var<'t, S> {
        self.unary(|v| S::one() / v, |x| Op::Recip { x })
    }

    pub fn neg_(self) -> Var<'t, S> {
        self.unary(|v| -v, |x| Op::Neg { x })
    }

    pub fn clamp_(self, lo: f64, hi: f64) -> Var<'t, S> {
        let (l, h) = (S::c(lo), S::c(hi));
        self.unary(|v| v.max(l).min(h), |x| Op::Clamp { x, lo, hi })
    }

    pub fn add(self, o: Var<'t, S>) -> Var<'t, S> {
        self.binary(o, |a, b| a + b, |a, b| Op::Add { a, b })
    }

    pub fn sub(self, o: Var<'t, S>) -> Var<'t, S> {
        self.binary(o, |a, b| a - b, |a, b| Op::Sub { a, b })
    }

    pub fn mul(self, o: Var<'t, S>) -> Var<'t, S> {
        self.binary(o, |a, b| a * b, |a, b| Op::Mul { a, b })
    }

    pub fn min_elem(self, o: Var<'t, S>) -> Var<'t, S> {
        self.binary(o, |a, b| a.min(b), |a, b| Op::MinElem { a, b })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, S> {
        let cv = S::c(c);
        self.unary(|v| v + cv, |x| Op::AddScalar { x })
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t, S> {
        let cv = S::c(c);
        self.unary(|v| v * cv, |x| Op::MulScalar { x, c })
    }

    pub fn square(self) -> Var<'t, S> {
        self.mul(self)
    }

    pub fn sum_all(self) -> Var<'t, S> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.data().iter().copied().sum::<S>()
        };
        let rg = self.tape.rg(self.id);
        self.tape.push(Op::SumAll { x: self.id }, Tensor::scalar(v), rg)
    }

    pub fn mean_all(self) -> Var<'t, S> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            t.data().iter().copied().sum::<S>() / S::c(t.numel() as f64)
        };
        let rg = self.tape.rg(self.id);
        self.tape
            .push(Op::MeanAll { x: self.id }, Tensor::scalar(v), rg)
    }

    pub fn sum_rows(self) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            let data: Vec<S> = (0..t.rows())
                .map(|r| t.row(r).iter().copied().sum::<S>())
                .collect();
            Tensor::from_vec(&[t.rows(), 1], data).unwrap()
        };
        let rg = self.tape.rg(self.id);
        self.tape.push(Op::SumRows { x: self.id }, value, rg)
    }

    pub fn sum_axis0(self) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            let cols = t.cols();
            let mut data = vec![S::zero(); cols];
            for r in 0..t.rows() {
                for (d, &v) in data.iter_mut().zip(t.row(r)) {
                    *d += v;
                }
            }
            Tensor::from_vec(&[cols], data).unwrap()
        };
        let rg = self.tape.rg(self.id);
        self.tape.push(Op::SumAxis0 { x: self.id }, value, rg)
    }

    pub fn broadcast_row(self, rows: usize) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            debug_assert_eq!(t.rows(), 1, "broadcast_row expects a row vector");
            let cols = t.numel();
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(&[rows, cols], data).unwrap()
        };
        let rg = self.tape.rg(self.id);
        self.tape
            .push(Op::BroadcastRow { x: self.id, rows }, value, rg)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t, S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            assert!(start < end && end <= t.cols(), "slice_cols out of range");
            let mut data = Vec::with_capacity(t.rows() * (end - start));
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::from_vec(&[t.rows(), end - start], data).unwrap()
        };
        let rg = self.tape.rg(self.id);
        self.tape.push(
            Op::SliceCols {
                x: self.id,
                start,
                end,
            },
            value,
            rg,
        )
    }

    pub fn huber(self, kappa: f64) -> Var<'t, S> {
        let k = S::c(kappa);
        self.unary(
            |v| {
                let a = v.abs();
                if a <= k {
                    S::c(0.5) * v * v
                } else {
                    k * (a - S::c(0.5) * k)
                }
            },
            |x| Op::Huber { x, kappa },
        )
    }
}

/// y = x · Wᵀ + b with x [B,I], w [O,I], b [O]. Shared by the tape and the
/// no-graph inference path.
pub fn linear_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let bsz = x.rows();
    let i_dim = x.cols();
    let o_dim = w.rows();
    debug_assert_eq!(w.cols(), i_dim, "linear: weight/input width mismatch");
    debug_assert_eq!(b.numel(), o_dim, "linear: bias width mismatch");
    let mut out = vec![S::zero(); bsz * o_dim];
    for bi in 0..bsz {
        let xr = x.row(bi);
        let dst = &mut out[bi * o_dim..(bi + 1) * o_dim];
        for (o, d) in dst.iter_mut().enumerate() {
            *d = b.data()[o] + dot(xr, w.row(o));
        }
    }
    Tensor::from_vec(&[bsz, o_dim], out).unwrap()
}

/// Unrolled dot product; fixed association order keeps runs bit-reproducible.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (ar, br) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + ar[l] * br[l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Bind every parameter of a store as differentiable leaves on a tape, in
/// store order, so gradients can be collected back aligned with the store.
pub struct GraphParams<'t, S: Scalar> {
    vars: Vec<Var<'t, S>>,
    names: Vec<String>,
}

impl<'t, S: Scalar> GraphParams<'t, S> {
    pub fn bind(tape: &'t Tape<S>, store: &ParamStore<S>) -> Self {
        let mut vars = Vec::with_capacity(store.len());
        let mut names = Vec::with_capacity(store.len());
        for (name, tensor) in store.iter() {
            vars.push(tape.leaf(tensor.clone()));
            names.push(name.to_string());
        }
        GraphParams { vars, names }
    }

    /// Bind as constants: values participate in the graph but receive no
    /// gradient (used e.g. for critics inside an actor loss).
    pub fn bind_frozen(tape: &'t Tape<S>, store: &ParamStore<S>) -> Self {
        let mut vars = Vec::with_capacity(store.len());
        let mut names = Vec::with_capacity(store.len());
        for (name, tensor) in store.iter() {
            vars.push(tape.constant(tensor.clone()));
            names.push(name.to_string());
        }
        GraphParams { vars, names }
    }

    pub fn var(&self, name: &str) -> Result<Var<'t, S>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Gradients aligned with the store order; zeros where the loss did not
    /// reach a parameter.
    pub fn collect(&self, grads: &mut Gradients<S>, store: &ParamStore<S>) -> Vec<Tensor<S>> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(store.entry(i).1.shape()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn linear_map_gradient() {
        // loss = sum(w · x) with x = [1, 2] -> dloss/dw = [1, 2]
        let tape = Tape::new();
        let w = tape.leaf(t1(&[0.3, -0.7]));
        let x = tape.constant(t1(&[1.0, 2.0]));
        let loss = w.mul(x).sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn square_gradient() {
        // loss = (w - 3)^2 at w = 5 -> gradient 4
        let tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(5.0f64));
        let loss = w.add_scalar(-3.0).square().sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().item(), 4.0);
    }

    #[test]
    fn reuse_accumulates() {
        // loss = w + w -> gradient 2
        let tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(1.5f64));
        let loss = w.add(w).sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().item(), 2.0);
    }

    #[test]
    fn unreachable_parameter_gets_zero_via_collect() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        store.insert("used", Tensor::scalar(2.0f64));
        store.insert("unused", Tensor::scalar(9.0f64));
        let bind = GraphParams::bind(&tape, &store);
        let loss = bind.var("used").unwrap().square().sum_all();
        let mut grads = tape.backward(loss).unwrap();
        let collected = bind.collect(&mut grads, &store);
        assert_eq!(collected[0].item(), 4.0);
        assert_eq!(collected[1].item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let w = tape.leaf(t1(&[1.0, 2.0]));
        assert!(matches!(
            tape.backward(w),
            Err(Error::NonScalarLoss(_))
        ));
    }

    #[test]
    fn min_elem_routes_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(t1(&[1.0, 5.0]));
        let b = tape.leaf(t1(&[2.0, 3.0]));
        let loss = a.min_elem(b).sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[2, 1], vec![5.0f64, 6.0]).unwrap());
        let cat = tape.concat_cols(&[a, b]);
        assert_eq!(cat.value().data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let right = cat.slice_cols(2, 3);
        let loss = right.sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[0.0; 4]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn broadcast_row_sums_gradient() {
        let tape = Tape::new();
        let v = tape.leaf(t1(&[1.0, 2.0]));
        let loss = v.broadcast_row(3).sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(v).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn quantile_huber_hand_value() {
        // Single pred atom 1 (tau = 0.5), single target 0, kappa 1:
        // u = -1, weight |0.5 - 1| = 0.5, huber(1) = 0.5 -> loss 0.25.
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::from_vec(&[1, 1], vec![1.0f64]).unwrap());
        let target = Tensor::from_vec(&[1, 1], vec![0.0f64]).unwrap();
        let loss = tape.quantile_huber(pred, &target, &[0.5], 1.0);
        assert!((loss.item() - 0.25).abs() < 1e-12);
        // Gradient: -w * clamp(u) / n = -0.5 * (-1) = 0.5
        let grads = tape.backward(loss).unwrap();
        assert!((grads.wrt(pred).unwrap().item() - 0.5).abs() < 1e-12);
    }
}

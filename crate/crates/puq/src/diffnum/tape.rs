//! Define-by-run tape with reverse-mode accumulation.
//!
//! Ops append nodes eagerly; `backward` walks the tape in reverse (tape order
//! is already topological) and accumulates vector-Jacobian products into every
//! `requires_grad` node. Domain-specific linear operators (the data
//! consistency layer) plug in through [`TapeOp`].

use super::ops;
use super::real::Real;
use super::rng::RngStream;
use super::tensor::{shape_err, DiffError, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Single-input custom operation (used for the data-consistency layer).
///
/// `backward` receives the upstream cotangent plus the saved input/output
/// values and must return the input cotangent.
pub trait TapeOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, DiffError>;
    fn backward(&self, gout: &Tensor<T>, x: &Tensor<T>, out: &Tensor<T>) -> Tensor<T>;
}

enum Op<T: Real> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    /// `scale` holds 0 or 1/(1-p) per element; the same mask drives backward.
    Dropout { x: NodeId, scale: Vec<T> },
    Add { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Clamp { x: NodeId, lo: T, hi: T },
    SliceChannels { x: NodeId, start: usize, len: usize },
    AvgChannelPairs { x: NodeId },
    MseLoss { pred: NodeId, target: NodeId },
    GaussianNllLoss { pred: NodeId, logvar: NodeId, target: NodeId },
    Custom { x: NodeId, op: Box<dyn TapeOp<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires: bool,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, requires: bool, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf with gradient tracking (a trainable parameter).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf without gradient tracking (an input or target).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by `backward`, if any reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient as a tensor; zeros when the node is disconnected from the loss.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor<T> {
        let node = &self.nodes[id.0];
        match &node.grad {
            Some(g) => Tensor::from_vec(node.value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let out = ops::conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        )?;
        let req = self.requires(&[x, w, b]);
        Ok(self.push(out, req, Op::Conv2d { x, w, b }))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let out = ops::linear_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        )?;
        let req = self.requires(&[x, w, b]);
        Ok(self.push(out, req, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu_forward(&self.nodes[x.0].value);
        let req = self.requires(&[x]);
        self.push(out, req, Op::Relu { x })
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// 1/(1-p). Identity when inactive or `p == 0`.
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        rng: &mut RngStream,
        active: bool,
    ) -> Result<NodeId, DiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::InvalidProbability(p));
        }
        let xv = &self.nodes[x.0].value;
        if !active || p == 0.0 {
            let out = xv.clone();
            let req = self.requires(&[x]);
            let scale = vec![T::one(); out.len()];
            return Ok(self.push(out, req, Op::Dropout { x, scale }));
        }
        let keep = T::of_f64(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..xv.len())
            .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
            .collect();
        let mut out = xv.clone();
        for (o, &s) in out.data_mut().iter_mut().zip(&scale) {
            *o = *o * s;
        }
        let req = self.requires(&[x]);
        Ok(self.push(out, req, Op::Dropout { x, scale }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(bv.data()) {
            *o = *o + v;
        }
        let req = self.requires(&[a, b]);
        Ok(self.push(out, req, Op::Add { a, b }))
    }

    /// Elementwise clamp to `[lo, hi]`; the subgradient outside the open
    /// interval is 0.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let out = self.nodes[x.0]
            .value
            .map(|v| if v < lo { lo } else if v > hi { hi } else { v });
        let req = self.requires(&[x]);
        self.push(out, req, Op::Clamp { x, lo, hi })
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &v in self.nodes[x.0].value.data() {
            acc = acc + v;
        }
        let req = self.requires(&[x]);
        self.push(Tensor::scalar(acc), req, Op::Sum { x })
    }

    /// Channel sub-block `[start, start+len)` of a `[B, C, H, W]` tensor.
    pub fn slice_channels(
        &mut self,
        x: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, DiffError> {
        let xv = &self.nodes[x.0].value;
        let s = xv.shape();
        if s.len() != 4 || start + len > s[1] {
            return Err(shape_err(
                "slice_channels",
                format!("[B, >= {}, H, W]", start + len),
                s,
            ));
        }
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let mut out = Tensor::zeros(&[b, len, s[2], s[3]]);
        for bi in 0..b {
            let src = &xv.data()[(bi * c + start) * hw..(bi * c + start + len) * hw];
            out.data_mut()[bi * len * hw..(bi + 1) * len * hw].copy_from_slice(src);
        }
        let req = self.requires(&[x]);
        Ok(self.push(out, req, Op::SliceChannels { x, start, len }))
    }

    /// Average channel pairs `(p, P+p)` of a `[B, 2P, H, W]` tensor down to
    /// `[B, P, H, W]`.
    pub fn avg_channel_pairs(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let xv = &self.nodes[x.0].value;
        let s = xv.shape();
        if s.len() != 4 || s[1] % 2 != 0 {
            return Err(shape_err("avg_channel_pairs", "[B, 2P, H, W]", s));
        }
        let (b, c2, hw) = (s[0], s[1], s[2] * s[3]);
        let p = c2 / 2;
        let half = T::of_f64(0.5);
        let mut out = Tensor::zeros(&[b, p, s[2], s[3]]);
        for bi in 0..b {
            for pi in 0..p {
                let re = &xv.data()[(bi * c2 + pi) * hw..(bi * c2 + pi + 1) * hw];
                let im = &xv.data()[(bi * c2 + p + pi) * hw..(bi * c2 + p + pi + 1) * hw];
                let dst = &mut out.data_mut()[(bi * p + pi) * hw..(bi * p + pi + 1) * hw];
                for ((d, &a), &b2) in dst.iter_mut().zip(re).zip(im) {
                    *d = (a + b2) * half;
                }
            }
        }
        let req = self.requires(&[x]);
        Ok(self.push(out, req, Op::AvgChannelPairs { x }))
    }

    /// Mean of squared elementwise differences.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, DiffError> {
        let (pv, tv) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        if pv.shape() != tv.shape() {
            return Err(shape_err("mse_loss", pv.shape(), tv.shape()));
        }
        let n = T::of_f64(pv.len() as f64);
        let mut acc = T::zero();
        for (&p, &t) in pv.data().iter().zip(tv.data()) {
            let d = p - t;
            acc = acc + d * d;
        }
        let loss = Tensor::scalar(acc / n);
        let req = self.requires(&[pred, target]);
        Ok(self.push(loss, req, Op::MseLoss { pred, target }))
    }

    /// Heteroscedastic Gaussian negative log-likelihood, averaged over the
    /// prediction elements: `0.5 * exp(-s) * (x - t)^2 + 0.5 * s`.
    ///
    /// `pred` and `target` are `[B, 2P, H, W]`; `logvar` is `[B, P, H, W]`
    /// and channel `c` of the prediction pairs with phase `c mod P`.
    pub fn gaussian_nll_loss(
        &mut self,
        pred: NodeId,
        logvar: NodeId,
        target: NodeId,
    ) -> Result<NodeId, DiffError> {
        let (pv, sv, tv) = (
            &self.nodes[pred.0].value,
            &self.nodes[logvar.0].value,
            &self.nodes[target.0].value,
        );
        if pv.shape() != tv.shape() {
            return Err(shape_err("gaussian_nll pred/target", pv.shape(), tv.shape()));
        }
        let ps = pv.shape();
        let ss = sv.shape();
        if ps.len() != 4 || ss.len() != 4 || ps[1] != 2 * ss[1] || ps[0] != ss[0] || ps[2..] != ss[2..]
        {
            return Err(shape_err(
                "gaussian_nll logvar",
                "[B, P, H, W] matching pred [B, 2P, H, W]",
                ss,
            ));
        }
        let (b, c2, hw) = (ps[0], ps[1], ps[2] * ps[3]);
        let p = c2 / 2;
        let half = T::of_f64(0.5);
        let mut acc = T::zero();
        for bi in 0..b {
            for ci in 0..c2 {
                let phase = ci % p;
                let xs = &pv.data()[(bi * c2 + ci) * hw..(bi * c2 + ci + 1) * hw];
                let ts = &tv.data()[(bi * c2 + ci) * hw..(bi * c2 + ci + 1) * hw];
                let ls = &sv.data()[(bi * p + phase) * hw..(bi * p + phase + 1) * hw];
                for ((&x, &t), &s) in xs.iter().zip(ts).zip(ls) {
                    let d = x - t;
                    acc = acc + half * ((-s).exp() * d * d + s);
                }
            }
        }
        let n = T::of_f64(pv.len() as f64);
        let loss = Tensor::scalar(acc / n);
        let req = self.requires(&[pred, logvar, target]);
        Ok(self.push(loss, req, Op::GaussianNllLoss { pred, logvar, target }))
    }

    /// Append a custom single-input operation.
    pub fn custom(&mut self, x: NodeId, op: Box<dyn TapeOp<T>>) -> Result<NodeId, DiffError> {
        let out = op.forward(&self.nodes[x.0].value)?;
        let req = self.requires(&[x]);
        Ok(self.push(out, req, Op::Custom { x, op }))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), DiffError> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires || node.grad.is_none() {
                continue;
            }
            let gout = Tensor::from_vec(node.value.shape(), node.grad.clone().expect("grad"))
                .expect("grad shape");
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(&before[x.0].value, &before[w.0].value, &gout);
                    accumulate(before, *x, dx.data());
                    accumulate(before, *w, dw.data());
                    accumulate(before, *b, db.data());
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        ops::linear_backward(&before[x.0].value, &before[w.0].value, &gout);
                    accumulate(before, *x, dx.data());
                    accumulate(before, *w, dw.data());
                    accumulate(before, *b, db.data());
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(&node.value, &gout);
                    accumulate(before, *x, dx.data());
                }
                Op::Dropout { x, scale } => {
                    let mut dx = gout.clone();
                    for (g, &s) in dx.data_mut().iter_mut().zip(scale) {
                        *g = *g * s;
                    }
                    accumulate(before, *x, dx.data());
                }
                Op::Add { a, b } => {
                    accumulate(before, *a, gout.data());
                    accumulate(before, *b, gout.data());
                }
                Op::Sum { x } => {
                    let g = gout.item();
                    let dx = vec![g; before[x.0].value.len()];
                    accumulate(before, *x, &dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let dx: Vec<T> = before[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&v, &g)| if v > *lo && v < *hi { g } else { T::zero() })
                        .collect();
                    accumulate(before, *x, &dx);
                }
                Op::SliceChannels { x, start, len } => {
                    let xs = before[x.0].value.shape().to_vec();
                    let (bn, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut dx = vec![T::zero(); bn * c * hw];
                    for bi in 0..bn {
                        let dst = &mut dx[(bi * c + start) * hw..(bi * c + start + len) * hw];
                        dst.copy_from_slice(&gout.data()[bi * len * hw..(bi + 1) * len * hw]);
                    }
                    accumulate(before, *x, &dx);
                }
                Op::AvgChannelPairs { x } => {
                    let xs = before[x.0].value.shape().to_vec();
                    let (bn, c2, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let p = c2 / 2;
                    let half = T::of_f64(0.5);
                    let mut dx = vec![T::zero(); bn * c2 * hw];
                    for bi in 0..bn {
                        for pi in 0..p {
                            let g = &gout.data()[(bi * p + pi) * hw..(bi * p + pi + 1) * hw];
                            for (j, &gv) in g.iter().enumerate() {
                                dx[(bi * c2 + pi) * hw + j] = gv * half;
                                dx[(bi * c2 + p + pi) * hw + j] = gv * half;
                            }
                        }
                    }
                    accumulate(before, *x, &dx);
                }
                Op::MseLoss { pred, target } => {
                    let g = gout.item();
                    let pv = &before[pred.0].value;
                    let tv = &before[target.0].value;
                    let scale = g * T::of_f64(2.0 / pv.len() as f64);
                    let dp: Vec<T> = pv
                        .data()
                        .iter()
                        .zip(tv.data())
                        .map(|(&p, &t)| (p - t) * scale)
                        .collect();
                    if before[target.0].requires {
                        let dt: Vec<T> = dp.iter().map(|&v| T::zero() - v).collect();
                        accumulate(before, *target, &dt);
                    }
                    accumulate(before, *pred, &dp);
                }
                Op::GaussianNllLoss { pred, logvar, target } => {
                    let g = gout.item();
                    let pv = &before[pred.0].value;
                    let sv = &before[logvar.0].value;
                    let tv = &before[target.0].value;
                    let ps = pv.shape();
                    let (bn, c2, hw) = (ps[0], ps[1], ps[2] * ps[3]);
                    let p = c2 / 2;
                    let inv_n = T::of_f64(1.0 / pv.len() as f64);
                    let half = T::of_f64(0.5);
                    let mut dp = vec![T::zero(); pv.len()];
                    let mut ds = vec![T::zero(); sv.len()];
                    for bi in 0..bn {
                        for ci in 0..c2 {
                            let phase = ci % p;
                            for j in 0..hw {
                                let xi = (bi * c2 + ci) * hw + j;
                                let si = (bi * p + phase) * hw + j;
                                let d = pv.data()[xi] - tv.data()[xi];
                                let es = (T::zero() - sv.data()[si]).exp();
                                dp[xi] = g * es * d * inv_n;
                                ds[si] = ds[si] + g * half * (T::one() - es * d * d) * inv_n;
                            }
                        }
                    }
                    accumulate(before, *pred, &dp);
                    accumulate(before, *logvar, &ds);
                }
                Op::Custom { x, op } => {
                    let dx = op.backward(&gout, &before[x.0].value, &node.value);
                    accumulate(before, *x, dx.data());
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(nodes: &mut [Node<T>], id: NodeId, contrib: &[T]) {
    let node = &mut nodes[id.0];
    if !node.requires {
        return;
    }
    let grad = node
        .grad
        .get_or_insert_with(|| vec![T::zero(); node.value.len()]);
    debug_assert_eq!(grad.len(), contrib.len());
    for (g, &c) in grad.iter_mut().zip(contrib) {
        *g = *g + c;
    }
}

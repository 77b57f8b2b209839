//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value. Nodes are only
//! ever appended, so creation order is a topological order of the forward
//! pass and [`Tape::backward`] walks it in reverse.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::scalar::Scalar;
use crate::tensor::{numel, shape_str, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive recorded on the tape together with what its backward rule needs.
#[derive(Clone, Debug)]
pub enum OpKind<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Tanh(Var),
    Relu(Var),
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    Softmax { input: Var, axis: usize },
    LayerNorm { input: Var, inv_std: Vec<S> },
    Conv2d { x: Var, k: Var, bias: Option<Var>, geom: ConvGeom },
    Mask { input: Var, mask: Vec<S> },
    Wing { pred: Var, target: Var, width: S, curvature: S },
    Mae(Var, Var),
    Mse(Var, Var),
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: OpKind<S>,
    needs_grad: bool,
}

/// A single-threaded recording of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<S = f64> {
    nodes: Vec<Node<S>>,
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {} and {} differ",
            shape_str(a.shape()),
            shape_str(b.shape())
        )));
    }
    Ok(())
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: OpKind<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. It receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let rg = t.requires_grad();
        self.push(t, OpKind::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t.detached(), OpKind::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &OpKind<S> {
        &self.nodes[v.0].op
    }

    /// Accumulated gradient of a leaf, if any.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears all accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn out(&mut self, shape: Vec<usize>, data: Vec<S>, op: OpKind<S>, ng: bool) -> Var {
        let t = Tensor::new(shape, data).expect("kernel output matches its shape");
        self.push(t, op, ng)
    }

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: OpKind<S>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let shape = kernels::broadcast_shape(&sa, &sb)?;
        let st_a = kernels::broadcast_strides(&sa, &shape);
        let st_b = kernels::broadcast_strides(&sb, &shape);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![S::zero(); numel(&shape)];
        kernels::for_each_broadcast(&shape, &st_a, &st_b, |o, ia, ib| out[o] = f(da[ia], db[ib]));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.out(shape, out, op, ng))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, |x, y| x + y, OpKind::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, |x, y| x - y, OpKind::Sub(a, b))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, |x, y| x * y, OpKind::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let t = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(t, OpKind::Scale(a, s), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.tanh());
        let ng = self.ng(a);
        self.push(t, OpKind::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        let ng = self.ng(a);
        self.push(t, OpKind::Relu(a), ng)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!(
                "matmul: incompatible {} and {}",
                shape_str(sa),
                shape_str(sb)
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.out(vec![m, n], c, OpKind::Matmul { a, b, m, k, n }, ng))
    }

    /// Batched `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim(format!(
                "bmm: incompatible {} and {}",
                shape_str(sa),
                shape_str(sb)
            )));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut c = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            c.extend(kernels::matmul(&da[i * m * k..][..m * k], &db[i * k * n..][..k * n], m, k, n));
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.out(vec![batch, m, n], c, OpKind::Bmm { a, b, batch, m, k, n }, ng))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = axes.to_vec();
        seen.sort_unstable();
        if seen != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::dim(format!("permute: {axes:?} is not a permutation of rank {}", shape.len())));
        }
        let (data, out_shape) = kernels::permute(self.value(a).data(), &shape, axes);
        let ng = self.ng(a);
        Ok(self.out(out_shape, data, OpKind::Permute(a, axes.to_vec()), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(t, OpKind::Reshape(a), ng))
    }

    /// Reshape to one dimension.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.reshape(a, &[n])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let mut shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for rank {}", shape.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == shape.len()
                && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(format!(
                    "concat: {} incompatible with {} on axis {axis}",
                    shape_str(s),
                    shape_str(&shape)
                )));
            }
            total += s[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = kernels::axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..][..chunk]);
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.out(shape, data, OpKind::Concat { inputs: inputs.to_vec(), axis }, ng))
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!(
                "narrow {start}..{} on axis {axis} of {}",
                start + len,
                shape_str(&shape)
            )));
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ng = self.ng(a);
        Ok(self.out(out_shape, data, OpKind::Narrow { input: a, axis, start }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<S>();
        let ng = self.ng(a);
        self.out(vec![1], vec![s], OpKind::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<S>() / S::of(t.len() as f64);
        let ng = self.ng(a);
        self.out(vec![1], vec![s], OpKind::Mean(a), ng)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for rank {}", shape.len())));
        }
        let y = kernels::softmax(self.value(a).data(), &shape, axis);
        let ng = self.ng(a);
        Ok(self.out(shape, y, OpKind::Softmax { input: a, axis }, ng))
    }

    /// Zero-mean unit-variance normalization over the last axis.
    pub fn layer_norm(&mut self, a: Var, eps: S) -> Var {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().expect("tensors have rank >= 1");
        let (y, inv_std) = kernels::layer_norm(self.value(a).data(), d, eps);
        let ng = self.ng(a);
        self.out(shape, y, OpKind::LayerNorm { input: a, inv_std }, ng)
    }

    /// 2D cross-correlation of `[H, W, Cin]` with `[Kh, Kw, Cin / groups, Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: Padding,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(k), stride, padding, groups)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::dim(format!(
                    "conv2d bias {} for {} filters",
                    shape_str(self.shape(b)),
                    geom.cout
                )));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(k).data(),
            bias.map(|b| self.value(b).data()),
        );
        let ng = self.ng(x) || self.ng(k) || bias.is_some_and(|b| self.ng(b));
        Ok(self.out(geom.out_shape(), out, OpKind::Conv2d { x, k, bias, geom }, ng))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<S>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(Error::dim(format!("mask of length {} for {}", mask.len(), shape_str(t.shape()))));
        }
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(a);
        Ok(self.out(shape, data, OpKind::Mask { input: a, mask }, ng))
    }

    /// Wing loss summed over all coordinates and averaged over the leading
    /// (batch) axis.
    pub fn wing_loss(&mut self, pred: Var, target: Var, width: S, curvature: S) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape(p, t, "wing_loss")?;
        if !(width > S::zero() && curvature > S::zero()) {
            return Err(Error::Contract("wing loss needs w > 0 and eps > 0".into()));
        }
        let batch = S::of(p.shape()[0] as f64);
        let c = wing_constant(width, curvature);
        let total = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| wing_value(a - b, width, curvature, c))
            .sum::<S>();
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.out(vec![1], vec![total / batch], OpKind::Wing { pred, target, width, curvature }, ng))
    }

    /// Mean absolute error over all coordinates.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape(p, t, "mae")?;
        let v = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum::<S>()
            / S::of(p.len() as f64);
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.out(vec![1], vec![v], OpKind::Mae(pred, target), ng))
    }

    /// Mean squared error over all coordinates.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape(p, t, "mse")?;
        let v = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>()
            / S::of(p.len() as f64);
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.out(vec![1], vec![v], OpKind::Mse(pred, target), ng))
    }

    /// Populates gradients of every `requires_grad` leaf reachable from
    /// `loss`. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape(loss))
            )));
        }
        let mut adj: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, OpKind::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut adj)?;
        }

        for (i, slot) in adj.into_iter().enumerate() {
            if let Some(g) = slot {
                let node = &mut self.nodes[i];
                if matches!(node.op, OpKind::Leaf) {
                    node.value.accumulate_grad(&g)?;
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[S], adj: &mut [Option<Vec<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut send = |v: Var, grad: Vec<S>| {
            if !self.ng(v) {
                return;
            }
            match &mut adj[v.0] {
                Some(buf) => buf.iter_mut().zip(&grad).for_each(|(b, &x)| *b += x),
                slot @ None => *slot = Some(grad),
            }
        };
        match &node.op {
            OpKind::Leaf => {}
            OpKind::Add(a, b) | OpKind::Sub(a, b) | OpKind::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let out_shape = node.value.shape();
                let (ta, tb) = (self.value(a), self.value(b));
                let st_a = kernels::broadcast_strides(ta.shape(), out_shape);
                let st_b = kernels::broadcast_strides(tb.shape(), out_shape);
                let mut ga = vec![S::zero(); ta.len()];
                let mut gb = vec![S::zero(); tb.len()];
                let (da, db) = (ta.data(), tb.data());
                match &node.op {
                    OpKind::Add(..) => kernels::for_each_broadcast(out_shape, &st_a, &st_b, |o, ia, ib| {
                        ga[ia] += g[o];
                        gb[ib] += g[o];
                    }),
                    OpKind::Sub(..) => kernels::for_each_broadcast(out_shape, &st_a, &st_b, |o, ia, ib| {
                        ga[ia] += g[o];
                        gb[ib] -= g[o];
                    }),
                    _ => kernels::for_each_broadcast(out_shape, &st_a, &st_b, |o, ia, ib| {
                        ga[ia] += g[o] * db[ib];
                        gb[ib] += g[o] * da[ia];
                    }),
                }
                send(a, ga);
                send(b, gb);
            }
            OpKind::Scale(a, s) => send(*a, g.iter().map(|&v| v * *s).collect()),
            OpKind::Tanh(a) => send(
                *a,
                g.iter().zip(y).map(|(&gv, &yv)| gv * (S::one() - yv * yv)).collect(),
            ),
            OpKind::Relu(a) => {
                let x = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                        .collect(),
                )
            }
            OpKind::Matmul { a, b, m, k, n } => {
                let (ga, gb) = kernels::matmul_backward(
                    self.value(*a).data(),
                    self.value(*b).data(),
                    g,
                    *m,
                    *k,
                    *n,
                );
                send(*a, ga);
                send(*b, gb);
            }
            OpKind::Bmm { a, b, batch, m, k, n } => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = Vec::with_capacity(da.len());
                let mut gb = Vec::with_capacity(db.len());
                for bi in 0..*batch {
                    let (x, w) = kernels::matmul_backward(
                        &da[bi * m * k..][..m * k],
                        &db[bi * k * n..][..k * n],
                        &g[bi * m * n..][..m * n],
                        *m,
                        *k,
                        *n,
                    );
                    ga.extend(x);
                    gb.extend(w);
                }
                send(*a, ga);
                send(*b, gb);
            }
            OpKind::Permute(a, axes) => {
                let inv = kernels::inverse_axes(axes);
                let (ga, _) = kernels::permute(g, node.value.shape(), &inv);
                send(*a, ga);
            }
            OpKind::Reshape(a) => send(*a, g.to_vec()),
            OpKind::Concat { inputs, axis } => {
                let (outer, _, inner) = kernels::axis_split(node.value.shape(), *axis);
                let mut parts: Vec<Vec<S>> =
                    inputs.iter().map(|&v| Vec::with_capacity(self.value(v).len())).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, &v) in parts.iter_mut().zip(inputs) {
                        let chunk = self.shape(v)[*axis] * inner;
                        p.extend_from_slice(&g[off..off + chunk]);
                        off += chunk;
                    }
                }
                for (p, &v) in parts.into_iter().zip(inputs) {
                    send(v, p);
                }
            }
            OpKind::Narrow { input, axis, start } => {
                let in_shape = self.shape(*input);
                let (outer, n, inner) = kernels::axis_split(in_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut ga = vec![S::zero(); self.value(*input).len()];
                for o in 0..outer {
                    ga[(o * n + start) * inner..][..len * inner]
                        .copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                send(*input, ga);
            }
            OpKind::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            OpKind::Mean(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0] / S::of(n as f64); n]);
            }
            OpKind::Softmax { input, axis } => {
                send(*input, kernels::softmax_backward(y, g, node.value.shape(), *axis))
            }
            OpKind::LayerNorm { input, inv_std } => {
                let d = *node.value.shape().last().expect("rank >= 1");
                send(*input, kernels::layer_norm_backward(y, inv_std, g, d));
            }
            OpKind::Conv2d { x, k, bias, geom } => {
                let (gx, gk, gb) =
                    kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*k).data(), g);
                send(*x, gx);
                send(*k, gk);
                if let Some(b) = bias {
                    send(*b, gb);
                }
            }
            OpKind::Mask { input, mask } => {
                send(*input, g.iter().zip(mask).map(|(&a, &b)| a * b).collect())
            }
            OpKind::Wing { pred, target, width, curvature } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let batch = S::of(p.shape()[0] as f64);
                let gp: Vec<S> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| g[0] * wing_slope(a - b, *width, *curvature) / batch)
                    .collect();
                let gt = gp.iter().map(|&v| -v).collect();
                send(*pred, gp);
                send(*target, gt);
            }
            OpKind::Mae(pred, target) | OpKind::Mse(pred, target) => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let n = S::of(p.len() as f64);
                let squared = matches!(node.op, OpKind::Mse(..));
                let gp: Vec<S> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        let e = a - b;
                        let d = if squared { S::of(2.0) * e } else { sign(e) };
                        g[0] * d / n
                    })
                    .collect();
                let gt = gp.iter().map(|&v| -v).collect();
                send(*pred, gp);
                send(*target, gt);
            }
        }
        Ok(())
    }
}

fn sign<S: Scalar>(e: S) -> S {
    if e > S::zero() {
        S::one()
    } else if e < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// `C = w - w ln(1 + w / eps)`, joining the two wing branches continuously.
pub fn wing_constant<S: Scalar>(width: S, curvature: S) -> S {
    width - width * (S::one() + width / curvature).ln()
}

/// Wing penalty of a single error.
pub fn wing_value<S: Scalar>(e: S, width: S, curvature: S, c: S) -> S {
    let a = e.abs();
    if a < width {
        width * (S::one() + a / curvature).ln()
    } else {
        a - c
    }
}

fn wing_slope<S: Scalar>(e: S, width: S, curvature: S) -> S {
    let a = e.abs();
    if a < width {
        sign(e) * width / (curvature + a)
    } else {
        sign(e)
    }
}

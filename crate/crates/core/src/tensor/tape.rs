//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs. Node indices are a topological order by construction, so the
//! backward pass is a single sweep from the loss towards the leaves.

use super::conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvSpec};
use super::params::{ParamId, ParamStore};
use super::{axis_split, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv { x: Var, w: Var, spec: ConvSpec },
    Deconv { x: Var, w: Var, spec: ConvSpec },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Vec<T>),
    Concat { inputs: Vec<Var>, axis: usize },
    Softmax { x: Var, axis: usize },
    ReduceMean { x: Var, axis: usize },
    ReduceMax { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Pool { x: Var, argmax: Option<Vec<usize>>, kernel: usize, stride: usize },
    PadReplicate { x: Var, pad: usize },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
    param: Option<ParamId>,
}

/// Records a computation for later differentiation.
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` is not tracked
    /// or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}: ranks differ")));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(format!(
                "cannot broadcast {a:?} with {b:?}: axis {i} has {x} vs {y}"
            ))),
        })
        .collect()
}

/// Row-major strides of `shape` inside `out`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index of a broadcast binary op with the matching
/// flat offsets into both operands.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert!(value.grad().is_none());
        self.nodes.push(Node {
            value,
            op,
            tracked,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are not propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        let value = strip_grad(value);
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (gradient available from [`Gradients::get`]).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let value = strip_grad(value);
        self.push(value, Op::Leaf, true)
    }

    /// Leaf holding a copy of a stored parameter. Trainable parameters are
    /// tracked; buffers enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.tensor(id);
        let tracked = t.requires_grad();
        let v = self.push(strip_grad(t.clone()), Op::Leaf, tracked);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), &spec)?;
        let tracked = self.tracked(x) || self.tracked(w);
        Ok(self.push(y, Op::Conv { x, w, spec }, tracked))
    }

    pub fn deconv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let y = deconv2d_forward(self.value(x), self.value(w), &spec)?;
        let tracked = self.tracked(x) || self.tracked(w);
        Ok(self.push(y, Op::Deconv { x, w, spec }, tracked))
    }

    /// Batch normalisation over `N, H, W` per channel.
    ///
    /// In training mode the batch statistics (biased variance) normalise the
    /// input and are returned so the caller can update running averages. In
    /// evaluation mode `running` supplies mean and variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(format!(
                "batch_norm: {c} channels but {} scale / {} shift parameters",
                self.value(gamma).numel(),
                self.value(beta).numel()
            )));
        }
        let hw = h * w;
        let count = T::from_f64((n * hw) as f64);
        let xv = self.value(x).data();
        let (mean, var) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::shape("batch_norm: running statistics length"));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum();
                    }
                    let m = s / count;
                    let mut q = T::zero();
                    for b in 0..n {
                        for &v in &xv[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            q += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = q / count;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        let y = self.push(
            Tensor::from_vec(&shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: running.is_none(),
            },
            tracked,
        );
        Ok((y, mean, var))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let y = self.value(x).map(f);
        let tracked = self.tracked(x);
        self.push(y, op, tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return Err(Error::shape(format!(
                "mul_const: {:?} vs {:?}",
                self.shape(x),
                c.shape()
            )));
        }
        let y = Tensor::from_vec(
            c.shape(),
            self.value(x).data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect(),
        )?;
        let tracked = self.tracked(x);
        Ok(self.push(y, Op::MulConst(x, c.data().to_vec()), tracked))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let sa_shape = self.shape(a).to_vec();
        let sb_shape = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa_shape, &sb_shape)?;
        let mut out = Tensor::zeros(&out_shape);
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if sa_shape == sb_shape {
                out.data_mut()
                    .iter_mut()
                    .zip(av.iter().zip(bv))
                    .for_each(|(o, (&x, &y))| *o = f(x, y));
            } else {
                let sa = broadcast_strides(&sa_shape, &out_shape);
                let sb = broadcast_strides(&sb_shape, &out_shape);
                let od = out.data_mut();
                for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| od[o] = f(av[ia], bv[ib]));
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, op, tracked))
    }

    /// Broadcasting addition (size-1 axes stretch).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        axis_split(&base, axis)?;
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || (0..s.len()).any(|i| i != axis && s[i] != base[i]) {
                return Err(Error::shape(format!("concat along axis {axis}: {base:?} vs {s:?}")));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, total, inner) = axis_split(&out_shape, axis)?;
        let mut out = vec![T::zero(); outer * total * inner];
        let mut off = 0;
        for &v in inputs {
            let len = self.shape(v)[axis];
            let src = self.value(v).data();
            for o in 0..outer {
                out[(o * total + off) * inner..(o * total + off + len) * inner]
                    .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            off += len;
        }
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push(
            Tensor::from_vec(&out_shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| xv[at(k)]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for k in 0..len {
                    let e = (xv[at(k)] - m).exp();
                    out[at(k)] = e;
                    s += e;
                }
                for k in 0..len {
                    out[at(k)] = out[at(k)] / s;
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Softmax { x, axis }, tracked))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s = shape.to_vec();
        s[axis] = 1;
        s
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let xv = self.value(x).data();
        let inv = T::one() / T::from_f64(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += xv[(o * len + k) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::from_vec(&Self::reduced_shape(&shape, axis), out)?,
            Op::ReduceMean { x, axis },
            tracked,
        ))
    }

    /// Maximum along `axis`, keeping it with extent 1. Ties route the
    /// gradient to the first maximal element.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let xv = self.value(x).data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    let src = (o * len + k) * inner + i;
                    if k == 0 || xv[src] > out[o * inner + i] {
                        out[o * inner + i] = xv[src];
                        argmax[o * inner + i] = src;
                    }
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::from_vec(&Self::reduced_shape(&shape, axis), out)?,
            Op::ReduceMax { x, argmax },
            tracked,
        ))
    }

    /// Global average over the spatial axes: `N,C,H,W → N,C,1,1`.
    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        self.value(x).dims4()?;
        let r = self.reduce_mean(x, 3)?;
        self.reduce_mean(r, 2)
    }

    /// Global maximum over the spatial axes: `N,C,H,W → N,C,1,1`.
    pub fn global_max(&mut self, x: Var) -> Result<Var> {
        self.value(x).dims4()?;
        let r = self.reduce_max(x, 3)?;
        self.reduce_max(r, 2)
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    fn pool(&mut self, x: Var, kernel: usize, stride: usize, max: bool) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(Error::invalid(format!(
                "pool window {kernel} / stride {stride} invalid for {h}x{w}"
            )));
        }
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = max.then(|| vec![0usize; out.len()]);
        let inv = T::one() / T::from_f64((kernel * kernel) as f64);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (p * oh + oy) * ow + ox;
                    let mut acc = if max { T::neg_infinity() } else { T::zero() };
                    let mut best = 0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = (p * h + oy * stride + ky) * w + ox * stride + kx;
                            if max {
                                if xv[i] > acc {
                                    acc = xv[i];
                                    best = i;
                                }
                            } else {
                                acc += xv[i];
                            }
                        }
                    }
                    out[o] = if max { acc } else { acc * inv };
                    if let Some(a) = argmax.as_mut() {
                        a[o] = best;
                    }
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::from_vec(&[n, c, oh, ow], out)?,
            Op::Pool {
                x,
                argmax,
                kernel,
                stride,
            },
            tracked,
        ))
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.pool(x, kernel, stride, true)
    }

    pub fn avg_pool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.pool(x, kernel, stride, false)
    }

    /// Pads H and W by repeating the border values.
    pub fn pad_replicate(&mut self, x: Var, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ph * pw];
        for p in 0..n * c {
            for y in 0..ph {
                let sy = y.saturating_sub(pad).min(h - 1);
                for xx in 0..pw {
                    let sx = xx.saturating_sub(pad).min(w - 1);
                    out[(p * ph + y) * pw + xx] = xv[(p * h + sy) * w + sx];
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_vec(&[n, c, ph, pw], out)?, Op::PadReplicate { x, pad }, tracked))
    }

    /// Runs the backward sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward sweep, then adds each parameter leaf's gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, grads.grads[i].as_deref()) {
                if node.tracked {
                    store.tensor_mut(id).accumulate_grad(g)?;
                }
            }
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.tracked(v) {
            return;
        }
        match grads[v.0].as_mut() {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, &b)| *a += b),
            None => grads[v.0] = Some(delta),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.tracked(v) {
            return;
        }
        let n = self.value(v).numel();
        let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(g);
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, spec } => {
                let (dx, dw) = conv2d_backward(self.value(*x), self.value(*w), g, spec, self.tracked(*x), self.tracked(*w))?;
                if let Some(dx) = dx {
                    self.acc(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.acc(grads, *w, dw);
                }
            }
            Op::Deconv { x, w, spec } => {
                let (dx, dw) = deconv2d_backward(self.value(*x), self.value(*w), g, spec, self.tracked(*x), self.tracked(*w))?;
                if let Some(dx) = dx {
                    self.acc(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.acc(grads, *w, dw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) = out.dims4()?;
                let hw = h * w;
                let count = T::from_f64((n * hw) as f64);
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for k in base..base + hw {
                            dgamma[ch] += g[k] * xhat[k];
                            dbeta[ch] += g[k];
                        }
                    }
                }
                if self.tracked(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let scale = gm[ch] * inv_std[ch];
                            for k in base..base + hw {
                                dx[k] = if *train {
                                    // (1/M)·γ·σ⁻¹·(M·dy − Σdy − x̂·Σ(dy·x̂))
                                    scale * (g[k] - dbeta[ch] / count - xhat[k] * dgamma[ch] / count)
                                } else {
                                    scale * g[k]
                                };
                            }
                        }
                    }
                    self.acc(grads, *x, dx);
                }
                self.acc(grads, *gamma, dgamma);
                self.acc(grads, *beta, dbeta);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = g.iter().zip(xv).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }).collect();
                self.acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                self.acc(grads, *x, d);
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                let d = g.iter().zip(xv).map(|(&gv, &v)| gv * sigmoid(v)).collect();
                self.acc(grads, *x, d);
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = T::from_f64(2.0);
                let d = g.iter().zip(xv).map(|(&gv, &v)| two * v * gv).collect();
                self.acc(grads, *x, d);
            }
            Op::Scale(x, k) => {
                let d = g.iter().map(|&gv| gv * *k).collect();
                self.acc(grads, *x, d);
            }
            Op::AddScalar(x) => self.acc(grads, *x, g.to_vec()),
            Op::MulConst(x, c) => {
                let d = g.iter().zip(c).map(|(&gv, &cv)| gv * cv).collect();
                self.acc(grads, *x, d);
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let negate_b = matches!(self.nodes[i].op, Op::Sub(..));
                let is_mul = matches!(self.nodes[i].op, Op::Mul(..));
                let out_shape = out.shape();
                let sa = broadcast_strides(self.shape(*a), out_shape);
                let sb = broadcast_strides(self.shape(*b), out_shape);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (ta, tb) = (self.tracked(*a), self.tracked(*b));
                let mut da = ta.then(|| vec![T::zero(); av.len()]);
                let mut db = tb.then(|| vec![T::zero(); bv.len()]);
                for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
                    let gv = g[o];
                    if let Some(da) = da.as_mut() {
                        da[ia] += if is_mul { gv * bv[ib] } else { gv };
                    }
                    if let Some(db) = db.as_mut() {
                        db[ib] += if is_mul {
                            gv * av[ia]
                        } else if negate_b {
                            -gv
                        } else {
                            gv
                        };
                    }
                });
                if let Some(da) = da {
                    self.acc(grads, *a, da);
                }
                if let Some(db) = db {
                    self.acc(grads, *b, db);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis)?;
                let mut off = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.tracked(v) {
                        let mut d = vec![T::zero(); outer * len * inner];
                        for o in 0..outer {
                            d[o * len * inner..(o + 1) * len * inner]
                                .copy_from_slice(&g[(o * total + off) * inner..(o * total + off + len) * inner]);
                        }
                        self.acc(grads, v, d);
                    }
                    off += len;
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis)?;
                let y = out.data();
                let mut d = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + ii;
                        let dot: T = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            d[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::ReduceMean { x, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*x), *axis)?;
                let inv = T::one() / T::from_f64(len as f64);
                self.acc_with(grads, *x, |d| {
                    for o in 0..outer {
                        for k in 0..len {
                            for ii in 0..inner {
                                d[(o * len + k) * inner + ii] += g[o * inner + ii] * inv;
                            }
                        }
                    }
                });
            }
            Op::ReduceMax { x, argmax } => {
                self.acc_with(grads, *x, |d| {
                    for (o, &src) in argmax.iter().enumerate() {
                        d[src] += g[o];
                    }
                });
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.acc(grads, *x, vec![g[0]; n]);
            }
            Op::Pool {
                x,
                argmax,
                kernel,
                stride,
            } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (_, _, oh, ow) = out.dims4()?;
                let inv = T::one() / T::from_f64((kernel * kernel) as f64);
                self.acc_with(grads, *x, |d| match argmax {
                    Some(am) => {
                        for (o, &src) in am.iter().enumerate() {
                            d[src] += g[o];
                        }
                    }
                    None => {
                        for p in 0..n * c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[(p * oh + oy) * ow + ox] * inv;
                                    for ky in 0..*kernel {
                                        for kx in 0..*kernel {
                                            d[(p * h + oy * stride + ky) * w + ox * stride + kx] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::PadReplicate { x, pad } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                self.acc_with(grads, *x, |d| {
                    for p in 0..n * c {
                        for y in 0..ph {
                            let sy = y.saturating_sub(*pad).min(h - 1);
                            for xx in 0..pw {
                                let sx = xx.saturating_sub(*pad).min(w - 1);
                                d[(p * h + sy) * w + sx] += g[(p * ph + y) * pw + xx];
                            }
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

fn strip_grad<T: Scalar>(mut t: Tensor<T>) -> Tensor<T> {
    t.set_requires_grad(false);
    t
}

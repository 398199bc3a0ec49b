//! Reverse-mode differentiation tape.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and a single reverse sweep visits each node once.

use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::norm::{self, BnCache};
use crate::ops::pool::{self, IndexMap};
use crate::ops::resample::{BoxPool, Interp, Resize};
use crate::ops::loss;
use crate::tensor::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm uses batch statistics and records running-statistic updates.
    Train,
    /// Batchnorm uses running statistics.
    Eval,
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param,
    Conv(ConvGeom),
    MaxPool(Arc<IndexMap>),
    MaxUnpool(Arc<IndexMap>),
    Resize(Arc<Resize>),
    BoxPool(BoxPool),
    Concat(Vec<usize>),
    Add,
    Mul,
    Scale(T),
    Relu,
    Reshape,
    Sum,
    BatchNorm(BnCache<T>),
    SoftmaxCe(Tensor<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Conv(g) if g.input[0] == 1 && g.kernel[0] == 1 => "conv2d",
            Op::Conv(_) => "conv3d",
            Op::MaxPool(_) => "maxpool2d",
            Op::MaxUnpool(_) => "max_unpool2d",
            Op::Resize(_) => "upsample",
            Op::BoxPool(_) => "box_pool",
            Op::Concat(_) => "concat_channels",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Reshape => "reshape",
            Op::Sum => "sum",
            Op::BatchNorm(_) => "batchnorm",
            Op::SoftmaxCe(_) => "softmax_cross_entropy",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<Var>,
    value: Value<T>,
    requires_grad: bool,
}

/// Batchnorm operands: the two learned vectors and the two running statistics.
#[derive(Clone, Copy, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

pub struct Graph<'p, T> {
    nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    stat_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(mode: Mode) -> Self {
        Self { nodes: Vec::new(), params: None, param_vars: HashMap::new(), mode, stat_updates: Vec::new() }
    }

    /// A graph whose parameter leaves borrow their values from `params`.
    pub fn with_params(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Self { params: Some(params), ..Self::new(mode) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param node without store").tensor(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<Var>, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = inputs.iter().any(|&i| self.requires(i));
        self.nodes.push(Node { op, inputs, value: Value::Owned(value), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite("leaf".into()));
        }
        self.nodes.push(Node { op: Op::Leaf, inputs: vec![], value: Value::Owned(t), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph built without a parameter store");
        let trainable = store.entry(id).kind.trainable();
        self.nodes.push(Node { op: Op::Param, inputs: vec![], value: Value::Param(id), requires_grad: trainable });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Running-statistic updates produced by training-mode batchnorm calls.
    pub fn take_stat_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv::geom2d(self.value(x), self.value(w), stride, pad)?;
        self.conv(geom, x, w, b)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let geom = conv::geom3d(self.value(x), self.value(w), stride, pad)?;
        self.conv(geom, x, w, b)
    }

    fn conv(&mut self, geom: ConvGeom, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.value(b).numel() != geom.cout {
            return Err(shape_err!("bias of {} for {} output channels", self.value(b).numel(), geom.cout));
        }
        let y = conv::forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut shape = vec![geom.batch, geom.cout];
        if self.value(x).rank() == 5 {
            shape.extend_from_slice(&geom.output);
        } else {
            shape.extend_from_slice(&geom.output[1..]);
        }
        let y = Tensor::new(shape, y)?;
        self.push(Op::Conv(geom), vec![x, w, b], y)
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<(Var, Arc<IndexMap>)> {
        let (y, map) = pool::maxpool2d(self.value(x))?;
        let map = Arc::new(map);
        let v = self.push(Op::MaxPool(map.clone()), vec![x], y)?;
        Ok((v, map))
    }

    pub fn max_unpool2d(&mut self, x: Var, map: &Arc<IndexMap>) -> Result<Var> {
        let y = pool::max_unpool2d(self.value(x), map)?;
        self.push(Op::MaxUnpool(map.clone()), vec![x], y)
    }

    /// Resizes the spatial extents of `[N, C, H, W]` to `size`.
    pub fn upsample(&mut self, x: Var, size: (usize, usize), mode: Interp) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 4 {
            return Err(shape_err!("upsample expects [N, C, H, W], got {:?}", s));
        }
        let resize = Resize::new((s[2], s[3]), size, mode)?;
        let y = resize.forward(self.value(x))?;
        self.push(Op::Resize(Arc::new(resize)), vec![x], y)
    }

    pub fn upsample_by(&mut self, x: Var, factor: usize, mode: Interp) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 4 || factor == 0 {
            return Err(shape_err!("upsample by {factor} of {:?}", s));
        }
        let size = (s[2] * factor, s[3] * factor);
        self.upsample(x, size, mode)
    }

    pub fn box_pool(&mut self, x: Var, pool: BoxPool) -> Result<Var> {
        let y = pool.forward(self.value(x))?;
        self.push(Op::BoxPool(pool), vec![x], y)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() < 2 {
            return Err(shape_err!("concat needs [N, C, ...], got {:?}", s0));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(shape_err!("concat of {:?} with {:?}", s0, s));
            }
            sizes.push(s[1]);
        }
        let n = s0[0];
        let inner: usize = s0[2..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(n * total * inner);
        for b in 0..n {
            for (&x, &c) in xs.iter().zip(&sizes) {
                data.extend_from_slice(&self.value(x).data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = s0;
        shape[1] = total;
        let y = Tensor::new(shape, data)?;
        self.push(Op::Concat(sizes), xs.to_vec(), y)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{what} of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Elementwise sum; also the residual (pixelwise sum) fusion.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect(),
        )?;
        self.push(Op::Add, vec![a, b], y)
    }

    pub fn residual_add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add(a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p * q).collect(),
        )?;
        self.push(Op::Mul, vec![a, b], y)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let y = self.value(x).map(|v| v * s);
        self.push(Op::Scale(s), vec![x], y)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(Op::Relu, vec![x], y)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push(Op::Reshape, vec![x], y)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum, vec![x], y)
    }

    /// Arithmetic mean of equally shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| shape_err!("mean of zero tensors"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        if xs.len() == 1 {
            return Ok(acc);
        }
        self.scale(acc, T::one() / T::from_usize(xs.len()))
    }

    pub fn batchnorm(&mut self, x: Var, p: BnParams, eps: f64, momentum: f64) -> Result<Var> {
        let gamma = self.param(p.gamma);
        let beta = self.param(p.beta);
        let store = self.params.expect("batchnorm requires a parameter store");
        let (y, cache) = match self.mode {
            Mode::Train => {
                let (y, cache, moments) =
                    norm::forward_train(self.value(x), store.tensor(p.gamma).data(), store.tensor(p.beta).data(), eps)?;
                let blend = |old: &Tensor<T>, new: &[T]| -> Tensor<T> {
                    let m = T::from_f64(momentum);
                    Tensor::new(
                        old.shape().to_vec(),
                        old.data().iter().zip(new).map(|(&o, &n)| (T::one() - m) * o + m * n).collect(),
                    )
                    .expect("same extents")
                };
                let rm = blend(store.tensor(p.running_mean), &moments.mean);
                let rv = blend(store.tensor(p.running_var), &moments.var_unbiased);
                self.stat_updates.push((p.running_mean, rm));
                self.stat_updates.push((p.running_var, rv));
                (y, cache)
            }
            Mode::Eval => norm::forward_eval(
                self.value(x),
                store.tensor(p.gamma).data(),
                store.tensor(p.beta).data(),
                store.tensor(p.running_mean).data(),
                store.tensor(p.running_var).data(),
                eps,
            )?,
        };
        self.push(Op::BatchNorm(cache), vec![x, gamma, beta], y)
    }

    /// Batchnorm with caller-supplied scale/shift leaves, always in batch-statistics mode.
    pub fn batchnorm_with(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, cache, _) = norm::forward_train(self.value(x), self.value(gamma).data(), self.value(beta).data(), eps)?;
        self.push(Op::BatchNorm(cache), vec![x, gamma, beta], y)
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u16], ignore: u16) -> Result<Var> {
        let (l, grad) = loss::softmax_cross_entropy(self.value(logits), labels, ignore)?;
        self.push(Op::SoftmaxCe(grad), vec![logits], Tensor::scalar(l))
    }

    /// Gradients of the one-element `root` with respect to every leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(shape_err!("backward root must be a scalar, got {:?}", self.shape(root)));
        }
        self.backward_with(root, Tensor::full(self.shape(root).to_vec(), T::one()))
    }

    /// Reverse sweep seeded with an explicit upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(root) {
            return Err(shape_err!("seed {:?} for node of shape {:?}", seed.shape(), self.shape(root)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let inputs = self.input_grads(node, &gy)?;
            for (&inp, g) in node.inputs.iter().zip(inputs) {
                let Some(g) = g else { continue };
                if !self.requires(inp) {
                    continue;
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", node.op.name())));
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.axpy(T::one(), &g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads, param_vars: self.param_vars.clone() })
    }

    fn input_grads(&self, node: &Node<T>, gy: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = |k: usize| self.value(node.inputs[k]);
        let need = |k: usize| self.requires(node.inputs[k]);
        Ok(match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::Conv(geom) => {
                let g = conv::backward(geom, x(0).data(), x(1).data(), gy.data(), need(0));
                vec![
                    g.dx.map(|d| Tensor::new(x(0).shape().to_vec(), d)).transpose()?,
                    Some(Tensor::new(x(1).shape().to_vec(), g.dw)?),
                    Some(Tensor::new(x(2).shape().to_vec(), g.db)?),
                ]
            }
            Op::MaxPool(map) => vec![Some(pool::scatter(gy.data(), map)?)],
            Op::MaxUnpool(map) => vec![Some(pool::gather(gy.data(), map)?)],
            Op::Resize(r) => vec![Some(r.backward(gy, x(0).shape())?)],
            Op::BoxPool(p) => vec![Some(p.backward(gy, x(0).shape())?)],
            Op::Concat(sizes) => {
                let mut lo = 0;
                sizes
                    .iter()
                    .map(|&c| {
                        let s = gy.slice_channels(lo, lo + c);
                        lo += c;
                        s.map(Some)
                    })
                    .collect::<Result<_>>()?
            }
            Op::Add => vec![Some(gy.clone()), Some(gy.clone())],
            Op::Mul => {
                let prod = |t: &Tensor<T>| {
                    Tensor::new(gy.shape().to_vec(), gy.data().iter().zip(t.data()).map(|(&g, &v)| g * v).collect())
                };
                vec![Some(prod(x(1))?), Some(prod(x(0))?)]
            }
            Op::Scale(s) => vec![Some(gy.map(|g| g * *s))],
            Op::Relu => {
                let d = gy.data().iter().zip(x(0).data()).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() });
                vec![Some(Tensor::new(gy.shape().to_vec(), d.collect())?)]
            }
            Op::Reshape => vec![Some(gy.clone().reshape(x(0).shape().to_vec())?)],
            Op::Sum => vec![Some(Tensor::full(x(0).shape().to_vec(), gy.item()))],
            Op::BatchNorm(cache) => {
                let (dx, dgamma, dbeta) = norm::backward(cache, x(1).data(), gy)?;
                vec![
                    Some(dx),
                    Some(Tensor::new(x(1).shape().to_vec(), dgamma)?),
                    Some(Tensor::new(x(2).shape().to_vec(), dbeta)?),
                ]
            }
            Op::SoftmaxCe(dlogits) => vec![Some(dlogits.map(|d| d * gy.item()))],
        })
    }
}

/// Result of a reverse sweep: gradients of leaves and parameters.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf created with `requires_grad` (None if it did not
    /// influence the root).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_vars.get(&id).and_then(|&v| self.wrt(v))
    }

    /// Parameter gradients indexed by `ParamId`, for a store of `len` entries.
    pub fn into_param_grads(mut self, len: usize) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..len).map(|_| None).collect();
        for (id, v) in self.param_vars {
            if id.0 < len {
                out[id.0] = self.grads[v.0].take();
            }
        }
        out
    }
}

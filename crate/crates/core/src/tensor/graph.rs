//! Operation tape and reverse-mode sweep.

use super::conv::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a trainable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<S: Scalar>(&self) -> ParamStore<S> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Overwrites values from `other`, which must have identical names and
    /// shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape("parameter names differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            *a = b.clone();
        }
        Ok(())
    }
}

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param,
    Conv { x: Var, w: Var, geom: ConvGeometry },
    Bias { x: Var, b: Var },
    Upsample(Var),
    AvgPool(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Concat(Vec<Var>),
    LeakyRelu(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; [`Graph::backward`] sweeps it in reverse.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<(Var, ParamId)>,
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )))
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Constant copy of `v`, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    /// Leaf for a trainable parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_nodes.push((v, id));
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad_v: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.value(x).shape(), self.value(w).shape(), stride, pad_v)?;
        let out = conv::conv_forward(&geom, self.value(x).data(), self.value(w).data());
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::Conv { x, w, geom }, rg))
    }

    /// Adds a per-channel bias of shape `(C,)` to a `(B, C, H, W)` tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c, h, w) = self.value(x).dims4()?;
        if self.value(b).shape() != [c] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {c} channels",
                self.value(b).shape()
            )));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for (i, chunk) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::Bias { x, b }, rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let out = conv::upsample2(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample(x), rg))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = conv::avg_pool2(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPool(x), rg))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = T::of(t.len() as f64);
        let s: T = t.data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Concatenates `(B, C_i, H, W)` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (b, _, h, w) = self.value(first).dims4()?;
        let mut channels = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {:?} vs {:?}",
                    self.value(p).shape(),
                    self.value(first).shape()
                )));
            }
            channels += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let n = t.shape()[1] * plane;
                data.extend_from_slice(&t.data()[bi * n..(bi + 1) * n]);
            }
        }
        let out = Tensor::from_vec(&[b, channels, h, w], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];
        for &(v, id) in &self.param_nodes {
            if let Some(g) = &grads[v.0] {
                match &mut params[id.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, &b)| *a = *a + b),
                    slot @ None => {
                        *slot = Some(Tensor::from_vec(self.params.get(id).shape(), g.clone())?)
                    }
                }
            }
        }
        let params = params
            .into_iter()
            .zip(self.params.values())
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if !self.rg(v) {
            return;
        }
        let local: Vec<T> = g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
        self.accumulate(grads, v, local);
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Input | Op::Param => {}
            Op::Conv { x, w, geom } => {
                let (dx, dw) = conv::conv_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::Bias { x, b } => {
                self.accumulate(grads, *x, g.to_vec());
                if self.rg(*b) {
                    let shape = out.shape();
                    let (c, plane) = (shape[1], shape[2] * shape[3]);
                    let mut db = vec![T::zero(); c];
                    for (i, chunk) in g.chunks_exact(plane).enumerate() {
                        let s: T = chunk.iter().copied().sum();
                        db[i % c] = db[i % c] + s;
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Upsample(x) => {
                let s = self.value(*x).shape();
                let dx = conv::upsample2_backward(g, s[0], s[1], s[2], s[3]);
                self.accumulate(grads, *x, dx);
            }
            Op::AvgPool(x) => {
                let s = self.value(*x).shape();
                let dx = conv::avg_pool2_backward(g, s[0], s[1], s[2], s[3]);
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate_with(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, g, |i, gi| gi * bv[i]);
                self.accumulate_with(grads, *b, g, |i, gi| gi * av[i]);
            }
            Op::Scale(a, k) => self.accumulate_with(grads, *a, g, |_, gi| gi * *k),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Concat(parts) => {
                let s = out.shape();
                let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(b * pc * plane);
                        for bi in 0..b {
                            let start = (bi * c + offset) * plane;
                            d.extend_from_slice(&g[start..start + pc * plane]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += pc;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                self.accumulate_with(grads, *a, g, |i, gi| if x[i] > T::zero() { gi } else { gi * *slope });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate_with(grads, *a, g, |i, gi| if x[i] > T::zero() { gi } else { T::zero() });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.accumulate_with(grads, *a, g, |i, gi| gi * y[i] * (T::one() - y[i]));
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                self.accumulate_with(grads, *a, g, |i, gi| {
                    if x[i] > T::zero() {
                        gi
                    } else if x[i] < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = T::of(2.0);
                self.accumulate_with(grads, *a, g, |i, gi| gi * two * x[i]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let v = g[0] / T::of(n as f64);
                self.accumulate(grads, *a, vec![v; n]);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
        }
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded node, if it was reached.
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients aligned with the [`ParamStore`]; parameters
    /// not used by the loss get zeros.
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }
}

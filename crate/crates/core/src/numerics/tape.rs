//! Reverse-mode differentiation over an explicitly recorded operation tape.
//!
//! A [`Tape`] records every operation of one forward pass. [`Tape::backward`]
//! walks the records in reverse and returns per-node gradients, which
//! [`Gradients::accumulate`] adds into the parameter store. Tapes are meant to
//! be cleared (or dropped) after each training step.

use std::collections::HashMap;

use super::conv::{self, Conv3dGeometry, ConvPlan};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        let grad = Tensor::zeros(value.shape());
        if let Some(&i) = self.index.get(&name) {
            self.params[i].value = value;
            self.params[i].grad = grad;
            return ParamId(i);
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable: true,
        });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.trainable = trainable;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Removes every parameter whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|p| !p.name.starts_with(prefix));
        self.index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Conv3d {
        input: Var,
        kernel: Var,
        plan: ConvPlan,
        cols: Vec<T>,
    },
    ChannelBias(Var, Var),
    RowBias(Var, Var),
    Relu(Var),
    Scale(Var, T),
    Add(Var, Var),
    MulConst(Var, Tensor<T>),
    GlobalAvgPool(Var),
    SpatialAvgPool(Var),
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    /// Scalar-valued function whose local gradient was computed eagerly.
    Custom(Var, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Records an input whose gradient is wanted (gradient checks, probes).
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("variable", value, Op::Leaf, true)
    }

    /// Records a parameter; trainable parameters receive gradients through
    /// [`Gradients::accumulate`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let p = store.get(id);
        if p.trainable {
            self.push("param", p.value.clone(), Op::Param(id), true)
        } else {
            self.push("param", p.value.clone(), Op::Leaf, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); p * r];
        T::gemm(
            false,
            false,
            p,
            r,
            q,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "matmul",
            Tensor::new(&[p, r], out)?,
            Op::MatMul(a, b),
            needs,
        )
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, geom: Conv3dGeometry) -> Result<Var> {
        let (out, plan, cols) = conv::forward(self.value(input), self.value(kernel), geom)?;
        let needs = self.needs(input) || self.needs(kernel);
        // Columns are only needed for the kernel gradient.
        let cols = if self.needs(kernel) { cols } else { Vec::new() };
        self.push(
            "conv3d",
            out,
            Op::Conv3d {
                input,
                kernel,
                plan,
                cols,
            },
            needs,
        )
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C x ...` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let bs = self.value(bias).shape();
        if xs.is_empty() || bs != [xs[0]] {
            return Err(shape_err("add_channel_bias", &xs[..xs.len().min(1)], bs));
        }
        let per = self.value(x).len() / xs[0];
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for (c, chunk) in out.data_mut().chunks_mut(per).enumerate() {
            chunk.iter_mut().for_each(|v| *v = *v + b[c]);
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push("add_channel_bias", out, Op::ChannelBias(x, bias), needs)
    }

    /// Adds a length-`M` bias to each row of an `N x M` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 2 || bs != [xs[1]] {
            return Err(shape_err("add_row_bias", xs, bs));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(b.len()) {
            row.iter_mut().zip(&b).for_each(|(v, &bv)| *v = *v + bv);
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push("add_row_bias", out, Op::RowBias(x, bias), needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push("relu", out, Op::Relu(x), needs)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        self.push("scale", out, Op::Scale(x, c), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "add",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_scaled(self.value(b), T::one())?;
        let needs = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), needs)
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        if self.value(x).shape() != mask.shape() {
            return Err(shape_err("mul_const", self.value(x).shape(), mask.shape()));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&a, &m)| a * m)
            .collect();
        let out = Tensor::new(self.value(x).shape(), data)?;
        let needs = self.needs(x);
        self.push("mul_const", out, Op::MulConst(x, mask), needs)
    }

    /// `C x T x H x W -> C`, mean over all of `T x H x W`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() != 4 {
            return Err(Error::invalid(
                "global_avg_pool",
                format!("expected C x T x H x W, got {xs:?}"),
            ));
        }
        let c = xs[0];
        let per = self.value(x).len() / c;
        let inv = T::one() / T::from_usize(per).unwrap();
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(per)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.needs(x);
        self.push(
            "global_avg_pool",
            Tensor::new(&[c], out)?,
            Op::GlobalAvgPool(x),
            needs,
        )
    }

    /// `C x T x H x W -> C x T`, mean over `H x W` only.
    pub fn spatial_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::invalid(
                "spatial_avg_pool",
                format!("expected C x T x H x W, got {xs:?}"),
            ));
        }
        let per = xs[2] * xs[3];
        let inv = T::one() / T::from_usize(per).unwrap();
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(per)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.needs(x);
        self.push(
            "spatial_avg_pool",
            Tensor::new(&[xs[0], xs[1]], out)?,
            Op::SpatialAvgPool(x),
            needs,
        )
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "no inputs"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).len());
        for &p in parts {
            if self.value(p).shape() != shape.as_slice() {
                return Err(shape_err("stack", &shape, self.value(p).shape()));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut out_shape = vec![parts.len()];
        out_shape.extend_from_slice(&shape);
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "stack",
            Tensor::new(&out_shape, data)?,
            Op::Stack(parts.to_vec()),
            needs,
        )
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.value(p).shape();
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err("concat", &tail, s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut out_shape = vec![lead];
        out_shape.extend_from_slice(&tail);
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat",
            Tensor::new(&out_shape, data)?,
            Op::Concat(parts.to_vec()),
            needs,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        self.push("reshape", out, Op::Reshape(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push("sum", out, Op::Sum(x), needs)
    }

    /// Records a scalar function of `input` whose value and gradient with
    /// respect to `input` were computed outside the tape (the pretext losses).
    pub fn custom_scalar(&mut self, input: Var, value: T, local_grad: Tensor<T>) -> Result<Var> {
        if local_grad.shape() != self.value(input).shape() {
            return Err(shape_err(
                "custom_scalar",
                self.value(input).shape(),
                local_grad.shape(),
            ));
        }
        if !local_grad.all_finite() {
            return Err(Error::NonFinite {
                op: "custom_scalar",
            });
        }
        let needs = self.needs(input);
        self.push(
            "custom_scalar",
            Tensor::scalar(value),
            Op::Custom(input, local_grad),
            needs,
        )
    }

    /// Propagates `d root / d node` for every node that needs it; the root is
    /// seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.backward_seeded(root, T::one())
    }

    /// As [`Tape::backward`], with the root gradient seeded by `seed`.
    pub fn backward_seeded(&self, root: Var, seed: T) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), seed));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut send = |v: Var, delta: Tensor<T>| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_scaled(&delta, T::one()),
                slot => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (p, q, r) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); p * q];
                    T::gemm(
                        false,
                        true,
                        p,
                        q,
                        r,
                        T::one(),
                        g.data(),
                        bv.data(),
                        T::zero(),
                        &mut da,
                    );
                    send(*a, Tensor::new(&[p, q], da)?)?;
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); q * r];
                    T::gemm(
                        true,
                        false,
                        q,
                        r,
                        p,
                        T::one(),
                        av.data(),
                        g.data(),
                        T::zero(),
                        &mut db,
                    );
                    send(*b, Tensor::new(&[q, r], db)?)?;
                }
            }
            Op::Conv3d {
                input,
                kernel,
                plan,
                cols,
            } => {
                if self.needs(*kernel) {
                    let dk = conv::kernel_grad(plan, cols, g.data(), self.value(*kernel).shape());
                    send(*kernel, dk)?;
                }
                if self.needs(*input) {
                    let dx = conv::input_grad(plan, self.value(*kernel).data(), g.data());
                    send(*input, dx)?;
                }
            }
            Op::ChannelBias(x, b) => {
                send(*x, g.clone())?;
                if self.needs(*b) {
                    let c = self.value(*b).len();
                    let per = g.len() / c;
                    let db: Vec<T> = g
                        .data()
                        .chunks(per)
                        .map(|ch| ch.iter().copied().sum())
                        .collect();
                    send(*b, Tensor::new(&[c], db)?)?;
                }
            }
            Op::RowBias(x, b) => {
                send(*x, g.clone())?;
                if self.needs(*b) {
                    let m = self.value(*b).len();
                    let mut db = vec![T::zero(); m];
                    for row in g.data().chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    send(*b, Tensor::new(&[m], db)?)?;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                send(*x, Tensor::new(xv.shape(), data)?)?;
            }
            Op::Scale(x, c) => send(*x, g.map(|v| v * *c))?,
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::MulConst(x, mask) => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&a, &m)| a * m)
                    .collect();
                send(*x, Tensor::new(mask.shape(), data)?)?;
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.value(*x).shape();
                let per = self.value(*x).len() / xs[0];
                let inv = T::one() / T::from_usize(per).unwrap();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, per))
                    .collect();
                send(*x, Tensor::new(xs, data)?)?;
            }
            Op::SpatialAvgPool(x) => {
                let xs = self.value(*x).shape();
                let per = xs[2] * xs[3];
                let inv = T::one() / T::from_usize(per).unwrap();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, per))
                    .collect();
                send(*x, Tensor::new(xs, data)?)?;
            }
            Op::Stack(parts) | Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let piece =
                        Tensor::new(self.value(p).shape(), g.data()[offset..offset + n].to_vec())?;
                    send(p, piece)?;
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                let piece = g.clone().reshape(self.value(*x).shape())?;
                send(*x, piece)?;
            }
            Op::Sum(x) => {
                send(*x, Tensor::full(self.value(*x).shape(), g.item()))?;
            }
            Op::Custom(x, local) => {
                send(*x, local.map(|v| v * g.item()))?;
            }
        }
        Ok(())
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(Var, ParamId)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into `store` (a parameter recorded several
    /// times receives the sum).
    pub fn accumulate(&self, store: &mut ParamStore<T>) -> Result<()> {
        for &(var, id) in &self.params {
            if let Some(g) = self.get(var) {
                store.get_mut(id).grad.add_scaled(g, T::one())?;
            }
        }
        Ok(())
    }
}

//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the inputs
//! it needs for the backward rule. Nodes only reference earlier nodes, so a
//! single reverse sweep over the list visits them in topological order.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::params::{ParamId, ParamStore};
use crate::tensor::value::strides;
use crate::tensor::Tensor;

/// Exponents of segment sums are clamped to this before `exp`.
pub const SEGSUM_EXP_CLAMP: f64 = 80.0;

/// Reference to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Silu,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Sqrt,
    Relu,
    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    Clamp(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice { x: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows { x: Var, index: Vec<usize> },
    SumAll(Var),
    SumAxis { x: Var, axis: usize },
    Cumsum { x: Var, axis: usize },
    SegsumExp(Var),
    Softmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Single-threaded recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter as a gradient-tracking leaf. Repeated calls for
    /// the same parameter return the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.value(id).clone(), requires_grad: true, op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Makes later `param` calls for `id` return `v`, so a parameter can be
    /// driven by an arbitrary variable (used by finite-difference checks).
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.params.insert(id, v);
    }

    // ----- elementwise -------------------------------------------------

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let input = self.value(x);
        if let Unary::Log | Unary::Sqrt = f {
            let bad = input.data().iter().position(|&v| if f == Unary::Log { v <= 0.0 } else { v < 0.0 });
            if let Some(i) = bad {
                return Err(Error::Domain(format!(
                    "{:?} of {} at flat index {i}",
                    f,
                    input.data()[i]
                )));
            }
        }
        let out = input.map(|v| unary_forward(f, v));
        Ok(self.push(out, Op::Unary(f, x), &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp).expect("exp has no domain restriction")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid).expect("total")
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus).expect("total")
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu).expect("total")
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg).expect("total")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Scale(c)).expect("total")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::AddScalar(c)).expect("total")
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu).expect("total")
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Unary::Clamp(lo, hi)).expect("total")
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb)?;
        let ma = broadcast_map(sa, &out_shape);
        let mb = broadcast_map(sb, &out_shape);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| {
                let (x, y) = (da[i], db[j]);
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Binary(op, a, b), &[a, b]))
    }

    /// Broadcasting addition (trailing-axis alignment).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales
    /// survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout probability {p} must be below 1")));
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let mask = self.constant(Tensor::new(&shape, mask)?);
        self.mul(x, mask)
    }

    // ----- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched matmul of `[batch, m, k]` by `[batch, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape(format!("bmm {:?} x {:?}", sa, sb)));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(&[batch, m, n], out)?;
        Ok(self.push(out, Op::Bmm(a, b), &[a, b]))
    }

    // ----- layout ------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::Shape(format!("permute {:?} of rank-{} tensor", axes, shape.len())));
        }
        let map = permute_map(&shape, axes);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Permute(x, axes.to_vec()), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!("slice axis {axis} [{start}, {}) of {:?}", start + len, shape)));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} of rank-{} tensors", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat {:?} with {:?} on axis {axis}", base, s)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    /// Selects (and may repeat) slices along axis 0.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(Error::Shape("gather_rows on a scalar".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= shape[0]) {
            return Err(Error::Shape(format!("row {bad} out of range for {:?}", shape)));
        }
        let row: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * row);
        for &i in index {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = index.len();
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::GatherRows { x, index: index.to_vec() }, &[x]))
    }

    // ----- reductions and scans ----------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("sum over axis {axis} of {:?}", shape)));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let base = (o * extent + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let extent = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("mean over axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / extent as f64))
    }

    /// Inclusive prefix sums along `axis`.
    pub fn cumsum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("cumsum axis {axis} of {:?}", shape)));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for a in 1..extent {
                for i in 0..inner {
                    let cur = (o * extent + a) * inner + i;
                    data[cur] += data[cur - inner];
                }
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Cumsum { x, axis }, &[x]))
    }

    /// Causal decay matrix over the last axis: `[..., n] -> [..., n, n]` with
    /// `out[i][j] = exp(sum_{k=j+1..=i} a[k])` for `i >= j` and zero above the
    /// diagonal.
    pub fn segsum_exp(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or_else(|| Error::Shape("segsum_exp of a scalar".into()))?;
        let batch = self.value(a).numel() / n.max(1);
        let src = self.value(a).data();
        let mut data = vec![0.0; batch * n * n];
        for b in 0..batch {
            let seg = &src[b * n..(b + 1) * n];
            let out = &mut data[b * n * n..(b + 1) * n * n];
            for j in 0..n {
                let mut acc = 0.0;
                out[j * n + j] = 1.0;
                for i in j + 1..n {
                    acc += seg[i];
                    out[i * n + j] = acc.min(SEGSUM_EXP_CLAMP).exp();
                }
            }
        }
        let mut out_shape = shape;
        out_shape.push(n);
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::SegsumExp(a), &[a]))
    }

    /// Softmax over the last axis with max-subtraction. Entries where `mask`
    /// is `false` get weight exactly zero; the mask covers the trailing
    /// `mask.len()` entries and repeats over leading axes.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| Error::Shape("softmax of a scalar".into()))?;
        let numel = self.value(x).numel();
        if let Some(m) = mask {
            if m.is_empty() || m.len() % cols != 0 || !numel.is_multiple_of(m.len()) {
                return Err(Error::Shape(format!("mask of {} entries for shape {:?}", m.len(), shape)));
            }
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; numel];
        for (r, (row_in, row_out)) in src.chunks(cols).zip(data.chunks_mut(cols)).enumerate() {
            let keep = |c: usize| mask.is_none_or(|m| m[(r * cols + c) % m.len()]);
            let max = (0..cols).filter(|&c| keep(c)).map(|c| row_in[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateRow { row: r });
            }
            let mut total = 0.0;
            for c in (0..cols).filter(|&c| keep(c)) {
                let e = (row_in[c] - max).exp();
                row_out[c] = e;
                total += e;
            }
            row_out.iter_mut().for_each(|v| *v /= total);
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    // ----- backward ----------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, params, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Unary(f, x) => {
                let xs = val(*x);
                let ys = node.value.data();
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * unary_derivative(*f, xs[i], ys[i]);
                    }
                });
            }
            Op::Binary(op, a, b) => {
                let out_shape = node.value.shape();
                let (da, db) = (val(*a), val(*b));
                let ma = broadcast_map(shape(*a), out_shape);
                let mb = broadcast_map(shape(*b), out_shape);
                acc(*a, &mut |ga| {
                    for o in 0..g.len() {
                        let d = match op {
                            Binary::Add | Binary::Sub => 1.0,
                            Binary::Mul => db[mb[o]],
                            Binary::Div => 1.0 / db[mb[o]],
                        };
                        ga[ma[o]] += g[o] * d;
                    }
                });
                acc(*b, &mut |gb| {
                    for o in 0..g.len() {
                        let d = match op {
                            Binary::Add => 1.0,
                            Binary::Sub => -1.0,
                            Binary::Mul => da[ma[o]],
                            Binary::Div => -da[ma[o]] / (db[mb[o]] * db[mb[o]]),
                        };
                        gb[mb[o]] += g[o] * d;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                let (da, db) = (val(*a), val(*b));
                acc(*a, &mut |ga| gemm_nt(g, db, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(da, g, gb, k, m, n));
            }
            Op::Bmm(a, b) => {
                let (batch, m, k) = (shape(*a)[0], shape(*a)[1], shape(*a)[2]);
                let n = shape(*b)[2];
                let (da, db) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for i in 0..batch {
                        gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &db[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..batch {
                        gemm_tn(
                            &da[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Permute(x, axes) => {
                let map = permute_map(shape(*x), axes);
                acc(*x, &mut |gx| {
                    for (o, &i) in map.iter().enumerate() {
                        gx[i] += g[o];
                    }
                });
            }
            Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = split_axis(shape(*x), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = (o * extent + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let ext = shape(v)[*axis];
                    if wants(v) {
                        acc(v, &mut |gv| {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                add_into(&mut gv[o * ext * inner..(o + 1) * ext * inner], &g[src..src + ext * inner]);
                            }
                        });
                    }
                    offset += ext;
                }
            }
            Op::GatherRows { x, index } => {
                let row: usize = shape(*x)[1..].iter().product();
                acc(*x, &mut |gx| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut gx[i * row..(i + 1) * row], &g[r * row..(r + 1) * row]);
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::SumAxis { x, axis } => {
                let (outer, extent, inner) = split_axis(shape(*x), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for a in 0..extent {
                            let base = (o * extent + a) * inner;
                            add_into(&mut gx[base..base + inner], &g[o * inner..(o + 1) * inner]);
                        }
                    }
                });
            }
            Op::Cumsum { x, axis } => {
                let (outer, extent, inner) = split_axis(shape(*x), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut running = 0.0;
                            for a in (0..extent).rev() {
                                let idx = (o * extent + a) * inner + i;
                                running += g[idx];
                                gx[idx] += running;
                            }
                        }
                    }
                });
            }
            Op::SegsumExp(a) => {
                let n = *shape(*a).last().expect("checked in forward");
                let src = val(*a);
                let out = node.value.data();
                acc(*a, &mut |ga| {
                    let batch = ga.len() / n.max(1);
                    for b in 0..batch {
                        let seg = &src[b * n..(b + 1) * n];
                        let base = b * n * n;
                        for j in 0..n {
                            let mut sum = 0.0;
                            for i in j + 1..n {
                                sum += seg[i];
                                if sum > SEGSUM_EXP_CLAMP {
                                    continue;
                                }
                                let w = g[base + i * n + j] * out[base + i * n + j];
                                // out[i][j] depends on a[k] for j < k <= i.
                                for k in j + 1..=i {
                                    ga[b * n + k] += w;
                                }
                            }
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let cols = *node.value.shape().last().expect("checked in forward");
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for r in 0..y.len() / cols {
                        let row = r * cols..(r + 1) * cols;
                        let dot: f64 = y[row.clone()].iter().zip(&g[row.clone()]).map(|(a, b)| a * b).sum();
                        for c in row {
                            gx[c] += y[c] * (g[c] - dot);
                        }
                    }
                });
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` was unreachable.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape matches value"),
            None => Tensor::zeros(shape),
        }
    }

    /// Adds the gradient of every parameter registered on the tape into the
    /// store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            match &self.grads[v.0] {
                Some(g) => store.add_grad(id, g),
                None => store.add_grad(id, &vec![0.0; self.shapes[v.0].iter().product()]),
            }
        }
    }
}

fn unary_forward(f: Unary, x: f64) -> f64 {
    match f {
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::Silu => x * sigmoid(x),
        Unary::Neg => -x,
        Unary::Scale(c) => c * x,
        Unary::AddScalar(c) => x + c,
        Unary::Sqrt => x.sqrt(),
        Unary::Relu => x.max(0.0),
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
    }
}

fn unary_derivative(f: Unary, x: f64, y: f64) -> f64 {
    match f {
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => sigmoid(x),
        Unary::Silu => {
            let s = sigmoid(x);
            s + x * s * (1.0 - s)
        }
        Unary::Neg => -1.0,
        Unary::Scale(c) => c,
        Unary::AddScalar(_) => 1.0,
        Unary::Sqrt => 0.5 / y,
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Clamp(lo, hi) => {
            if x > lo && x < hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// (outer, extent, inner) sizes around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `out += a[m,k] * b[k,n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        for p in 0..k {
            let mut s = 0.0;
            for j in 0..n {
                s += g[i * n + j] * b[p * n + j];
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[p * n + j] += av * g[i * n + j];
            }
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::Shape(format!("cannot broadcast {:?} with {:?}", a, b))),
        };
    }
    Ok(out)
}

/// For each flat index of `out_shape`, the flat index of the broadcast source.
fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    if in_shape == out_shape {
        return (0..n).collect();
    }
    let rank = out_shape.len();
    let in_strides = strides(in_shape);
    let offset = rank - in_shape.len();
    let eff: Vec<usize> = (0..rank)
        .map(|i| if i < offset || in_shape[i - offset] == 1 { 0 } else { in_strides[i - offset] })
        .collect();
    walk(out_shape, &eff)
}

fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    walk(&out_shape, &eff)
}

/// Visits `shape` in row-major order, yielding `sum(index[i] * step[i])`.
fn walk(shape: &[usize], step: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        out.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += step[d];
            if idx[d] < shape[d] {
                break;
            }
            flat -= step[d] * shape[d];
            idx[d] = 0;
        }
    }
    out
}

//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is built fresh for every training step. Each operation pushes
//! a node holding its forward value and the ids of its inputs; [`Tape::backward`]
//! walks the nodes in reverse insertion order and accumulates gradients of a
//! scalar root into the trainable variables of a [`ParamStore`].

use std::collections::HashMap;

use super::tensor::{broadcast_index, broadcast_shape, strides};
use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Select(Vec<bool>, Var, Var),
    Cosine(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    params: HashMap<ParamId, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub const COSINE_EPS: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            params: HashMap::new(),
        }
    }

    /// A tape that only evaluates values; `backward` on it is an error.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        let op = if self.recording { op } else { Op::Constant };
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored variable. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.value(id).clone();
        let op = if self.recording { Op::Param(id) } else { Op::Constant };
        self.nodes.push(Node { value, op });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(name, ta.shape(), tb.shape())?;
        let ia = broadcast_index(&out_shape, ta.shape());
        let ib = broadcast_index(&out_shape, tb.shape());
        let (da, db) = (ta.data(), tb.data());
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
        self.push(name, Tensor::from_raw(out_shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product with same-rank broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x * s);
        self.push("scale", value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x + s);
        self.push("add_scalar", value, Op::AddScalar(a))
    }

    /// `1 - a`, computed as `(-a) + 1` so it is bit-identical to `1.0 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, NumericsError> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if let Some(&bad) = t.data().iter().find(|&&x| x <= 0.0) {
            return Err(NumericsError::LogDomain { value: bad });
        }
        let value = t.map(f64::ln);
        self.push("log", value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if let Some(&bad) = t.data().iter().find(|&&x| x < 0.0) {
            return Err(NumericsError::SqrtDomain { value: bad });
        }
        let value = t.map(f64::sqrt);
        self.push("sqrt", value, Op::Sqrt(a))
    }

    /// Clamp into `[lo, hi]`; the gradient passes only where the input lies
    /// inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push("clamp", value, Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let width = *t.shape().last().ok_or(NumericsError::Rank {
            op: "softmax",
            expected: 1,
            shape: t.shape().to_vec(),
        })?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(width.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::from_raw(t.shape().to_vec(), data);
        self.push("softmax", value, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let total = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(mean), Op::Mean(a))
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let Some((&width, rest)) = t.shape().split_last() else {
            return Err(NumericsError::Rank {
                op: "sum_last",
                expected: 1,
                shape: Vec::new(),
            });
        };
        let data = t.data().chunks(width.max(1)).map(|row| row.iter().sum()).collect();
        let value = Tensor::from_raw(rest.to_vec(), data);
        self.push("sum_last", value, Op::SumLast(a))
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(ta.data(), tb.data(), &mut out, m, k, n);
        self.push("matmul", Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b))
    }

    /// `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(NumericsError::Shape {
                op: "bmm",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::from_raw(vec![batch, m, n], out);
        self.push("bmm", value, Op::BatchMatMul(a, b))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(a).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let mut seen = vec![false; t.rank()];
        let valid = axes.len() == t.rank()
            && axes
                .iter()
                .all(|&ax| ax < seen.len() && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(NumericsError::Shape {
                op: "permute",
                left: t.shape().to_vec(),
                right: axes.to_vec(),
            });
        }
        let (shape, map) = permute_map(t.shape(), axes);
        let data = map.iter().map(|&i| t.data()[i]).collect();
        let value = Tensor::from_raw(shape, data);
        self.push("permute", value, Op::Permute(a, axes.to_vec()))
    }

    /// Selects entries along the leading axis.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let Some(&rows) = t.shape().first() else {
            return Err(NumericsError::Rank {
                op: "gather_rows",
                expected: 1,
                shape: Vec::new(),
            });
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Index {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let mut data = Vec::with_capacity(indices.len() * t.len() / rows.max(1));
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let value = Tensor::from_raw(shape, data);
        self.push("gather_rows", value, Op::Gather(a, indices.to_vec()))
    }

    /// Entry-wise `if mask { a } else { b }` for same-shaped operands.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || mask.len() != ta.len() {
            return Err(NumericsError::Shape {
                op: "select",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = mask
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let value = Tensor::from_raw(ta.shape().to_vec(), data);
        self.push("select", value, Op::Select(mask.to_vec(), a, b))
    }

    /// Cosine similarity of two vectors with `COSINE_EPS` added to each norm,
    /// clamped into `[-1, 1]`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || ta.shape() != tb.shape() {
            return Err(NumericsError::Shape {
                op: "cosine",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let parts = CosineParts::new(ta.data(), tb.data());
        self.push("cosine", Tensor::scalar(parts.value()), Op::Cosine(a, b))
    }

    /// Accumulates `d root / d param` into every trainable variable reachable
    /// from `root`.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<(), NumericsError> {
        if !self.recording {
            return Err(NumericsError::NotRecording);
        }
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(NumericsError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate(*id, &g),
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let out = node.value.shape();
                    let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                    let mut ga = vec![0.0; self.value(*a).len()];
                    let mut gb = vec![0.0; self.value(*b).len()];
                    let ia = broadcast_index(out, &sa);
                    let ib = broadcast_index(out, &sb);
                    for (i, &gi) in g.data().iter().enumerate() {
                        ga[ia[i]] += gi;
                        gb[ib[i]] += sign * gi;
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(sa, ga));
                    accumulate(&mut grads, *b, Tensor::from_raw(sb, gb));
                }
                Op::Mul(a, b) | Op::Div(a, b) => {
                    let is_div = matches!(node.op, Op::Div(..));
                    let out = node.value.shape();
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ia = broadcast_index(out, ta.shape());
                    let ib = broadcast_index(out, tb.shape());
                    let mut ga = vec![0.0; ta.len()];
                    let mut gb = vec![0.0; tb.len()];
                    for (i, &gi) in g.data().iter().enumerate() {
                        let (x, y) = (ta.data()[ia[i]], tb.data()[ib[i]]);
                        if is_div {
                            ga[ia[i]] += gi / y;
                            gb[ib[i]] -= gi * x / (y * y);
                        } else {
                            ga[ia[i]] += gi * y;
                            gb[ib[i]] += gi * x;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(ta.shape().to_vec(), ga));
                    accumulate(&mut grads, *b, Tensor::from_raw(tb.shape().to_vec(), gb));
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let data = g.data().iter().zip(y).map(|(&gi, &s)| gi * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let data = g.data().iter().zip(x).map(|(&gi, &xi)| gi / xi).collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Sqrt(a) => {
                    let y = node.value.data();
                    let data = g.data().iter().zip(y).map(|(&gi, &yi)| gi / (2.0 * yi)).collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a).data();
                    let data = g
                        .data()
                        .iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi >= *lo && xi <= *hi { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let width = (*node.value.shape().last().unwrap_or(&1)).max(1);
                    let mut data = vec![0.0; y.len()];
                    for ((gr, yr), out) in g.data().chunks(width).zip(y.chunks(width)).zip(data.chunks_mut(width)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yi * (gi - dot);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let t = self.value(*a);
                    let mut gi = g.data()[0];
                    if matches!(node.op, Op::Mean(..)) {
                        gi /= t.len() as f64;
                    }
                    accumulate(&mut grads, *a, Tensor::full(t.shape(), gi));
                }
                Op::SumLast(a) => {
                    let t = self.value(*a);
                    let width = (*t.shape().last().unwrap_or(&1)).max(1);
                    let data = g.data().iter().flat_map(|&gi| std::iter::repeat_n(gi, width)).collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(t.shape().to_vec(), data));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    gemm_grads(g.data(), ta.data(), tb.data(), &mut ga, &mut gb, m, k, n);
                    accumulate(&mut grads, *a, Tensor::from_raw(vec![m, k], ga));
                    accumulate(&mut grads, *b, Tensor::from_raw(vec![k, n], gb));
                }
                Op::BatchMatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (batch, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                    let mut ga = vec![0.0; batch * m * k];
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        gemm_grads(
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(vec![batch, m, k], ga));
                    accumulate(&mut grads, *b, Tensor::from_raw(vec![batch, k, n], gb));
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, Tensor::from_raw(shape, g.into_data()));
                }
                Op::Permute(a, axes) => {
                    let t = self.value(*a);
                    let (_, map) = permute_map(t.shape(), axes);
                    let mut data = vec![0.0; t.len()];
                    for (&src, &gi) in map.iter().zip(g.data()) {
                        data[src] += gi;
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(t.shape().to_vec(), data));
                }
                Op::Gather(a, indices) => {
                    let t = self.value(*a);
                    let stride = t.len() / t.shape()[0].max(1);
                    let mut data = vec![0.0; t.len()];
                    for (row, &src) in indices.iter().enumerate() {
                        let dst = &mut data[src * stride..(src + 1) * stride];
                        for (d, &gi) in dst.iter_mut().zip(&g.data()[row * stride..]) {
                            *d += gi;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(t.shape().to_vec(), data));
                }
                Op::Select(mask, a, b) => {
                    let (ga, gb): (Vec<f64>, Vec<f64>) = mask
                        .iter()
                        .zip(g.data())
                        .map(|(&m, &gi)| if m { (gi, 0.0) } else { (0.0, gi) })
                        .unzip();
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::from_raw(shape.clone(), ga));
                    accumulate(&mut grads, *b, Tensor::from_raw(shape, gb));
                }
                Op::Cosine(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let parts = CosineParts::new(ta.data(), tb.data());
                    let (ga, gb) = parts.gradients(ta.data(), tb.data(), g.data()[0]);
                    accumulate(&mut grads, *a, Tensor::from_raw(ta.shape().to_vec(), ga));
                    accumulate(&mut grads, *b, Tensor::from_raw(tb.shape().to_vec(), gb));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, &y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
}

/// `ga += g * b^T`, `gb += a^T * g` for `out = a * b`.
#[allow(clippy::too_many_arguments)]
fn gemm_grads(g: &[f64], a: &[f64], b: &[f64], ga: &mut [f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
            let x = a[i * k + p];
            for (o, &gi) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += x * gi;
            }
        }
    }
}

/// Output shape and, for every output flat index, the source flat index.
fn permute_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for axis in (0..out_shape.len()).rev() {
            counter[axis] += 1;
            offset += step[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            offset -= step[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    (out_shape, map)
}

struct CosineParts {
    dot: f64,
    norm_a: f64,
    norm_b: f64,
}

impl CosineParts {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let dot = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { dot, norm_a, norm_b }
    }

    fn raw(&self) -> f64 {
        self.dot / ((self.norm_a + COSINE_EPS) * (self.norm_b + COSINE_EPS))
    }

    fn value(&self) -> f64 {
        self.raw().clamp(-1.0, 1.0)
    }

    fn gradients(&self, a: &[f64], b: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
        let raw = self.raw();
        if !(-1.0..=1.0).contains(&raw) {
            return (vec![0.0; a.len()], vec![0.0; b.len()]);
        }
        let da = self.norm_a + COSINE_EPS;
        let db = self.norm_b + COSINE_EPS;
        // d(dot / (da db)) / da_i = b_i / (da db) - dot a_i / (|a| da^2 db)
        let side = |x: &[f64], y: &[f64], nx: f64, dx: f64, dy: f64| -> Vec<f64> {
            x.iter()
                .zip(y)
                .map(|(&xi, &yi)| {
                    let radial = if nx > 0.0 {
                        self.dot * xi / (nx * dx * dx * dy)
                    } else {
                        0.0
                    };
                    g * (yi / (dx * dy) - radial)
                })
                .collect()
        };
        (side(a, b, self.norm_a, da, db), side(b, a, self.norm_b, db, da))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), Some(0.5));
    }

    #[test]
    fn cosine_of_vector_with_itself_is_one() {
        let mut tape = Tape::new();
        let v = tape.constant(vec_t(&[0.3, -2.0, 5.0]));
        let c = tape.cosine(v, v).unwrap();
        assert!((tape.value(c).item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let v = tape.constant(vec_t(&[1.0, 1.0, 1.0]));
        let s = tape.softmax(v).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(id).item(), Some(6.0));
    }

    #[test]
    fn sigmoid_sum_gradient_at_zero() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[4]));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let s = tape.sigmoid(w).unwrap();
        let root = tape.sum(s).unwrap();
        tape.backward(root, &mut store).unwrap();
        assert!(store.grad(id).data().iter().all(|&g| g == 0.25));
    }

    #[test]
    fn backward_twice_doubles_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec_t(&[0.5, -1.5]));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let s = tape.sigmoid(w).unwrap();
        let sq = tape.mul(s, w).unwrap();
        let root = tape.sum(sq).unwrap();
        tape.backward(root, &mut store).unwrap();
        let once = store.grad(id).clone();
        tape.backward(root, &mut store).unwrap();
        for (twice, once) in store.grad(id).data().iter().zip(once.data()) {
            assert_eq!(*twice, 2.0 * once);
        }
    }

    #[test]
    fn error_paths() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        match tape.add(a, b) {
            Err(NumericsError::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        assert!(matches!(tape.log(a), Err(NumericsError::LogDomain { .. })));
        let mut store = ParamStore::new();
        assert!(matches!(
            tape.backward(a, &mut store),
            Err(NumericsError::NonScalarRoot { .. })
        ));
        let mut off = Tape::no_grad();
        let c = off.constant(Tensor::scalar(1.0));
        assert!(matches!(off.backward(c, &mut store), Err(NumericsError::NotRecording)));
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let mut tape = Tape::new();
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let a = tape.constant(t);
        let p = tape.permute(a, &[1, 0]).unwrap();
        assert_eq!(tape.shape(p), &[3, 2]);
        assert_eq!(tape.value(p).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }
}

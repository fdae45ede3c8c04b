//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every kernel application in execution order, so the
//! node list is already topologically sorted; [`Graph::backward`] walks it
//! once in reverse.

use crate::error::{NumError, Result};
use crate::gemm::{gemm, MatView};
use crate::kernels::{self, AttentionShape};
use crate::scalar::Scalar;
use crate::tensor::{axis_split, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddBias(Var, Var),
    RepeatRows {
        src: Var,
        times: usize,
    },
    LayerNorm {
        x: Var,
        affine: Option<(Var, Var)>,
        normed: Tensor<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Silu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: usize,
        probs: Vec<T>,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Recorded computation. Single-owner for the duration of a forward/backward
/// pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumError::dim(
            op,
            format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shapes checked by caller")
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(None, value, false)
    }

    /// Trainable, named leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.leaf(Some(name.into()), value, true)
    }

    pub fn leaf(&mut self, name: Option<String>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, kernel: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(kernel)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    /// Adds `bias: [D]` to every row of `x: [.., D]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [d] {
            return Err(NumError::dim(
                "add_bias",
                format!("bias {:?} does not match rows of {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (o, &bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    /// `[G, D]` → `[G·times, D]`, each row repeated `times` times in place.
    pub fn repeat_rows(&mut self, src: Var, times: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 || times == 0 {
            return Err(NumError::dim(
                "repeat_rows",
                format!("need a matrix and times > 0, got {:?} x{}", s, times),
            ));
        }
        let (g, d) = (s[0], s[1]);
        let mut data = Vec::with_capacity(g * times * d);
        for row in self.value(src).data().chunks_exact(d) {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let out = Tensor::new(&[g * times, d], data)?;
        self.push("repeat_rows", out, Op::RepeatRows { src, times }, &[src])
    }

    /// Layer normalization over the last axis, optionally with elementwise
    /// gain and offset.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(NumError::Contract(format!("layer_norm eps must be > 0, got {}", eps)));
        }
        let (normed, rstd) = kernels::layer_norm_core(self.value(x), eps)?;
        let mut out = normed.clone();
        let mut inputs = vec![x];
        if let Some((gain, offset)) = affine {
            let d = *self.shape(x).last().unwrap();
            if self.shape(gain) != [d] || self.shape(offset) != [d] {
                return Err(NumError::dim(
                    "layer_norm",
                    format!("gain {:?} / offset {:?} must be [{}]", self.shape(gain), self.shape(offset), d),
                ));
            }
            let (g, o) = (self.value(gain).data(), self.value(offset).data());
            for row in out.data_mut().chunks_exact_mut(d) {
                for ((v, &gg), &oo) in row.iter_mut().zip(g).zip(o) {
                    *v = *v * gg + oo;
                }
            }
            inputs.extend([gain, offset]);
        }
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                affine,
                normed,
                rstd,
            },
            &inputs,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::gelu(self.value(x))?;
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::silu(self.value(x))?;
        self.push("silu", out, Op::Silu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax(self.value(x), axis)?;
        self.push("softmax", out, Op::Softmax { x, axis }, &[x])
    }

    /// Multi-head self-attention over `groups` independent sequences stacked
    /// along the rows of `q`, `k`, `v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, groups: usize) -> Result<Var> {
        let shape = AttentionShape::resolve(self.value(q), self.value(k), self.value(v), heads, groups)?;
        let (out, probs) = kernels::attention_forward(self.value(q), self.value(k), self.value(v), &shape);
        self.push(
            "attention",
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            },
            &[q, k, v],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        if start + len > n {
            return Err(NumError::dim(
                "narrow",
                format!("range {}..{} exceeds axis {} of {:?}", start, start + len, axis, self.shape(x)),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        self.push("narrow", out, Op::Narrow { x, axis, start }, &[x])
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let out = Tensor::new(&shape, data)?;
        self.push("sum_axis", out, Op::SumAxis { x, axis }, &[x])
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(NumError::dim("gather", format!("index {} out of range {}", bad, n)));
        }
        let src = self.value(x).data();
        let out = Tensor::new(shape, index.iter().map(|&i| src[i]).collect())?;
        self.push("gather", out, Op::Gather { x, index }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel()).unwrap();
        let out = Tensor::scalar(self.value(x).sum() / n);
        self.push("mean", out, Op::Mean(x), &[x])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("mse", self.value(pred), self.value(target))?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = T::from_usize(p.numel()).unwrap();
        let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        self.push("mse", Tensor::scalar(total / n), Op::Mse(pred, target), &[pred, target])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
        }
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, n)| {
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (Var(i), n.name.clone(), g)
            })
            .collect();
        Ok(Gradients { leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(&[m, k]);
                    gemm(
                        T::one(),
                        g.data(),
                        MatView::dense(m, n),
                        bv.data(),
                        MatView::dense(k, n).t(),
                        T::zero(),
                        ga.data_mut(),
                        MatView::dense(m, k),
                    );
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(&[k, n]);
                    gemm(
                        T::one(),
                        av.data(),
                        MatView::dense(m, k).t(),
                        g.data(),
                        MatView::dense(m, n),
                        T::zero(),
                        gb.data_mut(),
                        MatView::dense(k, n),
                    );
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, zip_map(g, self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, zip_map(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|x| x * f));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let d = self.shape(*bias)[0];
                    let mut gb = Tensor::zeros(&[d]);
                    for row in g.data().chunks_exact(d) {
                        for (o, &v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::RepeatRows { src, times } => {
                let (rows, d) = (self.shape(*src)[0], self.shape(*src)[1]);
                let mut gs = Tensor::zeros(&[rows, d]);
                for (r, block) in g.data().chunks_exact(d * times).enumerate() {
                    let dst = &mut gs.data_mut()[r * d..(r + 1) * d];
                    for row in block.chunks_exact(d) {
                        for (o, &v) in dst.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                self.accumulate(grads, *src, gs);
            }
            Op::LayerNorm {
                x,
                affine,
                normed,
                rstd,
            } => {
                let d = *normed.shape().last().unwrap();
                let dn = T::from_usize(d).unwrap();
                let gain = affine.map(|(gain, _)| self.value(gain).data());
                if self.wants(*x) {
                    let mut gx = Tensor::zeros(normed.shape());
                    let mut dxhat = vec![T::zero(); d];
                    for (r, ((xh, gr), out)) in normed
                        .data()
                        .chunks_exact(d)
                        .zip(g.data().chunks_exact(d))
                        .zip(gx.data_mut().chunks_exact_mut(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dxhat[j] = gain.map_or(gr[j], |gn| gr[j] * gn[j]);
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / dn;
                        for j in 0..d {
                            out[j] = rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if let Some((gain, offset)) = affine {
                    let mut gg = Tensor::zeros(&[d]);
                    let mut go = Tensor::zeros(&[d]);
                    for (xh, gr) in normed.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                        for j in 0..d {
                            gg.data_mut()[j] += gr[j] * xh[j];
                            go.data_mut()[j] += gr[j];
                        }
                    }
                    self.accumulate(grads, *gain, gg);
                    self.accumulate(grads, *offset, go);
                }
            }
            Op::Gelu(x) => {
                let gx = zip_map(g, self.value(*x), |gg, xv| gg * kernels::gelu_grad_scalar(xv));
                self.accumulate(grads, *x, gx);
            }
            Op::Silu(x) => {
                let gx = zip_map(g, self.value(*x), |gg, xv| {
                    let s = kernels::sigmoid(xv);
                    gg * s * (T::one() + xv * (T::one() - s))
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, n, inner) = axis_split(y.shape(), *axis)?;
                let mut gx = Tensor::zeros(y.shape());
                let (yd, gd) = (y.data(), g.data());
                let out = gx.data_mut();
                for o in 0..outer {
                    let base = o * n * inner;
                    for i in 0..inner {
                        let mut dot = T::zero();
                        for j in 0..n {
                            let at = base + j * inner + i;
                            dot += yd[at] * gd[at];
                        }
                        for j in 0..n {
                            let at = base + j * inner + i;
                            out[at] = yd[at] * (gd[at] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let shape = AttentionShape::resolve(qv, kv, vv, *heads, *groups)?;
                let (dq, dk, dv) = kernels::attention_backward(qv, kv, vv, probs, g, &shape);
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Narrow { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis)?;
                let len = node.value.shape()[*axis];
                let mut gx = Tensor::zeros(self.shape(*x));
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    gx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis)?;
                let mut gx = Tensor::zeros(self.shape(*x));
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        gx.data_mut()[(o * n + j) * inner..(o * n + j + 1) * inner].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gather { x, index } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                for (&i, &v) in index.iter().zip(g.data()) {
                    gx.data_mut()[i] += v;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.shape(*x), g.data()[0]);
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                let gx = Tensor::full(self.shape(*x), g.data()[0] / n);
                self.accumulate(grads, *x, gx);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let two_over_n = T::from_f64_lossy(2.0) / T::from_usize(pv.numel()).unwrap();
                let s = g.data()[0] * two_over_n;
                let gp = zip_map(pv, tv, |a, b| (a - b) * s);
                if self.wants(*t) {
                    self.accumulate(grads, *t, gp.map(|x| -x));
                }
                self.accumulate(grads, *p, gp);
            }
        }
        Ok(())
    }
}

/// Gradients of every trainable leaf, in leaf-creation order. Leaves the loss
/// does not depend on carry zeros.
pub struct Gradients<T> {
    leaves: Vec<(Var, Option<String>, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.iter().find(|(var, _, _)| *var == v).map(|(_, _, g)| g)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.leaves
            .iter()
            .find(|(_, n, _)| n.as_deref() == Some(name))
            .map(|(_, _, g)| g)
    }

    /// `(name, gradient)` for named leaves.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.leaves
            .iter()
            .filter_map(|(_, n, g)| n.as_deref().map(|n| (n, g)))
    }

    pub fn into_named(self) -> Vec<(String, Tensor<T>)> {
        self.leaves
            .into_iter()
            .filter_map(|(_, n, g)| n.map(|n| (n, g)))
            .collect()
    }
}

// Copyright 2026 The CKI Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of a
//! scalar output with respect to every node that requires one. Shape
//! contracts are checked with assertions: a mismatch is a programming error
//! in the model definition, not a runtime condition.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, numel, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    AddTrailing(Var, Var),
    Linear(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    BlockLinear { x: Var, w: Var, b: Var },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Gelu(Var),
    Sigmoid(Var),
    LnClamped { x: Var, lo: f64, hi: f64 },
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    Stack { parts: Vec<Var>, axis: usize },
    PickLabels { x: Var, labels: Vec<usize> },
    GradReverse { x: Var, lambda: f64 },
    PairwiseDist(Var),
    DoubleCenter(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients returned by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Split `shape` at `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let n = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, n, inner)
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn erf_gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` detached from gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x).map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(t, Op::Affine(x, scale), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `x + b` with `b` broadcast over the leading axes of `x`.
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        let bs = vb.shape();
        let xs = vx.shape();
        assert!(
            xs.len() >= bs.len() && &xs[xs.len() - bs.len()..] == bs,
            "cannot broadcast {bs:?} onto {xs:?}"
        );
        let n = vb.len().max(1);
        let mut data = vx.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, &bv) in chunk.iter_mut().zip(vb.data()) {
                *d += bv;
            }
        }
        let t = Tensor::new(xs, data);
        let ng = self.ng(x) || self.ng(b);
        self.push(t, Op::AddTrailing(x, b), ng)
    }

    /// `x[..., k] · w[k, n]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.shape().len(), 2, "weight must be 2-D");
        let (k, n) = (vw.shape()[0], vw.shape()[1]);
        let (m, kx) = vx.rows();
        assert_eq!(kx, k, "matmul inner dimension mismatch {:?} x {:?}", vx.shape(), vw.shape());
        let mut out = vec![0.0; m * n];
        gemm_nn(vx.data(), vw.data(), &mut out, m, k, n);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.ng(x) || self.ng(w);
        self.push(Tensor::new(&shape, out), Op::Linear(x, w), ng)
    }

    /// Affine layer `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_trailing(y, b)
    }

    /// Batched matmul: `a[bt, m, k] · b[bt, k, n]`, or `a · bᵀ` with `b[bt, n, k]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm expects [bt, m, k] operands");
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b {
            assert_eq!(sb[2], k);
            sb[1]
        } else {
            assert_eq!(sb[1], k);
            sb[2]
        };
        let mut out = vec![0.0; bt * m * n];
        for i in 0..bt {
            let ad = &va.data()[i * m * k..(i + 1) * m * k];
            let bd = &vb.data()[i * k * n..(i + 1) * k * n];
            let od = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ad, bd, od, m, k, n);
            } else {
                gemm_nn(ad, bd, od, m, k, n);
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(&[bt, m, n], out), Op::Bmm { a, b, trans_b }, ng)
    }

    /// Per-block affine map: `x[bs, s, nb, l]`, `w[nb, l, d]`, `b[nb, d]` → `[bs, s, nb, d]`.
    /// Block `j` of every token group uses its own weights.
    pub fn block_linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let xs = vx.shape();
        let ws = vw.shape();
        assert!(xs.len() == 4 && ws.len() == 3, "block_linear expects 4-D input and 3-D weights");
        let (nb, l, d) = (ws[0], ws[1], ws[2]);
        assert_eq!(xs[2], nb);
        assert_eq!(xs[3], l);
        assert_eq!(vb.shape(), &[nb, d]);
        let groups = xs[0] * xs[1];
        let mut out = vec![0.0; groups * nb * d];
        for g in 0..groups {
            for j in 0..nb {
                let xr = &vx.data()[(g * nb + j) * l..(g * nb + j + 1) * l];
                let orow = &mut out[(g * nb + j) * d..(g * nb + j + 1) * d];
                orow.copy_from_slice(&vb.data()[j * d..(j + 1) * d]);
                gemm_nn(xr, &vw.data()[j * l * d..(j + 1) * l * d], orow, 1, l, d);
            }
        }
        let shape = [xs[0], xs[1], nb, d];
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor::new(&shape, out), Op::BlockLinear { x, w, b }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape);
        let ng = self.ng(x);
        self.push(t, Op::Reshape(x), ng)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let t = self.value(x).permute(perm);
        let ng = self.ng(x);
        self.push(t, Op::Permute(x, perm.to_vec()), ng)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (m, n) = vx.rows();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(vx.row(i), &mut out[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(vx.shape(), out);
        let ng = self.ng(x);
        self.push(t, Op::Softmax(x), ng)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (m, n) = vx.rows();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let r = vx.row(i);
            let lse = log_sum_exp(r);
            for j in 0..n {
                out[i * n + j] = r[j] - lse;
            }
        }
        let t = Tensor::new(vx.shape(), out);
        let ng = self.ng(x);
        self.push(t, Op::LogSoftmax(x), ng)
    }

    /// Layer normalization over the last axis, with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let (m, n) = vx.rows();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert!(g.len() == n && b.len() == n, "layer_norm affine size mismatch");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let r = vx.row(i);
            let (mu, rstd) = row_stats(r);
            for j in 0..n {
                out[i * n + j] = (r[j] - mu) * rstd * g[j] + b[j];
            }
        }
        let t = Tensor::new(vx.shape(), out);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(t, Op::LayerNorm { x, gamma, beta }, ng)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(erf_gelu);
        let ng = self.ng(x);
        self.push(t, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    /// `ln(clamp(x, lo, hi))`; zero gradient where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).map(|v| libm::log(v.clamp(lo, hi)));
        let ng = self.ng(x);
        self.push(t, Op::LnClamped { x, lo, hi }, ng)
    }

    /// `sqrt(max(x, 0))`; the gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| libm::sqrt(v.max(0.0)));
        let ng = self.ng(x);
        self.push(t, Op::Sqrt(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let v = self.value(x);
        let (outer, n, inner) = split_axis(v.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &v.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|d| *d *= inv);
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out), Op::MeanAxis { x, axis }, ng)
    }

    /// Stack equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "stack of nothing");
        let base = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            assert_eq!(self.value(p).shape(), base.as_slice(), "stack shape mismatch");
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis..]);
        let k = parts.len();
        let mut out = vec![0.0; outer * k * inner];
        for (j, &p) in parts.iter().enumerate() {
            let src = self.value(p).data();
            for o in 0..outer {
                out[(o * k + j) * inner..(o * k + j + 1) * inner]
                    .copy_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base.clone();
        shape.insert(axis, k);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::new(&shape, out), Op::Stack { parts: parts.to_vec(), axis }, ng)
    }

    /// `out[i] = x[i, labels[i]]` for 2-D `x`; labels are zero-based here.
    pub fn pick_labels(&mut self, x: Var, labels: &[usize]) -> Var {
        let v = self.value(x);
        let (m, n) = v.rows();
        assert_eq!(m, labels.len(), "one label per row");
        let out = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                assert!(l < n, "label {l} out of {n} columns");
                v.data()[i * n + l]
            })
            .collect();
        let ng = self.ng(x);
        self.push(Tensor::new(&[m], out), Op::PickLabels { x, labels: labels.to_vec() }, ng)
    }

    /// Identity forward; gradient multiplied by `-lambda` on the way back.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Var {
        let t = self.value(x).clone();
        let ng = self.ng(x);
        self.push(t, Op::GradReverse { x, lambda }, ng)
    }

    /// Euclidean distance matrix between the rows of a 2-D tensor.
    pub fn pairwise_dist(&mut self, x: Var) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape().len(), 2, "pairwise_dist expects [n, d]");
        let (n, _) = v.rows();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                let d = libm::sqrt(s);
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&[n, n], out), Op::PairwiseDist(x), ng)
    }

    /// Double centering `a_ij - ā_i. - ā_.j + ā_..` of a square matrix.
    pub fn double_center(&mut self, x: Var) -> Var {
        let t = double_center(self.value(x));
        let ng = self.ng(x);
        self.push(t, Op::DoubleCenter(x), ng)
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::full(self.value(out).shape(), 1.0));
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = gy.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                    self.accum(grads, *a, Tensor::new(va.shape(), d));
                }
                if self.ng(*b) {
                    let d = gy.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                    self.accum(grads, *b, Tensor::new(vb.shape(), d));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = gy.data().iter().zip(vb.data()).map(|(g, y)| g / y).collect();
                    self.accum(grads, *a, Tensor::new(va.shape(), d));
                }
                if self.ng(*b) {
                    let d = gy
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.accum(grads, *b, Tensor::new(vb.shape(), d));
                }
            }
            Op::Affine(x, s) => self.accum(grads, *x, gy.map(|g| g * s)),
            Op::AddTrailing(x, b) => {
                self.accum(grads, *x, gy.clone());
                if self.ng(*b) {
                    let vb = self.value(*b);
                    let n = vb.len().max(1);
                    let mut d = vec![0.0; vb.len()];
                    for chunk in gy.data().chunks(n) {
                        for (dv, g) in d.iter_mut().zip(chunk) {
                            *dv += g;
                        }
                    }
                    self.accum(grads, *b, Tensor::new(vb.shape(), d));
                }
            }
            Op::Linear(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (k, n) = (vw.shape()[0], vw.shape()[1]);
                let (m, _) = vx.rows();
                if self.ng(*x) {
                    let mut dx = vec![0.0; m * k];
                    gemm_nt(gy.data(), vw.data(), &mut dx, m, n, k);
                    self.accum(grads, *x, Tensor::new(vx.shape(), dx));
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; k * n];
                    gemm_tn(vx.data(), gy.data(), &mut dw, k, m, n);
                    self.accum(grads, *w, Tensor::new(vw.shape(), dw));
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bt, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let n = y.shape()[2];
                let mut da = if self.ng(*a) { Some(vec![0.0; bt * m * k]) } else { None };
                let mut db = if self.ng(*b) { Some(vec![0.0; bt * k * n]) } else { None };
                for t in 0..bt {
                    let g = &gy.data()[t * m * n..(t + 1) * m * n];
                    let ad = &va.data()[t * m * k..(t + 1) * m * k];
                    let bd = &vb.data()[t * k * n..(t + 1) * k * n];
                    if let Some(da) = da.as_mut() {
                        let o = &mut da[t * m * k..(t + 1) * m * k];
                        if *trans_b {
                            // b is [n, k]: dA = G · B
                            gemm_nn(g, bd, o, m, n, k);
                        } else {
                            // b is [k, n]: dA = G · Bᵀ
                            gemm_nt(g, bd, o, m, n, k);
                        }
                    }
                    if let Some(db) = db.as_mut() {
                        let o = &mut db[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            // dB[n, k] = Gᵀ · A
                            gemm_tn(g, ad, o, n, m, k);
                        } else {
                            // dB[k, n] = Aᵀ · G
                            gemm_tn(ad, g, o, k, m, n);
                        }
                    }
                }
                if let Some(da) = da {
                    self.accum(grads, *a, Tensor::new(va.shape(), da));
                }
                if let Some(db) = db {
                    self.accum(grads, *b, Tensor::new(vb.shape(), db));
                }
            }
            Op::BlockLinear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let xs = vx.shape();
                let (nb, l, d) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
                let groups = xs[0] * xs[1];
                let mut dx = if self.ng(*x) { Some(vec![0.0; vx.len()]) } else { None };
                let mut dw = if self.ng(*w) { Some(vec![0.0; vw.len()]) } else { None };
                let mut dbias = if self.ng(*b) { Some(vec![0.0; nb * d]) } else { None };
                for g in 0..groups {
                    for j in 0..nb {
                        let row = g * nb + j;
                        let gr = &gy.data()[row * d..(row + 1) * d];
                        let wj = &vw.data()[j * l * d..(j + 1) * l * d];
                        if let Some(dx) = dx.as_mut() {
                            gemm_nt(gr, wj, &mut dx[row * l..(row + 1) * l], 1, d, l);
                        }
                        if let Some(dw) = dw.as_mut() {
                            let xr = &vx.data()[row * l..(row + 1) * l];
                            gemm_tn(xr, gr, &mut dw[j * l * d..(j + 1) * l * d], l, 1, d);
                        }
                        if let Some(db) = dbias.as_mut() {
                            for (o, v) in db[j * d..(j + 1) * d].iter_mut().zip(gr) {
                                *o += v;
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    self.accum(grads, *x, Tensor::new(xs, dx));
                }
                if let Some(dw) = dw {
                    self.accum(grads, *w, Tensor::new(vw.shape(), dw));
                }
                if let Some(db) = dbias {
                    self.accum(grads, *b, Tensor::new(&[nb, d], db));
                }
            }
            Op::Reshape(x) => {
                let s = self.value(*x).shape();
                self.accum(grads, *x, gy.clone().reshape(s));
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accum(grads, *x, gy.permute(&inv));
            }
            Op::Softmax(x) => {
                let (m, n) = y.rows();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let yr = y.row(r);
                    let gr = gy.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::LogSoftmax(x) => {
                let (m, n) = y.rows();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let yr = y.row(r);
                    let gr = gy.row(r);
                    let gs: f64 = gr.iter().sum();
                    for j in 0..n {
                        d[r * n + j] = gr[j] - libm::exp(yr[j]) * gs;
                    }
                }
                self.accum(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::LayerNorm { x, gamma, beta } => {
                let vx = self.value(*x);
                let g = self.value(*gamma).data();
                let (m, n) = vx.rows();
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    let xr = vx.row(r);
                    let gr = gy.row(r);
                    let (mu, rstd) = row_stats(xr);
                    for j in 0..n {
                        xhat[j] = (xr[j] - mu) * rstd;
                        dxhat[j] = gr[j] * g[j];
                        dg[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    let mean_d: f64 = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx: f64 =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[r * n + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                    }
                }
                self.accum(grads, *x, Tensor::new(vx.shape(), dx));
                self.accum(grads, *gamma, Tensor::new(&[n], dg));
                self.accum(grads, *beta, Tensor::new(&[n], dbeta));
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let d = vx.data().iter().zip(gy.data()).map(|(&v, g)| g * erf_gelu_grad(v)).collect();
                self.accum(grads, *x, Tensor::new(vx.shape(), d));
            }
            Op::Sigmoid(x) => {
                let d = y.data().iter().zip(gy.data()).map(|(s, g)| g * s * (1.0 - s)).collect();
                self.accum(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::LnClamped { x, lo, hi } => {
                let vx = self.value(*x);
                let d = vx
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&v, g)| if v > *lo && v < *hi { g / v } else { 0.0 })
                    .collect();
                self.accum(grads, *x, Tensor::new(vx.shape(), d));
            }
            Op::Sqrt(x) => {
                let d = y
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&s, g)| if s > 0.0 { 0.5 * g / s } else { 0.0 })
                    .collect();
                self.accum(grads, *x, Tensor::new(y.shape(), d));
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape();
                self.accum(grads, *x, Tensor::full(s, gy.item()));
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                self.accum(grads, *x, Tensor::full(v.shape(), gy.item() / v.len() as f64));
            }
            Op::MeanAxis { x, axis } => {
                let v = self.value(*x);
                let (outer, n, inner) = split_axis(v.shape(), *axis);
                let inv = 1.0 / n as f64;
                let mut d = vec![0.0; v.len()];
                for o in 0..outer {
                    let src = &gy.data()[o * inner..(o + 1) * inner];
                    for a in 0..n {
                        for (dv, &g) in d[(o * n + a) * inner..(o * n + a + 1) * inner].iter_mut().zip(src) {
                            *dv = g * inv;
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(v.shape(), d));
            }
            Op::Stack { parts, axis } => {
                let base = self.value(parts[0]).shape().to_vec();
                let outer = numel(&base[..*axis]);
                let inner = numel(&base[*axis..]);
                let k = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    if !self.ng(p) {
                        continue;
                    }
                    let mut d = vec![0.0; outer * inner];
                    for o in 0..outer {
                        d[o * inner..(o + 1) * inner]
                            .copy_from_slice(&gy.data()[(o * k + j) * inner..(o * k + j + 1) * inner]);
                    }
                    self.accum(grads, p, Tensor::new(&base, d));
                }
            }
            Op::PickLabels { x, labels } => {
                let v = self.value(*x);
                let (_, n) = v.rows();
                let mut d = vec![0.0; v.len()];
                for (i, &l) in labels.iter().enumerate() {
                    d[i * n + l] = gy.data()[i];
                }
                self.accum(grads, *x, Tensor::new(v.shape(), d));
            }
            Op::GradReverse { x, lambda } => {
                let l = *lambda;
                self.accum(grads, *x, gy.map(|g| -l * g));
            }
            Op::PairwiseDist(x) => {
                let v = self.value(*x);
                let (n, dd) = v.rows();
                let mut d = vec![0.0; n * dd];
                for i in 0..n {
                    for j in 0..n {
                        let dist = y.data()[i * n + j];
                        if i == j || dist == 0.0 {
                            continue;
                        }
                        // both (i,j) and (j,i) depend on rows i and j
                        let coef = gy.data()[i * n + j] / dist;
                        for c in 0..dd {
                            let diff = v.data()[i * dd + c] - v.data()[j * dd + c];
                            d[i * dd + c] += coef * diff;
                            d[j * dd + c] -= coef * diff;
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(v.shape(), d));
            }
            Op::DoubleCenter(x) => {
                // The centering projection is self-adjoint.
                self.accum(grads, *x, double_center(gy));
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(r: &[f64]) -> f64 {
    let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = r.iter().map(|&v| libm::exp(v - mx)).sum();
    mx + libm::log(s)
}

pub(crate) fn softmax_row(r: &[f64], out: &mut [f64]) {
    let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(r) {
        *o = libm::exp(v - mx);
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn row_stats(r: &[f64]) -> (f64, f64) {
    let n = r.len() as f64;
    let mu = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / libm::sqrt(var + LN_EPS))
}

fn double_center(a: &Tensor) -> Tensor {
    let s = a.shape();
    assert!(s.len() == 2 && s[0] == s[1], "double centering needs a square matrix");
    let n = s[0];
    let d = a.data();
    let mut row = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        for j in 0..n {
            row[i] += d[i * n + j];
            col[j] += d[i * n + j];
            grand += d[i * n + j];
        }
    }
    let inv = 1.0 / n as f64;
    grand *= inv * inv;
    Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        d[k] - row[i] * inv - col[j] * inv + grand
    })
}

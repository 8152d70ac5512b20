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

//! Parameter storage and the small set of layers the models are built from.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Index;

use rand::Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Place every parameter on the tape as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| g.param(t.clone())).collect() }
    }

    /// Place every parameter on the tape as a constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect() }
    }
}

/// Parameters of one [`ParamStore`] as they appear on a particular tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    /// Gradient per parameter, `None` where the loss does not depend on it.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Glorot-uniform initialization.
pub fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(alloc::format!("{name}.w"), glorot(rng, &[fan_in, fan_out], fan_in, fan_out));
        let b = store.add(alloc::format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.linear(x, p[self.w], p[self.b])
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.w).data_mut().fill(0.0);
        store.get_mut(self.b).data_mut().fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(alloc::format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(alloc::format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, p[self.gamma], p[self.beta])
    }
}

/// `Linear → GELU → Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut impl Rng) -> Self {
        let fc1 = Linear::new(store, &alloc::format!("{name}.fc1"), dims[0], dims[1], rng);
        let fc2 = Linear::new(store, &alloc::format!("{name}.fc2"), dims[1], dims[2], rng);
        Mlp { fc1, fc2 }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.fc1.forward(g, p, x);
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

/// Multi-head scaled dot-product attention over `[batch, tokens, dim]`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "embed dim {dim} not divisible by {heads} heads");
        Attention {
            q: Linear::new(store, &alloc::format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &alloc::format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &alloc::format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &alloc::format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let x = g.reshape(x, &[b, n, h, d / h]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        g.reshape(x, &[b * h, n, d / h])
    }

    /// Queries from `query`, keys and values from `context`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, query: Var, context: Var) -> Var {
        let s = g.shape(query).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let q = self.q.forward(g, p, query);
        let k = self.k.forward(g, p, context);
        let v = self.v.forward(g, p, context);
        let (q, k, v) = (self.split_heads(g, q), self.split_heads(g, k), self.split_heads(g, v));
        let scores = g.bmm(q, k, true);
        let scores = g.scale(scores, 1.0 / libm::sqrt((d / h) as f64));
        let attn = g.softmax(scores);
        let o = g.bmm(attn, v, false);
        let o = g.reshape(o, &[b, h, n, d / h]);
        let o = g.permute(o, &[0, 2, 1, 3]);
        let o = g.reshape(o, &[b, n, d]);
        self.out.forward(g, p, o)
    }
}

/// Pre-norm transformer layer: `y = MSA(LN(z)) + z`, `z' = FFN(LN(y)) + y`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: Mlp,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &alloc::format!("{name}.ln1"), dim),
            attn: Attention::new(store, &alloc::format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &alloc::format!("{name}.ln2"), dim),
            ffn: Mlp::new(store, &alloc::format!("{name}.ffn"), [dim, ffn_dim, dim], rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let n = self.ln1.forward(g, p, z);
        let a = self.attn.forward(g, p, n, n);
        let y = g.add(a, z);
        let n = self.ln2.forward(g, p, y);
        let f = self.ffn.forward(g, p, n);
        g.add(f, y)
    }

    /// Zero the attention and FFN output projections, making the block the identity.
    pub fn zero_outputs(&self, store: &mut ParamStore) {
        self.attn.out.zero(store);
        self.ffn.fc2.zero(store);
    }
}

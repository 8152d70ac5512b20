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

//! Interaction-fusion spatial-spectral (IFSS) transformer.
//!
//! A window `[B, w, w, C]` is cut into non-overlapping `p_h × p_w × p_c`
//! patches. Token order is (spatial row, spatial column, spectral block) and
//! each token's elements are laid out as (row in patch, column in patch,
//! band in block). Two token streams are built from the same patches:
//!
//! * spatial: one shared linear embedding plus learned positional encodings;
//! * spectral: a distinct embedding per spectral block.
//!
//! Each stream runs `depth` pre-norm transformer blocks. The interaction
//! fusion then forms four views (two self-attention, two cross-attention),
//! compresses them with `Conv(GELU(Conv(Conv(LN(z_m))))) + z_m` where the
//! first 1×1 convolution reduces the view axis 4 → 1 and the residual is the
//! view mean, and finishes with `z = ẑ + FFN(LN(ẑ))`. Tokens are mean-pooled
//! into one `D`-vector per window.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Attention, Bound, LayerNorm, Linear, Mlp, ParamId, ParamStore, TransformerBlock};
use crate::tensor::Tensor;

fn default_ffn_mult() -> usize {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub patch_c: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// FFN hidden width as a multiple of `embed_dim`.
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig { patch_h: 4, patch_w: 4, patch_c: 4, embed_dim: 64, depth: 2, heads: 4, ffn_mult: 2 }
    }
}

/// Token layout derived from a [`PatchConfig`] and an input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub window: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub blocks: usize,
    /// `N = rows · cols · blocks`
    pub tokens: usize,
    /// `p_h · p_w · p_c`
    pub token_len: usize,
}

impl PatchGeometry {
    pub fn spatial_patches(&self) -> usize {
        self.rows * self.cols
    }
}

impl PatchConfig {
    pub fn geometry(&self, window: usize, channels: usize) -> Result<PatchGeometry> {
        let (ph, pw, pc) = (self.patch_h, self.patch_w, self.patch_c);
        if ph == 0 || pw == 0 || pc == 0 {
            return Err(Error::Shape("patch sizes must be positive".into()));
        }
        if window == 0 || window % ph != 0 || window % pw != 0 {
            return Err(Error::Shape(format!("window {window} not divisible by spatial patch {ph}x{pw}")));
        }
        if channels == 0 || channels % pc != 0 {
            return Err(Error::Shape(format!("{channels} channels not divisible by spectral patch {pc}")));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Shape(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        let (rows, cols, blocks) = (window / ph, window / pw, channels / pc);
        Ok(PatchGeometry {
            window,
            channels,
            rows,
            cols,
            blocks,
            tokens: rows * cols * blocks,
            token_len: ph * pw * pc,
        })
    }
}

const PATCH_PERM: [usize; 7] = [0, 1, 3, 5, 2, 4, 6];
const UNPATCH_PERM: [usize; 7] = [0, 1, 4, 2, 5, 3, 6];

fn split_shape(cfg: &PatchConfig, geo: &PatchGeometry, batch: usize) -> [usize; 7] {
    [batch, geo.rows, cfg.patch_h, geo.cols, cfg.patch_w, geo.blocks, cfg.patch_c]
}

/// `[B, w, w, C]` → `[B, N, p_h·p_w·p_c]`.
pub fn patchify(x: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[1] != s[2] {
        return Err(Error::Shape(format!("expected [B, w, w, C], got {s:?}")));
    }
    let geo = cfg.geometry(s[1], s[3])?;
    let split = split_shape(cfg, &geo, s[0]);
    Ok(x.clone().reshape(&split).permute(&PATCH_PERM).reshape(&[s[0], geo.tokens, geo.token_len]))
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, cfg: &PatchConfig, window: usize, channels: usize) -> Result<Tensor> {
    let geo = cfg.geometry(window, channels)?;
    let s = tokens.shape();
    if s.len() != 3 || s[1] != geo.tokens || s[2] != geo.token_len {
        return Err(Error::Shape(format!("token array {s:?} does not match geometry {geo:?}")));
    }
    let b = s[0];
    let grouped = [b, geo.rows, geo.cols, geo.blocks, cfg.patch_h, cfg.patch_w, cfg.patch_c];
    Ok(tokens.clone().reshape(&grouped).permute(&UNPATCH_PERM).reshape(&[b, window, window, channels]))
}

/// Final-layer tokens of both streams.
#[derive(Clone, Copy, Debug)]
pub struct BranchFeatures {
    pub spectral_tokens: Var,
    pub spatial_tokens: Var,
}

/// The four fusion views, each `[B, N, D]`.
#[derive(Clone, Copy, Debug)]
pub struct FusionMatrix {
    pub z11: Var,
    pub z12: Var,
    pub z21: Var,
    pub z22: Var,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct IfssTrace {
    pub branches: BranchFeatures,
    pub fusion: FusionMatrix,
    /// `z`, `[B, N, D]`
    pub fused: Var,
    /// Token mean, `[B, D]`
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct IfssNet {
    pub cfg: PatchConfig,
    pub geo: PatchGeometry,
    spatial_embed: Linear,
    positions: ParamId,
    spectral_w: ParamId,
    spectral_b: ParamId,
    spectral_blocks: Vec<TransformerBlock>,
    spatial_blocks: Vec<TransformerBlock>,
    fuse_ln: LayerNorm,
    intra_spectral: Attention,
    intra_spatial: Attention,
    cross: Attention,
    comp_ln: LayerNorm,
    view_reduce: Linear,
    comp_mix1: Linear,
    comp_mix2: Linear,
    out_ln: LayerNorm,
    out_ffn: Mlp,
}

impl IfssNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: PatchConfig,
        window: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let geo = cfg.geometry(window, channels)?;
        let (d, l, h) = (cfg.embed_dim, geo.token_len, cfg.heads);
        let ffn = cfg.ffn_mult.max(1) * d;
        let spatial_embed = Linear::new(store, &format!("{name}.spatial_embed"), l, d, rng);
        let positions = store.add(
            format!("{name}.positions"),
            Tensor::from_fn(&[geo.tokens, d], |_| rng.random_range(-0.02..0.02)),
        );
        let spectral_w = store.add(
            format!("{name}.spectral_embed.w"),
            crate::nn::glorot(rng, &[geo.blocks, l, d], l, d),
        );
        let spectral_b = store.add(format!("{name}.spectral_embed.b"), Tensor::zeros(&[geo.blocks, d]));
        let spectral_blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.spectral.{i}"), d, h, ffn, rng))
            .collect();
        let spatial_blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.spatial.{i}"), d, h, ffn, rng))
            .collect();
        Ok(IfssNet {
            cfg,
            geo,
            spatial_embed,
            positions,
            spectral_w,
            spectral_b,
            spectral_blocks,
            spatial_blocks,
            fuse_ln: LayerNorm::new(store, &format!("{name}.fusion.ln"), d),
            intra_spectral: Attention::new(store, &format!("{name}.fusion.self_spectral"), d, h, rng),
            intra_spatial: Attention::new(store, &format!("{name}.fusion.self_spatial"), d, h, rng),
            cross: Attention::new(store, &format!("{name}.fusion.cross"), d, h, rng),
            comp_ln: LayerNorm::new(store, &format!("{name}.comp.ln"), d),
            view_reduce: Linear::new(store, &format!("{name}.comp.view"), 4, 1, rng),
            comp_mix1: Linear::new(store, &format!("{name}.comp.mix1"), d, d, rng),
            comp_mix2: Linear::new(store, &format!("{name}.comp.mix2"), d, d, rng),
            out_ln: LayerNorm::new(store, &format!("{name}.out.ln"), d),
            out_ffn: Mlp::new(store, &format!("{name}.out.ffn"), [d, ffn, d], rng),
        })
    }

    pub fn window(&self) -> usize {
        self.geo.window
    }

    pub fn channels(&self) -> usize {
        self.geo.channels
    }

    /// Patch tokens of a `[B, w, w, C]` input, on the tape.
    pub fn patchify(&self, g: &mut Graph, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        assert!(
            s.len() == 4 && s[1] == self.geo.window && s[2] == self.geo.window && s[3] == self.geo.channels,
            "input {s:?} does not match window {} / channels {}",
            self.geo.window,
            self.geo.channels
        );
        let split = split_shape(&self.cfg, &self.geo, s[0]);
        let r = g.reshape(x, &split);
        let r = g.permute(r, &PATCH_PERM);
        g.reshape(r, &[s[0], self.geo.tokens, self.geo.token_len])
    }

    pub fn embed_spatial(&self, g: &mut Graph, p: &Bound, tokens: Var) -> Var {
        let e = self.spatial_embed.forward(g, p, tokens);
        g.add_trailing(e, p[self.positions])
    }

    pub fn embed_spectral(&self, g: &mut Graph, p: &Bound, tokens: Var) -> Var {
        let b = g.shape(tokens)[0];
        let geo = self.geo;
        let grouped = g.reshape(tokens, &[b, geo.spatial_patches(), geo.blocks, geo.token_len]);
        let e = g.block_linear(grouped, p[self.spectral_w], p[self.spectral_b]);
        g.reshape(e, &[b, geo.tokens, self.cfg.embed_dim])
    }

    pub fn spectral_branch(&self, g: &mut Graph, p: &Bound, mut z: Var) -> Var {
        for blk in &self.spectral_blocks {
            z = blk.forward(g, p, z);
        }
        z
    }

    pub fn spatial_branch(&self, g: &mut Graph, p: &Bound, mut z: Var) -> Var {
        for blk in &self.spatial_blocks {
            z = blk.forward(g, p, z);
        }
        z
    }

    pub fn fusion_matrix(&self, g: &mut Graph, p: &Bound, br: &BranchFeatures) -> Result<FusionMatrix> {
        if g.shape(br.spectral_tokens) != g.shape(br.spatial_tokens) {
            return Err(Error::Shape(format!(
                "branch shapes differ: {:?} vs {:?}",
                g.shape(br.spectral_tokens),
                g.shape(br.spatial_tokens)
            )));
        }
        let spec = self.fuse_ln.forward(g, p, br.spectral_tokens);
        let spat = self.fuse_ln.forward(g, p, br.spatial_tokens);
        Ok(FusionMatrix {
            z11: self.intra_spectral.forward(g, p, spec, spec),
            z12: self.cross.forward(g, p, spec, spat),
            z21: self.cross.forward(g, p, spat, spec),
            z22: self.intra_spatial.forward(g, p, spat, spat),
        })
    }

    /// `F_comp` followed by the final residual FFN; returns `z` as `[B, N, D]`.
    pub fn fuse(&self, g: &mut Graph, p: &Bound, m: &FusionMatrix) -> Var {
        let zm = g.stack(&[m.z11, m.z12, m.z21, m.z22], 1);
        let s = g.shape(zm).to_vec();
        let (b, n, d) = (s[0], s[2], s[3]);
        let normed = self.comp_ln.forward(g, p, zm);
        let views_last = g.permute(normed, &[0, 2, 3, 1]);
        let reduced = self.view_reduce.forward(g, p, views_last);
        let reduced = g.reshape(reduced, &[b, n, d]);
        let h = self.comp_mix1.forward(g, p, reduced);
        let h = g.gelu(h);
        let h = self.comp_mix2.forward(g, p, h);
        let residual = g.mean_axis(zm, 1);
        let zhat = g.add(h, residual);
        let n2 = self.out_ln.forward(g, p, zhat);
        let f = self.out_ffn.forward(g, p, n2);
        g.add(zhat, f)
    }

    pub fn forward_trace(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<IfssTrace> {
        let tokens = self.patchify(g, x);
        let spec = self.embed_spectral(g, p, tokens);
        let spat = self.embed_spatial(g, p, tokens);
        let branches = BranchFeatures {
            spectral_tokens: self.spectral_branch(g, p, spec),
            spatial_tokens: self.spatial_branch(g, p, spat),
        };
        let fusion = self.fusion_matrix(g, p, &branches)?;
        let fused = self.fuse(g, p, &fusion);
        let pooled = g.mean_axis(fused, 1);
        Ok(IfssTrace { branches, fusion, fused, pooled })
    }

    /// `[B, w, w, C]` → `[B, D]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        self.forward_trace(g, p, x).expect("branch shapes are fixed by construction").pooled
    }

    /// Zero every residual-branch output projection: the transformer blocks
    /// and the final FFN stage become identities.
    pub fn zero_residual_outputs(&self, store: &mut ParamStore) {
        for blk in self.spectral_blocks.iter().chain(&self.spatial_blocks) {
            blk.zero_outputs(store);
        }
        self.out_ffn.fc2.zero(store);
    }

    pub fn spectral_blocks(&self) -> &[TransformerBlock] {
        &self.spectral_blocks
    }

    pub fn spatial_blocks(&self) -> &[TransformerBlock] {
        &self.spatial_blocks
    }

    pub fn spectral_embedding_ids(&self) -> (ParamId, ParamId) {
        (self.spectral_w, self.spectral_b)
    }
}

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

//! Cross-scene knowledge integration: spectral alignment, source-similarity
//! weighting and complementary-information distillation.
//!
//! Component naming follows the method: `F_*` are the per-domain spectral
//! encoders into the common feature space, `I`/`I'` the adversarial and
//! non-adversarial domain discriminators, `G`/`G'`/`G_stu` the IFSS learners
//! and `T_*` the classification heads.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_row, Graph, Var};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::ifss::{IfssNet, PatchConfig};
use crate::nn::{Bound, Linear, Mlp, ParamStore};
use crate::tensor::Tensor;

/// Clamp applied to every probability before a logarithm.
pub const PROB_EPS: f64 = 1e-7;
/// Variance floor under which distance correlation is reported as 0.
pub const DCOR_VAR_FLOOR: f64 = 1e-12;

/// Architecture sizes of a [`CkiModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub source_bands: usize,
    pub target_bands: usize,
    pub source_classes: usize,
    pub target_classes: usize,
    pub window: usize,
    pub common_channels: usize,
    pub encoder_hidden: usize,
    pub head_hidden: usize,
    pub disc_hidden: usize,
}

impl ModelDims {
    pub fn new(source_bands: usize, target_bands: usize, source_classes: usize, target_classes: usize) -> Self {
        ModelDims {
            source_bands,
            target_bands,
            source_classes,
            target_classes,
            window: 8,
            common_channels: 16,
            encoder_hidden: 32,
            head_hidden: 64,
            disc_hidden: 32,
        }
    }
}

/// Which components of the method are switched on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Component>", into = "Vec<Component>")]
pub struct AblationFlags {
    pub asc: bool,
    pub cksp: bool,
    pub ce: bool,
    pub di: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Component {
    Asc,
    Cksp,
    Ce,
    Di,
}

impl From<Vec<Component>> for AblationFlags {
    fn from(v: Vec<Component>) -> Self {
        let mut f = AblationFlags::none();
        for c in v {
            match c {
                Component::Asc => f.asc = true,
                Component::Cksp => f.cksp = true,
                Component::Ce => f.ce = true,
                Component::Di => f.di = true,
            }
        }
        f
    }
}

impl From<AblationFlags> for Vec<Component> {
    fn from(f: AblationFlags) -> Self {
        let mut v = Vec::new();
        if f.asc {
            v.push(Component::Asc);
        }
        if f.cksp {
            v.push(Component::Cksp);
        }
        if f.ce {
            v.push(Component::Ce);
        }
        if f.di {
            v.push(Component::Di);
        }
        v
    }
}

impl AblationFlags {
    pub const fn none() -> Self {
        AblationFlags { asc: false, cksp: false, ce: false, di: false }
    }

    pub const fn all() -> Self {
        AblationFlags { asc: true, cksp: true, ce: true, di: true }
    }

    /// The cumulative ablation ladder: ∅, ASC, ASC+CKSP, ASC+CKSP+CE, all.
    pub fn ladder() -> [AblationFlags; 5] {
        let mut rows = [AblationFlags::none(); 5];
        for (i, row) in rows.iter_mut().enumerate() {
            row.asc = i >= 1;
            row.cksp = i >= 2;
            row.ce = i >= 3;
            row.di = i >= 4;
        }
        rows
    }

    /// Short row label, e.g. `ASC+CKSP`, or `baseline` when nothing is on.
    pub fn label(&self) -> alloc::string::String {
        let parts: Vec<Component> = (*self).into();
        if parts.is_empty() {
            return "baseline".into();
        }
        let names: Vec<&str> = parts
            .iter()
            .map(|c| match c {
                Component::Asc => "ASC",
                Component::Cksp => "CKSP",
                Component::Ce => "CE",
                Component::Di => "DI",
            })
            .collect();
        names.join("+")
    }
}

/// How the reverse-distillation gradients reach the two sides of each KL pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillSchedule {
    /// Teachers and student receive KL gradients every step.
    #[default]
    Continuous,
    /// Even steps update the student, odd steps update the teachers.
    Alternating,
}

fn default_tau() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Adversarial weight; normally driven by the warm-up schedule.
    #[serde(default)]
    pub lambda_adv: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Temperature of the complementary-teacher distillation term.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub distill: DistillSchedule,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_adv: 1.0, alpha: 1.0, beta: 1.0, gamma: 1.0, tau: default_tau(), distill: DistillSchedule::Continuous }
    }
}

/// Scalar value of every loss term of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub e_i: f64,
    pub e_i_prime: f64,
    pub e_ts: f64,
    pub e_tt: f64,
    pub e_dc: f64,
    pub e_kl1: f64,
    pub e_kl2: f64,
    pub e_tt_prime: f64,
    pub e_t_stu: f64,
    pub total: f64,
}

impl LossReport {
    /// The overall objective under `flags` for the stored parts.
    pub fn combine(&self, w: &LossWeights, flags: &AblationFlags) -> f64 {
        let mut t = self.e_ts + self.e_tt;
        if flags.asc {
            t += w.lambda_adv * self.e_i;
        }
        if flags.cksp {
            t += self.e_i_prime;
        }
        if flags.ce {
            t += w.beta * self.e_tt_prime + self.e_dc;
        }
        if flags.di {
            t += w.alpha * (self.e_kl1 + self.e_kl2) + w.gamma * self.e_t_stu;
        }
        t
    }

    pub fn all_finite(&self) -> bool {
        [
            self.e_i,
            self.e_i_prime,
            self.e_ts,
            self.e_tt,
            self.e_dc,
            self.e_kl1,
            self.e_kl2,
            self.e_tt_prime,
            self.e_t_stu,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Per-sample source weights; `pre_clamp` in `[-1, 1]`, `omega` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub pre_clamp: Vec<f64>,
    pub omega: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    /// `T_t ∘ G ∘ F_t`
    Shared,
    /// `T'_t ∘ G' ∘ F'_t`
    Complementary,
    /// `T_stu ∘ G_stu ∘ F_t`
    Student,
}

/// Identity forward; backward multiplies incoming gradients by `-lambda`.
pub fn grl_forward_backward(g: &mut Graph, features: Var, lambda: f64) -> Var {
    g.grad_reverse(features, lambda)
}

/// `-mean ln p_src - mean ln(1 - p_tgt)` with probabilities clamped to `[ε, 1-ε]`.
pub fn domain_bce(g: &mut Graph, p_src: Var, p_tgt: Var) -> Var {
    let ls = g.ln_clamped(p_src, PROB_EPS, 1.0 - PROB_EPS);
    let ms = g.mean(ls);
    let q = g.affine(p_tgt, -1.0, 1.0);
    let lt = g.ln_clamped(q, PROB_EPS, 1.0 - PROB_EPS);
    let mt = g.mean(lt);
    let s = g.add(ms, mt);
    g.scale(s, -1.0)
}

/// Spectral encoder: two 1×1 (per-pixel, band-mixing) convolutions with GELU.
#[derive(Clone, Debug)]
pub struct Encoder {
    conv1: Linear,
    conv2: Linear,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, bands: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Encoder {
            conv1: Linear::new(store, &format!("{name}.conv1"), bands, hidden, rng),
            conv2: Linear::new(store, &format!("{name}.conv2"), hidden, out, rng),
        }
    }

    /// `[B, w, w, bands]` → `[B, w, w, C_common]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.conv1.forward(g, p, x);
        let h = g.gelu(h);
        self.conv2.forward(g, p, h)
    }
}

/// Domain discriminator over spatially pooled encoder features.
#[derive(Clone, Debug)]
pub struct Discriminator {
    mlp: Mlp,
}

impl Discriminator {
    fn new(store: &mut ParamStore, name: &str, channels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Discriminator { mlp: Mlp::new(store, name, [channels, hidden, 1], rng) }
    }

    /// `[B, w, w, C]` → source probability `[B, 1]`; `reverse` inserts a
    /// gradient-reversal layer with that weight before the classifier.
    pub fn forward(&self, g: &mut Graph, p: &Bound, features: Var, reverse: Option<f64>) -> Var {
        let s = g.shape(features).to_vec();
        let flat = g.reshape(features, &[s[0], s[1] * s[2], s[3]]);
        let mut pooled = g.mean_axis(flat, 1);
        if let Some(l) = reverse {
            pooled = grl_forward_backward(g, pooled, l);
        }
        let logit = self.mlp.forward(g, p, pooled);
        g.sigmoid(logit)
    }
}

/// Adversarial domain loss: features pass through gradient reversal before `I`.
pub fn adversarial_domain_loss(
    g: &mut Graph,
    p: &Bound,
    src_feat: Var,
    tgt_feat: Var,
    disc: &Discriminator,
    lambda: f64,
) -> Var {
    let ps = disc.forward(g, p, src_feat, Some(lambda));
    let pt = disc.forward(g, p, tgt_feat, Some(lambda));
    domain_bce(g, ps, pt)
}

/// Same cross-entropy as [`adversarial_domain_loss`] on detached features,
/// so `I'` learns without shaping the encoders.
pub fn nonadv_domain_loss(g: &mut Graph, p: &Bound, src_feat: Var, tgt_feat: Var, disc: &Discriminator) -> Var {
    let s = g.detach(src_feat);
    let t = g.detach(tgt_feat);
    let ps = disc.forward(g, p, s, None);
    let pt = disc.forward(g, p, t, None);
    domain_bce(g, ps, pt)
}

/// `H(p) / ln K` per row, with `0 ln 0 = 0`.
pub fn normalized_entropy(probs: &Tensor) -> Result<Vec<f64>> {
    let (rows, k) = probs.rows();
    if probs.shape().len() != 2 || k < 2 {
        return Err(Error::Shape(format!("expected [B, K>=2] probabilities, got {:?}", probs.shape())));
    }
    let norm = libm::log(k as f64);
    (0..rows)
        .map(|i| {
            let r = probs.row(i);
            if r.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::NotADistribution(format!("row {i} has negative or non-finite entries")));
            }
            let s: f64 = r.iter().sum();
            if libm::fabs(s - 1.0) > 1e-6 {
                return Err(Error::NotADistribution(format!("row {i} sums to {s}")));
            }
            let h: f64 = r.iter().filter(|&&v| v > 0.0).map(|&v| -v * libm::log(v)).sum();
            Ok(h / norm)
        })
        .collect()
}

/// Row-wise softmax of a `[B, K]` value.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (m, n) = logits.rows();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        softmax_row(logits.row(i), &mut out[i * n..(i + 1) * n]);
    }
    Tensor::new(logits.shape(), out)
}

/// `ω = H(softmax(logits)) / ln|C_s| - I'`, clamped to `[0, 1]`.
pub fn source_weight(src_logits: &Tensor, src_domain_prob: &[f64]) -> Result<WeightVector> {
    let probs = softmax_rows(src_logits);
    let h = normalized_entropy(&probs)?;
    if h.len() != src_domain_prob.len() {
        return Err(Error::Shape("one domain probability per source sample".into()));
    }
    let pre_clamp: Vec<f64> = h.iter().zip(src_domain_prob).map(|(h, d)| h - d).collect();
    let omega = pre_clamp.iter().map(|w| w.clamp(0.0, 1.0)).collect();
    Ok(WeightVector { pre_clamp, omega })
}

fn zero_based(labels: &[usize], classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| if l == 0 || l > classes { Err(Error::LabelOutOfRange { label: l, classes }) } else { Ok(l - 1) })
        .collect()
}

/// Per-sample cross-entropy `[B]` of `[B, K]` logits against 1-based labels.
pub fn per_sample_ce(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let k = g.shape(logits)[1];
    let idx = zero_based(labels, k)?;
    let lp = g.log_softmax(logits);
    let picked = g.pick_labels(lp, &idx);
    Ok(g.scale(picked, -1.0))
}

/// Mean cross-entropy against 1-based labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let ce = per_sample_ce(g, logits, labels)?;
    Ok(g.mean(ce))
}

/// `mean_i ω_i · CE(y_i, logits_i)` with `ω` held constant.
pub fn weighted_source_ce(g: &mut Graph, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
    if weights.len() != labels.len() {
        return Err(Error::Shape(format!("{} weights for {} samples", weights.len(), labels.len())));
    }
    let ce = per_sample_ce(g, logits, labels)?;
    let w = g.constant(Tensor::new(&[weights.len()], weights.to_vec()));
    let weighted = g.mul(ce, w);
    Ok(g.mean(weighted))
}

/// Sample distance correlation between the rows of `a [n, d1]` and `b [n, d2]`.
pub fn distance_correlation(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (na, nb) = (g.shape(a)[0], g.shape(b)[0]);
    if g.shape(a).len() != 2 || g.shape(b).len() != 2 || na != nb {
        return Err(Error::Shape("distance correlation needs [n, d] inputs with equal n".into()));
    }
    if na < 2 {
        return Err(Error::Invalid("distance correlation needs n >= 2".into()));
    }
    let da = g.pairwise_dist(a);
    let ca = g.double_center(da);
    let db = g.pairwise_dist(b);
    let cb = g.double_center(db);
    let ab = g.mul(ca, cb);
    let dcov = g.mean(ab);
    let aa = g.mul(ca, ca);
    let var_a = g.mean(aa);
    let bb = g.mul(cb, cb);
    let var_b = g.mean(bb);
    if g.value(var_a).item() < DCOR_VAR_FLOOR || g.value(var_b).item() < DCOR_VAR_FLOOR {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let prod = g.mul(var_a, var_b);
    let den = g.sqrt(prod);
    let ratio = g.div(dcov, den);
    Ok(g.sqrt(ratio))
}

/// Value-only [`distance_correlation`].
pub fn dcor(a: &Tensor, b: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let d = distance_correlation(&mut g, va, vb)?;
    Ok(g.value(d).item())
}

/// `KL(p_s ‖ p_t) + KL(p_t ‖ p_s)` averaged over rows, `p = softmax(logits / τ)`.
/// Gradients reach both logit sets.
pub fn bidirectional_kl(g: &mut Graph, student_logits: Var, teacher_logits: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    if g.shape(student_logits) != g.shape(teacher_logits) {
        return Err(Error::Shape("student and teacher logits differ in shape".into()));
    }
    let rows = g.value(student_logits).rows().0;
    let s = g.scale(student_logits, 1.0 / tau);
    let t = g.scale(teacher_logits, 1.0 / tau);
    let (ps, pt) = (g.softmax(s), g.softmax(t));
    let (ls, lt) = (g.log_softmax(s), g.log_softmax(t));
    let dp = g.sub(ps, pt);
    let dl = g.sub(ls, lt);
    let prod = g.mul(dp, dl);
    let sum = g.sum(prod);
    Ok(g.scale(sum, 1.0 / rows as f64))
}

/// Everything produced by one training step.
pub struct StepOutput {
    pub report: LossReport,
    /// Source weights; all ones without the similarity mechanism.
    pub weights: Option<WeightVector>,
    /// `I'(F_s(x))` per source sample when the similarity mechanism is on.
    pub source_domain_prob: Option<Vec<f64>>,
    /// Gradient per parameter of the step objective.
    pub grads: Vec<Option<Tensor>>,
}

/// Full parameter set of the method.
#[derive(Clone, Debug)]
pub struct CkiModel {
    pub dims: ModelDims,
    pub patch: PatchConfig,
    pub store: ParamStore,
    pub f_s: Encoder,
    pub f_t: Encoder,
    pub f_t_prime: Encoder,
    pub disc: Discriminator,
    pub disc_prime: Discriminator,
    pub g: IfssNet,
    pub g_prime: IfssNet,
    pub g_stu: IfssNet,
    pub t_s: Mlp,
    pub t_t: Mlp,
    pub t_t_prime: Mlp,
    pub t_stu: Mlp,
}

/// Rows scored per forward pass during inference.
const EVAL_CHUNK: usize = 128;

impl CkiModel {
    pub fn new(dims: ModelDims, patch: PatchConfig, seed: u64) -> Result<Self> {
        if dims.source_classes < 2 || dims.target_classes < 2 {
            return Err(Error::Invalid("both domains need at least two classes".into()));
        }
        if dims.source_bands == 0 || dims.target_bands == 0 {
            return Err(Error::Invalid("both domains need at least one band".into()));
        }
        patch.geometry(dims.window, dims.common_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (c, eh) = (dims.common_channels, dims.encoder_hidden);
        let d = patch.embed_dim;
        let f_s = Encoder::new(&mut store, "F_s", dims.source_bands, eh, c, &mut rng);
        let f_t = Encoder::new(&mut store, "F_t", dims.target_bands, eh, c, &mut rng);
        let f_t_prime = Encoder::new(&mut store, "F_t_prime", dims.target_bands, eh, c, &mut rng);
        let disc = Discriminator::new(&mut store, "I", c, dims.disc_hidden, &mut rng);
        let disc_prime = Discriminator::new(&mut store, "I_prime", c, dims.disc_hidden, &mut rng);
        let g = IfssNet::new(&mut store, "G", patch, dims.window, c, &mut rng)?;
        let g_prime = IfssNet::new(&mut store, "G_prime", patch, dims.window, c, &mut rng)?;
        let g_stu = IfssNet::new(&mut store, "G_stu", patch, dims.window, c, &mut rng)?;
        let hh = dims.head_hidden;
        let t_s = Mlp::new(&mut store, "T_s", [d, hh, dims.source_classes], &mut rng);
        let t_t = Mlp::new(&mut store, "T_t", [d, hh, dims.target_classes], &mut rng);
        let t_t_prime = Mlp::new(&mut store, "T_t_prime", [d, hh, dims.target_classes], &mut rng);
        let t_stu = Mlp::new(&mut store, "T_stu", [d, hh, dims.target_classes], &mut rng);
        Ok(CkiModel { dims, patch, store, f_s, f_t, f_t_prime, disc, disc_prime, g, g_prime, g_stu, t_s, t_t, t_t_prime, t_stu })
    }

    fn check_batch(&self, b: &WindowBatch, bands: usize) -> Result<()> {
        let s = b.windows.shape();
        if s.len() != 4 || s[1] != self.dims.window || s[2] != self.dims.window || s[3] != bands {
            return Err(Error::Shape(format!(
                "batch {s:?} does not match window {} with {bands} bands",
                self.dims.window
            )));
        }
        if b.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        Ok(())
    }

    /// Logits of one target path for windows already on the tape.
    pub fn path_logits(&self, g: &mut Graph, p: &Bound, x: Var, path: Path) -> Var {
        match path {
            Path::Shared => {
                let f = self.f_t.forward(g, p, x);
                let z = self.g.forward(g, p, f);
                self.t_t.forward(g, p, z)
            }
            Path::Complementary => {
                let f = self.f_t_prime.forward(g, p, x);
                let z = self.g_prime.forward(g, p, f);
                self.t_t_prime.forward(g, p, z)
            }
            Path::Student => {
                let f = self.f_t.forward(g, p, x);
                let z = self.g_stu.forward(g, p, f);
                self.t_stu.forward(g, p, z)
            }
        }
    }

    /// Source logits `T_s(G(F_s(x)))`.
    pub fn source_logits(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let f = self.f_s.forward(g, p, x);
        let z = self.g.forward(g, p, f);
        self.t_s.forward(g, p, z)
    }

    /// Mean target cross-entropy through the chosen path (no gradients).
    pub fn target_ce(&self, batch: &WindowBatch, path: Path) -> Result<f64> {
        self.check_batch(batch, self.dims.target_bands)?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let x = g.constant(batch.windows.clone());
        let logits = self.path_logits(&mut g, &p, x, path);
        let ce = cross_entropy(&mut g, logits, &batch.labels)?;
        Ok(g.value(ce).item())
    }

    fn chunked<T>(
        &self,
        windows: &Tensor,
        mut f: impl FnMut(&mut Graph, &Bound, Var) -> Vec<T>,
    ) -> Vec<T> {
        let b = windows.shape()[0];
        let per = windows.len() / b.max(1);
        let mut out = Vec::with_capacity(b);
        let mut start = 0;
        while start < b {
            let end = (start + EVAL_CHUNK).min(b);
            let mut shape = windows.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(&shape, windows.data()[start * per..end * per].to_vec());
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let x = g.constant(chunk);
            out.extend(f(&mut g, &p, x));
            start = end;
        }
        out
    }

    /// Target logits `[B, |C_t|]` through `path`, scored in chunks.
    pub fn logits(&self, windows: &Tensor, path: Path) -> Tensor {
        let k = self.dims.target_classes;
        let rows = self.chunked(windows, |g, p, x| {
            let l = self.path_logits(g, p, x, path);
            g.value(l).data().to_vec()
        });
        Tensor::new(&[windows.shape()[0], k], rows)
    }

    /// 1-based arg-max class per window.
    pub fn predict(&self, windows: &Tensor, path: Path) -> Vec<usize> {
        let l = self.logits(windows, path);
        (0..l.rows().0)
            .map(|i| {
                let r = l.row(i);
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best + 1
            })
            .collect()
    }

    /// `(ω, I'(F_s(x)))` for each source window under the current parameters.
    pub fn source_similarity(&self, src: &WindowBatch) -> Result<(WeightVector, Vec<f64>)> {
        self.check_batch(src, self.dims.source_bands)?;
        let pairs = self.chunked(&src.windows, |g, p, x| {
            let f = self.f_s.forward(g, p, x);
            let z = self.g.forward(g, p, f);
            let l = self.t_s.forward(g, p, z);
            let d = self.disc_prime.forward(g, p, f, None);
            let (l, d) = (g.value(l), g.value(d));
            (0..l.rows().0).map(|i| (l.row(i).to_vec(), d.data()[i])).collect()
        });
        let k = self.dims.source_classes;
        let logits = Tensor::new(&[pairs.len(), k], pairs.iter().flat_map(|p| p.0.iter().copied()).collect());
        let dom: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        Ok((source_weight(&logits, &dom)?, dom))
    }

    /// One forward/backward pass of the full objective.
    ///
    /// The tape objective carries `E_I` at unit weight behind a
    /// gradient-reversal layer of weight `λ`, so `I` descends `E_I` while the
    /// encoders ascend `λ·E_I`; the reported total uses `λ·E_I`. Inactive
    /// flags skip their sub-networks. Without a source batch only target
    /// terms are formed.
    pub fn step(
        &self,
        src: Option<&WindowBatch>,
        tgt: &WindowBatch,
        w: &LossWeights,
        flags: &AblationFlags,
        step_index: u64,
    ) -> Result<StepOutput> {
        self.check_batch(tgt, self.dims.target_bands)?;
        if let Some(s) = src {
            self.check_batch(s, self.dims.source_bands)?;
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let mut report = LossReport::default();
        let mut terms: Vec<Var> = Vec::new();

        let xt = g.constant(tgt.windows.clone());
        let ft = self.f_t.forward(&mut g, &p, xt);
        let zt = self.g.forward(&mut g, &p, ft);
        let lt = self.t_t.forward(&mut g, &p, zt);
        let e_tt = cross_entropy(&mut g, lt, &tgt.labels)?;
        report.e_tt = g.value(e_tt).item();
        terms.push(e_tt);

        let mut weights = None;
        let mut source_domain_prob = None;
        if let Some(src) = src {
            let xs = g.constant(src.windows.clone());
            let fs = self.f_s.forward(&mut g, &p, xs);
            let zs = self.g.forward(&mut g, &p, fs);
            let ls = self.t_s.forward(&mut g, &p, zs);
            let omega = if flags.cksp {
                let fs_d = g.detach(fs);
                let ft_d = g.detach(ft);
                let ps = self.disc_prime.forward(&mut g, &p, fs_d, None);
                let pt = self.disc_prime.forward(&mut g, &p, ft_d, None);
                let e_ip = domain_bce(&mut g, ps, pt);
                report.e_i_prime = g.value(e_ip).item();
                terms.push(e_ip);
                let dom = g.value(ps).data().to_vec();
                // diverged parameters surface here first; report them as such
                if g.value(ls).data().iter().chain(&dom).any(|v| !v.is_finite()) {
                    report.total = f64::NAN;
                    return Err(Error::NonFinite(Box::new(report)));
                }
                let wv = source_weight(g.value(ls), &dom)?;
                let om = wv.omega.clone();
                weights = Some(wv);
                source_domain_prob = Some(dom);
                om
            } else {
                vec![1.0; src.len()]
            };
            let e_ts = weighted_source_ce(&mut g, ls, &src.labels, &omega)?;
            report.e_ts = g.value(e_ts).item();
            terms.push(e_ts);
            if flags.asc {
                let e_i = adversarial_domain_loss(&mut g, &p, fs, ft, &self.disc, w.lambda_adv);
                report.e_i = g.value(e_i).item();
                terms.push(e_i);
            }
        }

        let mut lt_prime = None;
        if flags.ce {
            let fp = self.f_t_prime.forward(&mut g, &p, xt);
            let zp = self.g_prime.forward(&mut g, &p, fp);
            let lp = self.t_t_prime.forward(&mut g, &p, zp);
            let e_ttp = cross_entropy(&mut g, lp, &tgt.labels)?;
            report.e_tt_prime = g.value(e_ttp).item();
            let e_ttp = g.scale(e_ttp, w.beta);
            terms.push(e_ttp);
            if tgt.len() >= 2 {
                let e_dc = distance_correlation(&mut g, zt, zp)?;
                report.e_dc = g.value(e_dc).item();
                terms.push(e_dc);
            }
            lt_prime = Some(lp);
        }

        if flags.di {
            let zs = self.g_stu.forward(&mut g, &p, ft);
            let lstu = self.t_stu.forward(&mut g, &p, zs);
            let e_stu = cross_entropy(&mut g, lstu, &tgt.labels)?;
            report.e_t_stu = g.value(e_stu).item();
            let e_stu = g.scale(e_stu, w.gamma);
            terms.push(e_stu);
            let pair = |g: &mut Graph, student: Var, teacher: Var| match w.distill {
                DistillSchedule::Continuous => (student, teacher),
                DistillSchedule::Alternating if step_index % 2 == 0 => (student, g.detach(teacher)),
                DistillSchedule::Alternating => (g.detach(student), teacher),
            };
            let (s1, t1) = pair(&mut g, lstu, lt);
            let kl1 = bidirectional_kl(&mut g, s1, t1, 1.0)?;
            report.e_kl1 = g.value(kl1).item();
            let mut kl = kl1;
            if let Some(lp) = lt_prime {
                let (s2, t2) = pair(&mut g, lstu, lp);
                let kl2 = bidirectional_kl(&mut g, s2, t2, w.tau)?;
                report.e_kl2 = g.value(kl2).item();
                kl = g.add(kl1, kl2);
            }
            let kl = g.scale(kl, w.alpha);
            terms.push(kl);
        }

        report.total = report.combine(w, flags);
        if !report.all_finite() {
            return Err(Error::NonFinite(Box::new(report)));
        }
        let mut objective = terms[0];
        for &t in &terms[1..] {
            objective = g.add(objective, t);
        }
        let mut grads = g.backward(objective);
        let grads = p.collect(&mut grads);
        Ok(StepOutput { report, weights, source_domain_prob, grads })
    }
}

/// Loss values of one step without the gradients.
pub fn cki_step(
    src: Option<&WindowBatch>,
    tgt: &WindowBatch,
    model: &CkiModel,
    weights: &LossWeights,
    flags: &AblationFlags,
) -> Result<LossReport> {
    model.step(src, tgt, weights, flags, 0).map(|o| o.report)
}

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

//! Run configuration, read from JSON.

use std::path::{Path, PathBuf};

use cki_core::cki::{AblationFlags, LossWeights, ModelDims};
use cki_core::data::SynthSpec;
use cki_core::ifss::PatchConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CkiError, Result};
use crate::io::read_json;

/// Where the two scenes come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    /// Scene headers on disk; relative paths resolve against the config file.
    Files {
        source: PathBuf,
        target: PathBuf,
        /// Optional `(source class, target class)` pairs known to match.
        #[serde(default)]
        shared_classes: Vec<(usize, usize)>,
        /// External target split replacing the seeded few-shot split.
        #[serde(default)]
        target_manifest: Option<PathBuf>,
    },
    Synth(SynthSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSizes {
    pub spatial: usize,
    pub spectral: usize,
}

fn default_ffn_mult() -> usize {
    2
}

/// Backbone keys as they appear in config files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub patch: PatchSizes,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::from(PatchConfig::default())
    }
}

impl From<PatchConfig> for BackboneConfig {
    fn from(p: PatchConfig) -> Self {
        BackboneConfig {
            patch: PatchSizes { spatial: p.patch_h, spectral: p.patch_c },
            embed_dim: p.embed_dim,
            depth: p.depth,
            heads: p.heads,
            ffn_mult: p.ffn_mult,
        }
    }
}

impl BackboneConfig {
    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            patch_h: self.patch.spatial,
            patch_w: self.patch.spatial,
            patch_c: self.patch.spectral,
            embed_dim: self.embed_dim,
            depth: self.depth,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
        }
    }
}

/// Sizes of everything outside the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub window: usize,
    pub common_channels: usize,
    pub encoder_hidden: usize,
    pub head_hidden: usize,
    pub disc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelDims::new(1, 1, 2, 2);
        ModelConfig {
            window: d.window,
            common_channels: d.common_channels,
            encoder_hidden: d.encoder_hidden,
            head_hidden: d.head_hidden,
            disc_hidden: d.disc_hidden,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, source_bands: usize, target_bands: usize, source_classes: usize, target_classes: usize) -> ModelDims {
        ModelDims {
            source_bands,
            target_bands,
            source_classes,
            target_classes,
            window: self.window,
            common_channels: self.common_channels,
            encoder_hidden: self.encoder_hidden,
            head_hidden: self.head_hidden,
            disc_hidden: self.disc_hidden,
        }
    }
}

fn d_shots() -> usize {
    10
}
fn d_epochs() -> usize {
    60
}
fn d_warmup() -> usize {
    20
}
fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    5e-4
}
fn d_wd() -> f64 {
    5e-3
}
fn d_gamma() -> f64 {
    0.9
}
fn d_true() -> bool {
    true
}
fn d_flags() -> AblationFlags {
    AblationFlags::all()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenes: SceneSource,
    #[serde(default = "d_shots")]
    pub shots_per_class: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_gamma")]
    pub lr_step_gamma: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "d_flags")]
    pub ablation_flags: AblationFlags,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Per-band min-max scaling of file scenes at load time.
    #[serde(default = "d_true")]
    pub normalize: bool,
    /// Train on the target split alone (no source batches).
    #[serde(default)]
    pub target_only: bool,
    /// Epochs of transfer-only training (ASC and CKSP terms) before the
    /// complementary and distillation terms join; 0 trains jointly.
    #[serde(default)]
    pub staged_epochs: usize,
    /// Cap on labeled source pixels per class; all are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_pixels_per_class: Option<usize>,
}

impl RunConfig {
    pub fn new(scenes: SceneSource) -> Self {
        RunConfig {
            scenes,
            shots_per_class: d_shots(),
            epochs: d_epochs(),
            warmup_epochs: d_warmup(),
            batch_size: d_batch(),
            lr: d_lr(),
            weight_decay: d_wd(),
            lr_step_gamma: d_gamma(),
            loss_weights: LossWeights::default(),
            backbone: BackboneConfig::default(),
            model: ModelConfig::default(),
            ablation_flags: d_flags(),
            seed: 0,
            output_dir: None,
            normalize: true,
            target_only: false,
            staged_epochs: 0,
            source_pixels_per_class: None,
        }
    }

    /// Reads a config and resolves scene paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let SceneSource::Files { source, target, target_manifest, .. } = &mut cfg.scenes {
            for p in [source, target].into_iter().chain(target_manifest.as_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CkiError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!("warmup_epochs {} exceeds epochs {}", self.warmup_epochs, self.epochs));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2".into());
        }
        if self.shots_per_class == 0 {
            return bad("shots_per_class must be >= 1".into());
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.lr_step_gamma > 0.0) {
            return bad("lr and lr_step_gamma must be positive, weight_decay nonnegative".into());
        }
        let w = &self.loss_weights;
        if w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0 || !(w.tau > 0.0) {
            return bad("loss weights must be nonnegative and tau positive".into());
        }
        if self.staged_epochs > self.epochs {
            return bad("staged_epochs exceeds epochs".into());
        }
        if self.target_only && (self.ablation_flags.asc || self.ablation_flags.cksp) {
            return bad("target_only runs cannot enable ASC or CKSP".into());
        }
        if let SceneSource::Synth(spec) = &self.scenes {
            spec.validate().map_err(|e| CkiError::Config(e.to_string()))?;
        }
        self.backbone
            .patch_config()
            .geometry(self.model.window, self.model.common_channels)
            .map_err(|e| CkiError::Config(e.to_string()))?;
        Ok(())
    }
}

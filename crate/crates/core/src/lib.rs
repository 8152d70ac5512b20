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

//! Algorithmic core of cross-scene knowledge integration (CKI) for
//! hyperspectral image classification.
//!
//! Everything here is `no_std` + `alloc`: a small reverse-mode autodiff
//! engine, the IFSS spatial-spectral transformer, the transfer losses and
//! source weighting, the few-shot data protocol and synthetic generator,
//! and the OA/AA/κ metrics. File formats, the training loop and the CLI live
//! in the `cki` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autograd;
pub mod cki;
pub mod data;
pub mod error;
pub mod ifss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod schedule;
pub mod tensor;

pub use autograd::{Gradients, Graph, Var};
pub use cki::{
    bidirectional_kl, cki_step, cross_entropy, dcor, distance_correlation, grl_forward_backward, normalized_entropy,
    source_weight, weighted_source_ce, AblationFlags, CkiModel, DistillSchedule, LossReport, LossWeights,
    ModelDims, Path, StepOutput, WeightVector,
};
pub use data::{
    extract_windows, make_split, synth_cross_scene, Coord, Domain, DomainSpec, Padding, SceneCube,
    SharedClassMap, SplitManifest, SynthSpec, WindowBatch,
};
pub use error::{Error, Result};
pub use ifss::{patchify, unpatchify, IfssNet, PatchConfig};
pub use metrics::{compute_metrics, confusion_matrix, ConfusionMatrix, EvalReport};
pub use optim::{AdamConfig, AdamW};
pub use schedule::{lambda_schedule, lr_schedule};
pub use tensor::Tensor;

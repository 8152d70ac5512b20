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

//! The training loop, evaluation and run outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cki_core::cki::{AblationFlags, CkiModel, LossReport, LossWeights, Path as EvalPath};
use cki_core::data::{
    extract_windows, make_split, synth_cross_scene, Coord, Domain, Padding, SceneCube, SharedClassMap, SplitManifest,
    WindowBatch,
};
use cki_core::metrics::{compute_metrics, confusion_matrix, EvalReport};
use cki_core::optim::{AdamConfig, AdamW};
use cki_core::schedule::{lambda_schedule, lr_schedule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::config::{RunConfig, SceneSource};
use crate::error::{CkiError, Result};
use crate::io::{eval_report_text, load_manifest, load_scene, save_manifest, write_file, write_json, write_text};

/// Scenes, split and windows resolved from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub source: SceneCube,
    pub target: SceneCube,
    pub shared: Option<SharedClassMap>,
    pub split: SplitManifest,
    pub source_train: WindowBatch,
    pub target_train: WindowBatch,
    pub target_test: WindowBatch,
}

fn source_coords(scene: &SceneCube, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Coord> {
    let mut out = Vec::new();
    for k in 1..=scene.num_classes() {
        let mut c = scene.coords_of(k);
        if let Some(cap) = cap.filter(|&cap| cap < c.len()) {
            c.shuffle(rng);
            c.truncate(cap);
            c.sort_unstable();
        }
        out.extend(c);
    }
    out
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (mut source, mut target, shared, manifest) = match &cfg.scenes {
        SceneSource::Synth(spec) => {
            let (s, t, map) = synth_cross_scene(spec)?;
            (s, t, Some(map), None)
        }
        SceneSource::Files { source, target, shared_classes, target_manifest } => {
            let s = load_scene(source, false)?;
            let t = load_scene(target, false)?;
            let map = (!shared_classes.is_empty()).then(|| SharedClassMap { pairs: shared_classes.clone() });
            let m = target_manifest.as_deref().map(load_manifest).transpose()?;
            (s, t, map, m)
        }
    };
    if cfg.normalize {
        source.normalize_bands();
        target.normalize_bands();
    }
    source.validate_for_training()?;
    target.validate_for_training()?;
    let split = match manifest {
        Some(m) => {
            if m.train_coords.len() != target.num_classes() {
                return Err(CkiError::Config(format!(
                    "manifest lists {} classes, target scene has {}",
                    m.train_coords.len(),
                    target.num_classes()
                )));
            }
            m
        }
        None => make_split(&target, cfg.shots_per_class, cfg.seed)?,
    };
    let w = cfg.model.window;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let sc = source_coords(&source, cfg.source_pixels_per_class, &mut rng);
    let source_train = extract_windows(&source, &sc, w, Padding::Mirror, Domain::Source)?;
    let target_train = extract_windows(&target, &split.train_flat(), w, Padding::Mirror, Domain::Target)?;
    let target_test = extract_windows(&target, &split.test_coords, w, Padding::Mirror, Domain::Target)?;
    if target_test.is_empty() {
        return Err(CkiError::Config("target scene has no test pixels left after the split".into()));
    }
    Ok(Prepared { source, target, shared, split, source_train, target_train, target_test })
}

/// Mean loss terms and evaluation after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub loss: LossReport,
    pub eval: EvalReport,
}

/// Source-sample weighting grouped by whether the class also exists in the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub shared_n: usize,
    pub private_n: usize,
    pub shared_omega_pre: f64,
    pub private_omega_pre: f64,
    pub shared_omega: f64,
    pub private_omega: f64,
    pub shared_domain_prob: f64,
    pub private_domain_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub eval_path: EvalPath,
    pub epochs: Vec<EpochLog>,
    pub final_eval: EvalReport,
    pub similarity: Option<SimilaritySummary>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Where and why a run stopped early.
#[derive(Debug)]
pub struct RunFailure {
    pub epoch: usize,
    pub step: usize,
    pub error: cki_core::Error,
}

#[derive(Serialize)]
struct FailureDump<'a> {
    epoch: usize,
    step: usize,
    error: String,
    report: Option<&'a LossReport>,
}

/// Student path when distillation is on, otherwise the shared path.
pub fn eval_path(flags: &AblationFlags) -> EvalPath {
    if flags.di {
        EvalPath::Student
    } else {
        EvalPath::Shared
    }
}

pub fn evaluate_batch(model: &CkiModel, batch: &WindowBatch, path: EvalPath) -> Result<EvalReport> {
    let pred = model.predict(&batch.windows, path);
    let cm = confusion_matrix(&batch.labels, &pred, model.dims.target_classes)?;
    Ok(compute_metrics(&cm)?)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn similarity_summary(model: &CkiModel, source: &WindowBatch, map: &SharedClassMap) -> Result<SimilaritySummary> {
    let (w, dom) = model.source_similarity(source)?;
    let mut groups: [[Vec<f64>; 3]; 2] = Default::default();
    for (i, &label) in source.labels.iter().enumerate() {
        let g = &mut groups[usize::from(!map.is_shared_source(label))];
        g[0].push(w.pre_clamp[i]);
        g[1].push(w.omega[i]);
        g[2].push(dom[i]);
    }
    let [s, p] = &groups;
    Ok(SimilaritySummary {
        shared_n: s[0].len(),
        private_n: p[0].len(),
        shared_omega_pre: mean(&s[0]),
        private_omega_pre: mean(&p[0]),
        shared_omega: mean(&s[1]),
        private_omega: mean(&p[1]),
        shared_domain_prob: mean(&s[2]),
        private_domain_prob: mean(&p[2]),
    })
}

fn add_report(acc: &mut LossReport, r: &LossReport) {
    acc.e_i += r.e_i;
    acc.e_i_prime += r.e_i_prime;
    acc.e_ts += r.e_ts;
    acc.e_tt += r.e_tt;
    acc.e_dc += r.e_dc;
    acc.e_kl1 += r.e_kl1;
    acc.e_kl2 += r.e_kl2;
    acc.e_tt_prime += r.e_tt_prime;
    acc.e_t_stu += r.e_t_stu;
    acc.total += r.total;
}

fn scale_report(r: &mut LossReport, s: f64) {
    for v in [
        &mut r.e_i,
        &mut r.e_i_prime,
        &mut r.e_ts,
        &mut r.e_tt,
        &mut r.e_dc,
        &mut r.e_kl1,
        &mut r.e_kl2,
        &mut r.e_tt_prime,
        &mut r.e_t_stu,
        &mut r.total,
    ] {
        *v *= s;
    }
}

/// Flags in force during `epoch` once staging is taken into account.
pub fn flags_at(cfg: &RunConfig, epoch: usize) -> AblationFlags {
    let mut f = cfg.ablation_flags;
    if epoch < cfg.staged_epochs {
        f.ce = false;
        f.di = false;
    }
    f
}

/// Cycles through the target split, reshuffling after every full pass.
struct TargetStream {
    order: Vec<usize>,
    pos: usize,
}

impl TargetStream {
    fn next(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub const LOSS_COLUMNS: &str =
    "epoch,lambda,lr,e_i,e_i_prime,e_ts,e_tt,e_dc,e_kl1,e_kl2,e_tt_prime,e_t_stu,total,oa,aa,kappa";

pub fn loss_csv(epochs: &[EpochLog]) -> String {
    let mut s = String::from(LOSS_COLUMNS);
    s.push('\n');
    for e in epochs {
        let l = &e.loss;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            e.epoch,
            e.lambda,
            e.lr,
            l.e_i,
            l.e_i_prime,
            l.e_ts,
            l.e_tt,
            l.e_dc,
            l.e_kl1,
            l.e_kl2,
            l.e_tt_prime,
            l.e_t_stu,
            l.total,
            e.eval.oa,
            e.eval.aa,
            e.eval.kappa
        ));
    }
    s
}

fn prediction_raster(scene: &SceneCube, coords: &[Coord], pred: &[usize]) -> Vec<u8> {
    let mut raster = vec![0u16; scene.height * scene.width];
    for (&(r, c), &p) in coords.iter().zip(pred) {
        raster[r * scene.width + c] = p as u16;
    }
    raster.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Trains on resolved data; returns the record and the final model.
pub fn train_prepared(cfg: &RunConfig, data: &Prepared) -> Result<(RunRecord, CkiModel)> {
    cfg.validate()?;
    let started = Instant::now();
    let (s, t) = (&data.source, &data.target);
    let dims = cfg.model.dims(s.bands, t.bands, s.num_classes(), t.num_classes());
    let mut model = CkiModel::new(dims, cfg.backbone.patch_config(), cfg.seed)?;
    let mut opt = AdamW::new(&model.store, AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let n_src = data.source_train.len();
    let n_tgt = data.target_train.len();
    let src_b = cfg.batch_size.min(n_src);
    let tgt_b = cfg.batch_size.min(n_tgt);
    let mut src_order: Vec<usize> = (0..n_src).collect();
    let mut tgt = TargetStream { order: (0..n_tgt).collect(), pos: n_tgt };
    let path = eval_path(&cfg.ablation_flags);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0u64;
    let mut last: Option<LossReport> = None;

    for epoch in 0..cfg.epochs {
        let lambda = lambda_schedule(epoch, cfg.warmup_epochs);
        let lr = lr_schedule(cfg.lr, epoch, cfg.epochs, cfg.lr_step_gamma);
        let flags = flags_at(cfg, epoch);
        let weights = LossWeights { lambda_adv: lambda, ..cfg.loss_weights };
        src_order.shuffle(&mut rng);
        let mut acc = LossReport::default();
        let mut steps = 0;
        for (step, chunk) in src_order.chunks(src_b).enumerate() {
            // A one-sample remainder carries no usable batch statistics.
            if chunk.len() < 2 && steps > 0 {
                continue;
            }
            let tb = data.target_train.select(&tgt.next(tgt_b, &mut rng));
            let sb = (!cfg.target_only).then(|| data.source_train.select(chunk));
            let fail = |error: cki_core::Error, report: Option<&LossReport>| {
                if let Some(dir) = &cfg.output_dir {
                    let dump = FailureDump { epoch, step, error: error.to_string(), report };
                    let _ = write_json(&dir.join("failure.json"), &dump);
                }
                CkiError::Run(Box::new(RunFailure { epoch, step, error }))
            };
            let out = match model.step(sb.as_ref(), &tb, &weights, &flags, global_step) {
                Ok(o) => o,
                Err(cki_core::Error::NonFinite(r)) => {
                    let r = *r;
                    return Err(fail(cki_core::Error::NonFinite(Box::new(r)), Some(&r)));
                }
                Err(e) => return Err(fail(e, last.as_ref())),
            };
            if out.grads.iter().flatten().any(|g| !g.all_finite()) {
                let r = out.report;
                return Err(fail(cki_core::Error::NonFinite(Box::new(r)), Some(&r)));
            }
            opt.step(&mut model.store, &out.grads, lr);
            add_report(&mut acc, &out.report);
            last = Some(out.report);
            steps += 1;
            global_step += 1;
        }
        scale_report(&mut acc, 1.0 / steps.max(1) as f64);
        let eval = evaluate_batch(&model, &data.target_test, path)?;
        epochs.push(EpochLog { epoch, lambda, lr, steps, loss: acc, eval });
    }

    let final_eval = epochs.last().map(|e| e.eval.clone()).expect("at least one epoch");
    let similarity = match (&data.shared, cfg.ablation_flags.cksp && !cfg.target_only) {
        (Some(map), true) => Some(similarity_summary(&model, &data.source_train, map)?),
        _ => None,
    };
    let mut record = RunRecord {
        config: cfg.clone(),
        eval_path: path,
        epochs,
        final_eval,
        similarity,
        wall_clock_secs: 0.0,
        checkpoint: None,
    };
    if let Some(dir) = &cfg.output_dir {
        let ckpt = dir.join("model.ckpt");
        let meta = CheckpointMeta {
            dims: model.dims,
            patch: model.patch,
            loss_weights: cfg.loss_weights,
            ablation_flags: cfg.ablation_flags,
            eval_path: path,
        };
        save_checkpoint(&ckpt, &model, &meta)?;
        record.checkpoint = Some(ckpt);
        write_json(&dir.join("run.lock"), cfg)?;
        save_manifest(&data.split, &dir.join("split.json"))?;
        write_text(&dir.join("losses.csv"), &loss_csv(&record.epochs))?;
        write_text(&dir.join("confusion.txt"), &eval_report_text(&record.final_eval, &t.class_names))?;
        let pred = model.predict(&data.target_test.windows, path);
        write_file(&dir.join("predictions.u16"), &prediction_raster(t, &data.target_test.pixel_coords, &pred))?;
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = &cfg.output_dir {
        write_json(&dir.join("metrics.json"), &record)?;
    }
    Ok((record, model))
}

pub fn train(cfg: &RunConfig) -> Result<(RunRecord, CkiModel)> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    train_prepared(cfg, &data)
}

/// Scores a checkpoint on the test coordinates of `manifest`.
pub fn evaluate(checkpoint: &Path, scene_header: &Path, manifest: &Path, normalize: bool) -> Result<EvalReport> {
    let (model, meta) = crate::checkpoint::load_checkpoint(checkpoint)?;
    let scene = load_scene(scene_header, normalize)?;
    let manifest = load_manifest(manifest)?;
    evaluate_scene(&model, meta.eval_path, &scene, &manifest)
}

pub fn evaluate_scene(model: &CkiModel, path: EvalPath, scene: &SceneCube, manifest: &SplitManifest) -> Result<EvalReport> {
    if scene.num_classes() != model.dims.target_classes || scene.bands != model.dims.target_bands {
        return Err(CkiError::Config(format!(
            "checkpoint expects {} classes over {} bands, scene has {} classes over {} bands",
            model.dims.target_classes,
            model.dims.target_bands,
            scene.num_classes(),
            scene.bands
        )));
    }
    let batch = extract_windows(scene, &manifest.test_coords, model.dims.window, Padding::Mirror, Domain::Target)?;
    evaluate_batch(model, &batch, path)
}

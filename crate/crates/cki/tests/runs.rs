use std::fs;

use cki::config::{BackboneConfig, ModelConfig, PatchSizes, RunConfig, SceneSource};
use cki::io::save_scene;
use cki::train::{eval_path, evaluate, evaluate_batch, prepare, train, train_prepared};
use cki_core::cki::{AblationFlags, CkiModel};
use cki_core::data::SynthSpec;
use cki_core::schedule::{lambda_schedule, lr_schedule};

fn tiny_spec() -> SynthSpec {
    SynthSpec { pixels_per_class: 16, noise_sigma: 0.1, ..SynthSpec::default() }
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::new(SceneSource::Synth(tiny_spec()));
    c.backbone = BackboneConfig { patch: PatchSizes { spatial: 2, spectral: 2 }, embed_dim: 8, depth: 1, heads: 2, ffn_mult: 2 };
    c.model = ModelConfig { window: 4, common_channels: 4, encoder_hidden: 6, head_hidden: 8, disc_hidden: 6 };
    c.epochs = 4;
    c.warmup_epochs = 2;
    c.batch_size = 32;
    c.seed = 3;
    c
}

#[test]
fn identical_runs_agree() {
    let cfg = tiny_config();
    let (a, _) = train(&cfg).unwrap();
    let (b, _) = train(&cfg).unwrap();
    assert!((a.final_eval.oa - b.final_eval.oa).abs() < 1e-6);
    assert_eq!(a.epochs, b.epochs);
    let mut other = cfg.clone();
    other.seed = 4;
    let (c, _) = train(&other).unwrap();
    assert_ne!(a.epochs[0].loss, c.epochs[0].loss);
}

#[test]
fn logged_schedules_follow_the_formulas() {
    let mut cfg = tiny_config();
    cfg.epochs = 10;
    cfg.warmup_epochs = 4;
    cfg.ablation_flags = AblationFlags::none();
    let (r, _) = train(&cfg).unwrap();
    for e in &r.epochs {
        assert_eq!(e.lambda, lambda_schedule(e.epoch, 4));
        assert_eq!(e.lr, lr_schedule(cfg.lr, e.epoch, 10, cfg.lr_step_gamma));
    }
    // the warm-up reaches one and the step decay begins after the first tenth
    assert_eq!(r.epochs[4].lambda, 1.0);
    assert!(r.epochs[9].lr < r.epochs[0].lr);
}

#[test]
fn outputs_are_written_and_checkpoint_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.output_dir = Some(dir.path().join("run"));
    let (r, _) = train(&cfg).unwrap();
    let out = dir.path().join("run");
    for f in ["model.ckpt", "model.ckpt.shapes.txt", "run.lock", "split.json", "losses.csv", "confusion.txt", "predictions.u16", "metrics.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), cfg.epochs + 1);
    let lock: RunConfig = serde_json::from_str(&fs::read_to_string(out.join("run.lock")).unwrap()).unwrap();
    assert_eq!(lock, cfg);

    let SceneSource::Synth(spec) = cfg.scenes else { unreachable!() };
    let (_, target, _) = cki_core::data::synth_cross_scene(&spec).unwrap();
    save_scene(&target, &dir.path().join("target.json")).unwrap();
    let report = evaluate(&out.join("model.ckpt"), &dir.path().join("target.json"), &out.join("split.json"), true).unwrap();
    assert_eq!(report, r.final_eval);
}

#[test]
fn untrained_model_is_near_chance() {
    let cfg = tiny_config();
    let data = prepare(&cfg).unwrap();
    let (s, t) = (&data.source, &data.target);
    let dims = cfg.model.dims(s.bands, t.bands, s.num_classes(), t.num_classes());
    let k = t.num_classes() as f64;
    let mut oas = Vec::new();
    for seed in 0..8 {
        let model = CkiModel::new(dims, cfg.backbone.patch_config(), seed).unwrap();
        oas.push(evaluate_batch(&model, &data.target_test, eval_path(&cfg.ablation_flags)).unwrap().oa);
    }
    let mean = oas.iter().sum::<f64>() / oas.len() as f64;
    assert!((mean - 1.0 / k).abs() <= 0.1, "mean untrained OA {mean}");
}

#[test]
fn target_only_runs_without_source_terms() {
    let mut cfg = tiny_config();
    cfg.ablation_flags = AblationFlags { ce: true, di: true, ..AblationFlags::none() };
    cfg.target_only = true;
    let data = prepare(&cfg).unwrap();
    let (r, _) = train_prepared(&cfg, &data).unwrap();
    for e in &r.epochs {
        assert_eq!((e.loss.e_ts, e.loss.e_i, e.loss.e_i_prime), (0.0, 0.0, 0.0));
        assert!(e.loss.e_tt > 0.0 && e.loss.e_t_stu > 0.0);
    }
    assert!(r.similarity.is_none());
}

#[test]
fn similarity_summary_covers_both_groups() {
    let mut cfg = tiny_config();
    cfg.ablation_flags = AblationFlags { asc: true, cksp: true, ..AblationFlags::none() };
    let (r, _) = train(&cfg).unwrap();
    let s = r.similarity.unwrap();
    assert_eq!((s.shared_n, s.private_n), (4 * 16, 2 * 16));
    for v in [s.shared_omega, s.private_omega] {
        assert!((0.0..=1.0).contains(&v));
    }
    for v in [s.shared_omega_pre, s.private_omega_pre] {
        assert!(v > -1.0 && v <= 1.0);
    }
}

#[test]
fn noise_free_target_split_is_memorized() {
    let mut cfg = tiny_config();
    cfg.scenes = SceneSource::Synth(SynthSpec { noise_sigma: 0.0, ..tiny_spec() });
    cfg.ablation_flags = AblationFlags::none();
    cfg.target_only = true;
    cfg.epochs = 150;
    cfg.warmup_epochs = 1;
    cfg.lr = 5e-3;
    cfg.weight_decay = 0.0;
    let data = prepare(&cfg).unwrap();
    let (_, model) = train_prepared(&cfg, &data).unwrap();
    let fit = evaluate_batch(&model, &data.target_train, eval_path(&cfg.ablation_flags)).unwrap();
    assert_eq!(fit.oa, 1.0, "training accuracy {}", fit.oa);
}

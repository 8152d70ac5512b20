mod common;

use cki_core::autograd::Graph;
use cki_core::cki::*;
use cki_core::data::{Domain, WindowBatch};
use cki_core::tensor::Tensor;
use common::*;

fn batches(seed: u64, n: usize) -> (WindowBatch, WindowBatch) {
    let mut r = rng(seed);
    let d = tiny_dims();
    (
        batch(&mut r, n, d.window, d.source_bands, d.source_classes, Domain::Source),
        batch(&mut r, n, d.window, d.target_bands, d.target_classes, Domain::Target),
    )
}

fn odd_weights() -> LossWeights {
    LossWeights { lambda_adv: 0.6, alpha: 0.7, beta: 1.3, gamma: 0.9, tau: 2.5, distill: DistillSchedule::Continuous }
}

#[test]
fn baseline_total_is_plain_sum() {
    let model = tiny_model(1);
    let (s, t) = batches(1, 4);
    let r = cki_step(Some(&s), &t, &model, &LossWeights::default(), &AblationFlags::none()).unwrap();
    assert_eq!(r.total, r.e_ts + r.e_tt);
    assert_eq!((r.e_i, r.e_i_prime, r.e_dc, r.e_kl1, r.e_kl2, r.e_tt_prime, r.e_t_stu), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
}

fn softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn ce(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    (0..labels.len()).map(|i| -softmax(logits.row(i), 1.0)[labels[i] - 1].ln()).collect()
}

fn kl_pair(a: &Tensor, b: &Tensor, tau: f64) -> f64 {
    let n = a.shape()[0];
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (softmax(a.row(i), tau), softmax(b.row(i), tau));
        for k in 0..p.len() {
            s += p[k] * (p[k] / q[k]).ln() + q[k] * (q[k] / p[k]).ln();
        }
    }
    s / n as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn full_step_matches_term_by_term_reference() {
    let model = tiny_model(2);
    let (s, t) = batches(2, 2);
    let w = odd_weights();
    let r = cki_step(Some(&s), &t, &model, &w, &AblationFlags::all()).unwrap();

    let mut g = Graph::new();
    let p = model.store.bind_frozen(&mut g);
    let xs = g.constant(s.windows.clone());
    let xt = g.constant(t.windows.clone());
    let fs = model.f_s.forward(&mut g, &p, xs);
    let ft = model.f_t.forward(&mut g, &p, xt);
    let ls = model.source_logits(&mut g, &p, xs);
    let lt = model.path_logits(&mut g, &p, xt, Path::Shared);
    let lp = model.path_logits(&mut g, &p, xt, Path::Complementary);
    let lstu = model.path_logits(&mut g, &p, xt, Path::Student);
    let d_s = model.disc.forward(&mut g, &p, fs, None);
    let d_t = model.disc.forward(&mut g, &p, ft, None);
    let dp_s = model.disc_prime.forward(&mut g, &p, fs, None);
    let dp_t = model.disc_prime.forward(&mut g, &p, ft, None);
    let zt = model.g.forward(&mut g, &p, ft);
    let fp = model.f_t_prime.forward(&mut g, &p, xt);
    let zp = model.g_prime.forward(&mut g, &p, fp);
    let v = |x| g.value(x).clone();

    let bce = |a: &Tensor, b: &Tensor| {
        -mean(&a.data().iter().map(|x| x.ln()).collect::<Vec<_>>())
            - mean(&b.data().iter().map(|x| (1.0 - x).ln()).collect::<Vec<_>>())
    };
    let e_i = bce(&v(d_s), &v(d_t));
    let e_ip = bce(&v(dp_s), &v(dp_t));
    let ls_v = v(ls);
    let k = ls_v.shape()[1] as f64;
    let omega: Vec<f64> = (0..2)
        .map(|i| {
            let pr = softmax(ls_v.row(i), 1.0);
            let h = -pr.iter().map(|p| p * p.ln()).sum::<f64>() / k.ln();
            (h - v(dp_s).data()[i]).clamp(0.0, 1.0)
        })
        .collect();
    let e_ts = mean(&ce(&ls_v, &s.labels).iter().zip(&omega).map(|(c, w)| c * w).collect::<Vec<_>>());
    let e_tt = mean(&ce(&v(lt), &t.labels));
    let e_ttp = mean(&ce(&v(lp), &t.labels));
    let e_stu = mean(&ce(&v(lstu), &t.labels));
    let e_dc = dcor_reference(&rows_of(&v(zt)), &rows_of(&v(zp)));
    let kl1 = kl_pair(&v(lstu), &v(lt), 1.0);
    let kl2 = kl_pair(&v(lstu), &v(lp), w.tau);
    let total = e_ts + e_tt + w.lambda_adv * e_i + e_ip + w.alpha * (kl1 + kl2) + w.beta * e_ttp + w.gamma * e_stu + e_dc;

    for (name, got, want) in [
        ("e_i", r.e_i, e_i),
        ("e_i_prime", r.e_i_prime, e_ip),
        ("e_ts", r.e_ts, e_ts),
        ("e_tt", r.e_tt, e_tt),
        ("e_tt_prime", r.e_tt_prime, e_ttp),
        ("e_t_stu", r.e_t_stu, e_stu),
        ("e_dc", r.e_dc, e_dc),
        ("e_kl1", r.e_kl1, kl1),
        ("e_kl2", r.e_kl2, kl2),
        ("total", r.total, total),
    ] {
        assert!((got - want).abs() < 1e-5, "{name}: {got} vs {want}");
    }
}

fn all_flag_sets() -> Vec<AblationFlags> {
    (0..16)
        .map(|m| AblationFlags { asc: m & 1 != 0, cksp: m & 2 != 0, ce: m & 4 != 0, di: m & 8 != 0 })
        .collect()
}

#[test]
fn disabling_a_flag_removes_exactly_its_terms() {
    let model = tiny_model(3);
    let (s, t) = batches(3, 4);
    let w = odd_weights();
    let full = cki_step(Some(&s), &t, &model, &w, &AblationFlags::all()).unwrap();
    for f in all_flag_sets() {
        let r = cki_step(Some(&s), &t, &model, &w, &f).unwrap();
        let mut expect = r.e_ts + r.e_tt;
        if f.asc {
            expect += w.lambda_adv * r.e_i;
        }
        if f.cksp {
            expect += r.e_i_prime;
        }
        if f.ce {
            expect += w.beta * r.e_tt_prime + r.e_dc;
        }
        if f.di {
            expect += w.alpha * (r.e_kl1 + r.e_kl2) + w.gamma * r.e_t_stu;
        }
        assert!((r.total - expect).abs() < 1e-12, "{f:?}");
        let on = |active: bool, part: f64, full_part: f64| if active { part == full_part } else { part == 0.0 };
        assert!(on(f.asc, r.e_i, full.e_i));
        assert!(on(f.cksp, r.e_i_prime, full.e_i_prime));
        assert!(on(f.ce, r.e_tt_prime, full.e_tt_prime) && on(f.ce, r.e_dc, full.e_dc));
        assert!(on(f.di, r.e_t_stu, full.e_t_stu) && on(f.di, r.e_kl1, full.e_kl1));
        assert!(on(f.di && f.ce, r.e_kl2, full.e_kl2));
        assert_eq!(r.e_tt, full.e_tt);
        if f.cksp {
            assert_eq!(r.e_ts, full.e_ts);
        }
    }
}

#[test]
fn encoder_gradient_through_adversarial_path_is_negated() {
    let mut model = tiny_model(4);
    let (s, t) = batches(4, 3);
    let w = LossWeights { lambda_adv: 0.35, ..LossWeights::default() };
    let on = AblationFlags { asc: true, ..AblationFlags::none() };
    let with = model.step(Some(&s), &t, &w, &on, 0).unwrap().grads;
    let without = model.step(Some(&s), &t, &w, &AblationFlags::none(), 0).unwrap().grads;
    let ids: Vec<usize> = model.store.ids().filter(|&i| model.store.name(i).starts_with("F_s.")).map(|i| i.index()).collect();
    assert!(!ids.is_empty());
    for id in ids {
        let n = model.store.get(model.store.ids().nth(id).unwrap()).len();
        for i in (0..n).step_by(3) {
            let analytic = with[id].as_ref().unwrap().data()[i] - without[id].as_ref().unwrap().data()[i];
            let fd = central_diff(&mut model.store, id, i, 1e-6, |st| {
                let m = CkiModel { store: st.clone(), ..tiny_model(4) };
                cki_step(Some(&s), &t, &m, &w, &on).unwrap().e_i
            });
            assert!(close(analytic, -w.lambda_adv * fd, 1e-4), "{analytic} vs {}", -w.lambda_adv * fd);
        }
    }
}

#[test]
fn discriminator_descends_adversarial_loss() {
    let mut model = tiny_model(5);
    let (s, t) = batches(5, 3);
    let w = LossWeights { lambda_adv: 0.35, ..LossWeights::default() };
    let on = AblationFlags { asc: true, ..AblationFlags::none() };
    let grads = model.step(Some(&s), &t, &w, &on, 0).unwrap().grads;
    let id = model.store.find("I.fc2.w").unwrap();
    for i in 0..model.store.get(id).len() {
        let fd = central_diff(&mut model.store, id.index(), i, 1e-6, |st| {
            let m = CkiModel { store: st.clone(), ..tiny_model(5) };
            cki_step(Some(&s), &t, &m, &w, &on).unwrap().e_i
        });
        assert!(close(grads[id.index()].as_ref().unwrap().data()[i], fd, 1e-4));
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    // ASC reverses and CKSP detaches by design, so the scalar check runs on
    // the terms whose tape gradient is the gradient of the reported total.
    let mut model = tiny_model(6);
    let (s, t) = batches(6, 3);
    let w = odd_weights();
    let flags = AblationFlags { ce: true, di: true, ..AblationFlags::none() };
    let grads = model.step(Some(&s), &t, &w, &flags, 0).unwrap().grads;
    let mut checked = 0;
    for id in 0..model.store.len() {
        let n = model.store.get(model.store.ids().nth(id).unwrap()).len();
        let stride = (n / 3).max(1);
        for i in (0..n).step_by(stride) {
            let fd = central_diff(&mut model.store, id, i, 1e-5, |st| {
                let m = CkiModel { store: st.clone(), ..tiny_model(6) };
                cki_step(Some(&s), &t, &m, &w, &flags).unwrap().total
            });
            let a = grads[id].as_ref().map_or(0.0, |g| g.data()[i]);
            assert!(close(a, fd, 1e-4), "{}[{i}]: {a} vs {fd}", model.store.name(model.store.ids().nth(id).unwrap()));
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn alternating_schedule_detaches_one_side() {
    let model = tiny_model(7);
    let (s, t) = batches(7, 3);
    let w = LossWeights { distill: DistillSchedule::Alternating, ..odd_weights() };
    let ce_di = AblationFlags { ce: true, di: true, ..AblationFlags::none() };
    let only_ce = AblationFlags { ce: true, ..AblationFlags::none() };
    let head = |name: &str| model.store.find(name).unwrap().index();
    let grad = |w: &LossWeights, f: &AblationFlags, step: u64, id: usize| {
        model.step(Some(&s), &t, w, f, step).unwrap().grads[id].clone().unwrap()
    };
    // even step: teachers see no KL gradient
    let tp = head("T_t_prime.fc2.w");
    assert!(grad(&w, &ce_di, 0, tp).max_abs_diff(&grad(&w, &only_ce, 0, tp)) < 1e-12);
    // odd step: the student sees only its own cross-entropy
    let st = head("T_stu.fc2.w");
    let no_kl = LossWeights { alpha: 0.0, ..w };
    assert!(grad(&w, &ce_di, 1, st).max_abs_diff(&grad(&no_kl, &ce_di, 1, st)) < 1e-12);
    assert!(grad(&w, &ce_di, 0, st).max_abs_diff(&grad(&no_kl, &ce_di, 0, st)) > 1e-9);
}

#[test]
fn step_without_source_uses_target_terms_only() {
    let model = tiny_model(8);
    let (_, t) = batches(8, 4);
    let out = model.step(None, &t, &LossWeights::default(), &AblationFlags { ce: true, di: true, ..AblationFlags::none() }, 0).unwrap();
    assert_eq!((out.report.e_ts, out.report.e_i, out.report.e_i_prime), (0.0, 0.0, 0.0));
    assert!(out.report.e_tt > 0.0 && out.report.e_kl1 > 0.0);
    for id in model.store.ids() {
        if model.store.name(id).starts_with("F_s.") || model.store.name(id).starts_with("T_s.") {
            assert!(out.grads[id.index()].is_none());
        }
    }
}

#[test]
fn non_finite_input_aborts_with_report() {
    let model = tiny_model(9);
    let (s, mut t) = batches(9, 3);
    t.windows.data_mut()[0] = f64::NAN;
    match model.step(Some(&s), &t, &LossWeights::default(), &AblationFlags::all(), 0) {
        Err(cki_core::Error::NonFinite(r)) => assert!(!r.all_finite()),
        other => panic!("expected NonFinite, got {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn target_ce_contracts() {
    let mut model = tiny_model(10);
    let (_, t) = batches(10, 3);
    let one = t.select(&[0]);
    let dup = t.select(&[0, 0, 0]);
    for path in [Path::Shared, Path::Complementary, Path::Student] {
        let a = model.target_ce(&one, path).unwrap();
        let b = model.target_ce(&dup, path).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
    for name in ["T_t.fc2.w", "T_t.fc2.b"] {
        let id = model.store.find(name).unwrap();
        model.store.get_mut(id).data_mut().fill(0.0);
    }
    let v = model.target_ce(&t, Path::Shared).unwrap();
    assert!((v - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn student_path_shares_the_target_encoder() {
    let mut model = tiny_model(11);
    let (_, t) = batches(11, 3);
    let base = model.target_ce(&t, Path::Student).unwrap();
    let ft = model.store.find("F_t.conv1.w").unwrap();
    model.store.get_mut(ft).data_mut()[0] += 0.5;
    let moved = model.target_ce(&t, Path::Student).unwrap();
    assert!((moved - base).abs() > 1e-9);
    let mut model = tiny_model(11);
    let ftp = model.store.find("F_t_prime.conv1.w").unwrap();
    model.store.get_mut(ftp).data_mut()[0] += 0.5;
    assert_eq!(model.target_ce(&t, Path::Student).unwrap(), base);
}

#[test]
fn predict_is_deterministic_and_in_range() {
    let model = tiny_model(12);
    let (_, t) = batches(12, 7);
    for path in [Path::Shared, Path::Student] {
        let a = model.predict(&t.windows, path);
        assert_eq!(a, model.predict(&t.windows, path));
        assert!(a.iter().all(|&k| (1..=3).contains(&k)));
    }
}

#[test]
fn ablation_flags_serde_and_ladder() {
    let f: AblationFlags = serde_json::from_str(r#"["ASC","CE"]"#).unwrap();
    assert_eq!(f, AblationFlags { asc: true, ce: true, ..AblationFlags::none() });
    assert_eq!(serde_json::to_string(&AblationFlags::all()).unwrap(), r#"["ASC","CKSP","CE","DI"]"#);
    let labels: Vec<String> = AblationFlags::ladder().iter().map(|f| f.label()).collect();
    assert_eq!(labels, ["baseline", "ASC", "ASC+CKSP", "ASC+CKSP+CE", "ASC+CKSP+CE+DI"]);
}

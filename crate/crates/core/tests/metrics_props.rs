use cki_core::metrics::{compute_metrics, confusion_matrix, ConfusionMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// OA, AA and Cohen's kappa from proportions, the way they are usually
/// written out by hand.
fn textbook(m: &[Vec<u64>]) -> (f64, f64, f64) {
    let k = m.len();
    let n: f64 = m.iter().flatten().map(|&c| c as f64).sum();
    let p: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|&c| c as f64 / n).collect()).collect();
    let po: f64 = (0..k).map(|i| p[i][i]).sum();
    let mut pe = 0.0;
    for i in 0..k {
        let row: f64 = p[i].iter().sum();
        let col: f64 = (0..k).map(|r| p[r][i]).sum();
        pe += row * col;
    }
    let nonempty: Vec<usize> = (0..k).filter(|&i| m[i].iter().sum::<u64>() > 0).collect();
    let aa = nonempty.iter().map(|&i| m[i][i] as f64 / m[i].iter().sum::<u64>() as f64).sum::<f64>() / nonempty.len() as f64;
    let kappa = if pe == 1.0 { 1.0 } else { (po - pe) / (1.0 - pe) };
    (po, aa, kappa)
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let k = rng.random_range(2..10);
    let sparse = rng.random_bool(0.3);
    let mut m: Vec<Vec<u64>> = (0..k)
        .map(|_| (0..k).map(|_| if sparse && rng.random_bool(0.5) { 0 } else { rng.random_range(0..50) }).collect())
        .collect();
    m[0][0] += 1;
    m
}

#[test]
fn thousand_matrices_match_the_textbook_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let m = random_matrix(&mut rng);
        let r = compute_metrics(&ConfusionMatrix::from_rows(m.clone()).unwrap()).unwrap();
        let (oa, aa, kappa) = textbook(&m);
        assert!((r.oa - oa).abs() < 1e-12);
        assert!((r.aa - aa).abs() < 1e-12);
        assert!((r.kappa - kappa).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&r.kappa));
        assert!((0.0..=1.0).contains(&r.oa) && (0.0..=1.0).contains(&r.aa));
    }
}

#[test]
fn hand_case_kappa() {
    let r = compute_metrics(&ConfusionMatrix::from_rows(vec![vec![4, 1], vec![2, 3]]).unwrap()).unwrap();
    assert!((r.kappa - 0.4).abs() < 1e-12);
    assert!((r.oa - 0.7).abs() < 1e-12);
}

#[test]
fn confusion_counts_match_a_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let k = rng.random_range(1..8);
        let n = rng.random_range(0..200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        let m = confusion_matrix(&truth, &pred, k).unwrap();
        for i in 0..k {
            for j in 0..k {
                let c = truth.iter().zip(&pred).filter(|&(&t, &p)| t == i + 1 && p == j + 1).count();
                assert_eq!(m.counts[i][j], c as u64);
            }
        }
        assert_eq!(m.total(), n as u64);
    }
}

#[test]
fn random_predictions_have_kappa_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 6;
    let truth: Vec<usize> = (0..60_000).map(|_| rng.random_range(1..=k)).collect();
    let pred: Vec<usize> = (0..60_000).map(|_| rng.random_range(1..=k)).collect();
    let r = compute_metrics(&confusion_matrix(&truth, &pred, k).unwrap()).unwrap();
    assert!(r.kappa.abs() < 0.02, "kappa {}", r.kappa);
}

proptest! {
    #[test]
    fn metrics_ignore_relabeling(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng);
        let k = m.len();
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pm: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| m[perm[i]][perm[j]]).collect()).collect();
        let a = compute_metrics(&ConfusionMatrix::from_rows(m).unwrap()).unwrap();
        let b = compute_metrics(&ConfusionMatrix::from_rows(pm).unwrap()).unwrap();
        prop_assert!((a.oa - b.oa).abs() < 1e-12);
        prop_assert!((a.aa - b.aa).abs() < 1e-12);
        prop_assert!((a.kappa - b.kappa).abs() < 1e-12);
    }

    #[test]
    fn kappa_is_one_exactly_for_diagonal(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_matrix(&mut rng);
        let k = m.len();
        let diag = rng.random_bool(0.5);
        for i in 0..k {
            for j in 0..k {
                if i != j && diag {
                    m[i][j] = 0;
                }
            }
        }
        let c = ConfusionMatrix::from_rows(m).unwrap();
        let r = compute_metrics(&c).unwrap();
        prop_assert_eq!(c.is_diagonal(), r.kappa == 1.0);
        prop_assert!((-1.0..=1.0).contains(&r.kappa));
    }
}

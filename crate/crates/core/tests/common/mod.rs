#![allow(dead_code)]

use cki_core::cki::{CkiModel, ModelDims};
use cki_core::data::{Domain, WindowBatch};
use cki_core::ifss::PatchConfig;
use cki_core::nn::ParamStore;
use cki_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

pub fn tiny_patch() -> PatchConfig {
    PatchConfig { patch_h: 2, patch_w: 2, patch_c: 2, embed_dim: 8, depth: 1, heads: 2, ffn_mult: 2 }
}

pub fn tiny_dims() -> ModelDims {
    ModelDims {
        source_bands: 5,
        target_bands: 3,
        source_classes: 4,
        target_classes: 3,
        window: 4,
        common_channels: 4,
        encoder_hidden: 6,
        head_hidden: 6,
        disc_hidden: 5,
    }
}

pub fn tiny_model(seed: u64) -> CkiModel {
    CkiModel::new(tiny_dims(), tiny_patch(), seed).unwrap()
}

pub fn batch(rng: &mut ChaCha8Rng, n: usize, window: usize, bands: usize, classes: usize, domain: Domain) -> WindowBatch {
    let windows = Tensor::from_fn(&[n, window, window, bands], |_| rng.random_range(0.0..1.0));
    WindowBatch {
        windows,
        labels: (0..n).map(|i| i % classes + 1).collect(),
        domain,
        pixel_coords: (0..n).map(|i| (i, 0)).collect(),
    }
}

/// Relative error with an absolute floor for entries that are numerically zero.
pub fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + 1e-8
}

/// Central difference of `f` at element `i` of parameter `id`.
pub fn central_diff(store: &mut ParamStore, id: usize, i: usize, h: f64, mut f: impl FnMut(&ParamStore) -> f64) -> f64 {
    let pid = store.ids().nth(id).unwrap();
    let x0 = store.get(pid).data()[i];
    store.get_mut(pid).data_mut()[i] = x0 + h;
    let up = f(store);
    store.get_mut(pid).data_mut()[i] = x0 - h;
    let down = f(store);
    store.get_mut(pid).data_mut()[i] = x0;
    (up - down) / (2.0 * h)
}

/// O(n²) sample distance correlation written directly from the definition.
pub fn dcor_reference(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let dist = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| x[i].iter().zip(&x[j]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()).collect())
            .collect()
    };
    let center = |d: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let row: Vec<f64> = (0..n).map(|i| d[i].iter().sum::<f64>() / n as f64).collect();
        let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| d[i][j]).sum::<f64>() / n as f64).collect();
        let all = row.iter().sum::<f64>() / n as f64;
        (0..n).map(|i| (0..n).map(|j| d[i][j] - row[i] - col[j] + all).collect()).collect()
    };
    let (ca, cb) = (center(dist(a)), center(dist(b)));
    let m = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += x[i][j] * y[i][j];
            }
        }
        s / (n * n) as f64
    };
    let (cov, va, vb) = (m(&ca, &cb), m(&ca, &ca), m(&cb, &cb));
    if va < 1e-12 || vb < 1e-12 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).sqrt()
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

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

//! Scenes, splits, window extraction and the synthetic two-scene generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Coord = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One hyperspectral scene. The cube is stored pixel-interleaved
/// (`[row][col][band]`); label 0 marks unlabeled background.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub cube: Vec<f32>,
    pub labels: Vec<u16>,
    pub class_names: Vec<String>,
    pub wavelength_range: Option<(f64, f64)>,
    pub scene_id: String,
}

impl SceneCube {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.width + col) * self.bands;
        &self.cube[o..o + self.bands]
    }

    /// Shape, finiteness and label-range checks.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Shape("scene dimensions must be positive".into()));
        }
        let pixels = self.height * self.width;
        if self.cube.len() != pixels * self.bands {
            return Err(Error::Shape(format!(
                "cube holds {} values, expected {}x{}x{}",
                self.cube.len(),
                self.height,
                self.width,
                self.bands
            )));
        }
        if self.labels.len() != pixels {
            return Err(Error::Shape(format!("label raster holds {} values, expected {pixels}", self.labels.len())));
        }
        if let Some(i) = self.cube.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite reflectance at flat index {i}")));
        }
        let k = self.num_classes();
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize > k) {
            return Err(Error::LabelOutOfRange { label: l as usize, classes: k });
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus: every class has at least one labeled pixel.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        let counts = self.class_counts();
        match counts.iter().position(|&c| c == 0) {
            Some(k) => Err(Error::EmptyClass(k + 1)),
            None => Ok(()),
        }
    }

    /// Labeled-pixel count per class `1..=K` (index 0 is class 1).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            if l > 0 && (l as usize) <= counts.len() {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    /// Row-major coordinates of every pixel with the given label.
    pub fn coords_of(&self, class: usize) -> Vec<Coord> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.label(r, c) as usize == class {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Per-band min-max scaling to `[0, 1]`; constant bands map to 0.
    pub fn normalize_bands(&mut self) {
        let b = self.bands;
        let mut lo = vec![f32::INFINITY; b];
        let mut hi = vec![f32::NEG_INFINITY; b];
        for px in self.cube.chunks(b) {
            for (j, &v) in px.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        for px in self.cube.chunks_mut(b) {
            for (j, v) in px.iter_mut().enumerate() {
                let span = hi[j] - lo[j];
                *v = if span > 0.0 { (*v - lo[j]) / span } else { 0.0 };
            }
        }
    }

    pub fn domain_spec(&self, role: Domain) -> DomainSpec {
        DomainSpec { bands: self.bands, num_classes: self.num_classes(), role }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub bands: usize,
    pub num_classes: usize,
    pub role: Domain,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.num_classes < 2 {
            return Err(Error::Invalid(format!(
                "domain needs bands >= 1 and at least 2 classes, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Windows cut around labeled pixels. Labels are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `[B, w, w, C]`
    pub windows: Tensor,
    pub labels: Vec<usize>,
    pub domain: Domain,
    pub pixel_coords: Vec<Coord>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.windows.shape()[3]
    }

    /// Sub-batch of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> WindowBatch {
        let per = self.windows.len() / self.len().max(1);
        let mut data = Vec::with_capacity(rows.len() * per);
        for &r in rows {
            data.extend_from_slice(&self.windows.data()[r * per..(r + 1) * per]);
        }
        let mut shape = self.windows.shape().to_vec();
        shape[0] = rows.len();
        WindowBatch {
            windows: Tensor::new(&shape, data),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            domain: self.domain,
            pixel_coords: rows.iter().map(|&r| self.pixel_coords[r]).collect(),
        }
    }
}

/// Few-shot protocol: per-class training coordinates and the remaining test set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub scene_id: String,
    /// `train_coords[k]` holds the training pixels of class `k + 1`.
    pub train_coords: Vec<Vec<Coord>>,
    pub test_coords: Vec<Coord>,
    pub shots_per_class: usize,
    pub seed: u64,
}

impl SplitManifest {
    pub fn train_len(&self) -> usize {
        self.train_coords.iter().map(Vec::len).sum()
    }

    /// Training coordinates flattened in class order.
    pub fn train_flat(&self) -> Vec<Coord> {
        self.train_coords.iter().flatten().copied().collect()
    }
}

/// Per-class sampling without replacement; every other labeled pixel becomes test.
pub fn make_split(scene: &SceneCube, shots_per_class: usize, seed: u64) -> Result<SplitManifest> {
    if shots_per_class == 0 {
        return Err(Error::Invalid("shots_per_class must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(scene.num_classes());
    let mut test = Vec::new();
    for k in 1..=scene.num_classes() {
        let mut coords = scene.coords_of(k);
        if coords.is_empty() {
            return Err(Error::EmptyClass(k));
        }
        coords.shuffle(&mut rng);
        let take = shots_per_class.min(coords.len());
        let rest = coords.split_off(take);
        test.extend(rest);
        train.push(coords);
    }
    test.sort_unstable();
    Ok(SplitManifest {
        scene_id: scene.scene_id.clone(),
        train_coords: train,
        test_coords: test,
        shots_per_class,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Reflection about the edge pixel, which is not repeated.
    Mirror,
}

pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Cut `window × window` blocks centered on each coordinate (center at
/// `window / 2`), mirror-padded at the borders.
pub fn extract_windows(
    scene: &SceneCube,
    coords: &[Coord],
    window: usize,
    pad: Padding,
    domain: Domain,
) -> Result<WindowBatch> {
    let Padding::Mirror = pad;
    if window == 0 || window % 2 != 0 {
        return Err(Error::Invalid(format!("window must be even and positive, got {window}")));
    }
    let c = scene.bands;
    let half = (window / 2) as isize;
    let mut data = Vec::with_capacity(coords.len() * window * window * c);
    let mut labels = Vec::with_capacity(coords.len());
    for &(row, col) in coords {
        if row >= scene.height || col >= scene.width {
            return Err(Error::CoordOutOfRange { row, col });
        }
        let l = scene.label(row, col) as usize;
        if l == 0 {
            return Err(Error::Invalid(format!("pixel ({row}, {col}) is unlabeled")));
        }
        labels.push(l);
        for dr in 0..window as isize {
            let r = reflect(row as isize + dr - half, scene.height);
            for dc in 0..window as isize {
                let cc = reflect(col as isize + dc - half, scene.width);
                data.extend(scene.pixel(r, cc).iter().map(|&v| v as f64));
            }
        }
    }
    Ok(WindowBatch {
        windows: Tensor::new(&[coords.len(), window, window, c], data),
        labels,
        domain,
        pixel_coords: coords.to_vec(),
    })
}

/// Latent continuum resolution shared by both synthetic sensors.
pub const LATENT_BANDS: usize = 64;
/// Latent span seen by the synthetic source sensor.
pub const SOURCE_LATENT_RANGE: (f64, f64) = (0.0, 47.0);
/// Shifted latent span seen by the synthetic target sensor.
pub const TARGET_LATENT_RANGE: (f64, f64) = (16.0, 63.0);

fn default_tile() -> usize {
    4
}

/// Controllable two-scene transfer problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub source_bands: usize,
    pub target_bands: usize,
    pub shared_classes: usize,
    pub source_private_classes: usize,
    pub target_private_classes: usize,
    pub pixels_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Side of the homogeneous square tiles the scene is painted with.
    #[serde(default = "default_tile")]
    pub tile: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            source_bands: 32,
            target_bands: 20,
            shared_classes: 4,
            source_private_classes: 2,
            target_private_classes: 1,
            pixels_per_class: 48,
            noise_sigma: 0.1,
            seed: 1,
            tile: 4,
        }
    }
}

impl SynthSpec {
    pub fn source_classes(&self) -> usize {
        self.shared_classes + self.source_private_classes
    }

    pub fn target_classes(&self) -> usize {
        self.shared_classes + self.target_private_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.shared_classes < 1 {
            return Err(Error::Invalid("at least one shared class is required".into()));
        }
        if self.source_classes() < 2 || self.target_classes() < 2 {
            return Err(Error::Invalid("each scene needs at least two classes".into()));
        }
        if self.source_bands < 2 || self.target_bands < 2 {
            return Err(Error::Invalid("each sensor needs at least two bands".into()));
        }
        if self.pixels_per_class == 0 || self.tile == 0 {
            return Err(Error::Invalid("pixels_per_class and tile must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Invalid("noise_sigma must be finite and nonnegative".into()));
        }
        let total = self.shared_classes + self.source_private_classes + self.target_private_classes;
        // Mean-removed signatures live in a (LATENT_BANDS - 1)-dimensional space.
        if total > LATENT_BANDS - 1 {
            return Err(Error::Invalid(format!(
                "{total} signatures cannot be orthogonalized in {} latent dimensions",
                LATENT_BANDS - 1
            )));
        }
        Ok(())
    }
}

/// Ground-truth correspondence of shared classes: `(source class, target class)`, 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedClassMap {
    pub pairs: Vec<(usize, usize)>,
}

impl SharedClassMap {
    pub fn target_of(&self, source_class: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == source_class).map(|p| p.1)
    }

    pub fn is_shared_source(&self, source_class: usize) -> bool {
        self.target_of(source_class).is_some()
    }
}

fn gaussian_signature(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps = 3;
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.random_range(0.3..1.0),
                rng.random_range(0.0..LATENT_BANDS as f64),
                rng.random_range(4.0..10.0),
            )
        })
        .collect();
    (0..LATENT_BANDS)
        .map(|t| {
            params
                .iter()
                .map(|&(a, mu, sd)| a * libm::exp(-(t as f64 - mu) * (t as f64 - mu) / (2.0 * sd * sd)))
                .sum()
        })
        .collect()
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean-removed Gram-Schmidt against `basis`, then lifted back to a positive level.
fn orthogonalized(raw: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let level = raw.iter().sum::<f64>() / raw.len() as f64;
    let mut v = centered(raw);
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b) / dot(b, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    // keep the orthogonalized shape at the raw signature's energy
    let target_norm = libm::sqrt(dot(&centered(raw), &centered(raw)));
    let norm = libm::sqrt(dot(&v, &v)).max(1e-12);
    let lo = v.iter().map(|x| x * target_norm / norm).fold(f64::INFINITY, f64::min);
    let lift = level.max(-lo + 0.05);
    v.iter().map(|x| x * target_norm / norm + lift).collect()
}

/// Linear interpolation of a latent-grid signature at a continuous position.
pub fn sample_latent(sig: &[f64], t: f64) -> f64 {
    let t = t.clamp(0.0, (sig.len() - 1) as f64);
    let i = libm::floor(t) as usize;
    if i + 1 >= sig.len() {
        return sig[sig.len() - 1];
    }
    let f = t - i as f64;
    sig[i] * (1.0 - f) + sig[i + 1] * f
}

/// Latent position of band `i` of a sensor with `bands` bands spanning `range`.
pub fn band_position(i: usize, bands: usize, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * i as f64 / (bands - 1) as f64
}

struct Painter<'a> {
    rng: &'a mut ChaCha8Rng,
    noise: f64,
}

impl Painter<'_> {
    fn paint(
        &mut self,
        id: &str,
        bands: usize,
        range: (f64, f64),
        sigs: &[&Vec<f64>],
        background: &[f64],
        names: Vec<String>,
        spec: &SynthSpec,
    ) -> SceneCube {
        let k = sigs.len();
        let t = spec.tile;
        let tiles_per_class = spec.pixels_per_class.div_ceil(t * t);
        let mut tiles: Vec<usize> = (1..=k).flat_map(|c| core::iter::repeat_n(c, tiles_per_class)).collect();
        let side = {
            let mut s = 1;
            while s * s < tiles.len() {
                s += 1;
            }
            s
        };
        tiles.resize(side * side, 0);
        tiles.shuffle(self.rng);
        let (h, w) = (side * t, side * t);
        let mut class_map = vec![0usize; h * w];
        for (ti, &cls) in tiles.iter().enumerate() {
            let (tr, tc) = (ti / side, ti % side);
            for r in 0..t {
                for c in 0..t {
                    class_map[(tr * t + r) * w + tc * t + c] = cls;
                }
            }
        }
        let sample = |sig: &[f64]| -> Vec<f64> {
            (0..bands).map(|b| sample_latent(sig, band_position(b, bands, range))).collect()
        };
        let sampled: Vec<Vec<f64>> = sigs.iter().map(|s| sample(s)).collect();
        let bg = sample(background);
        let mut cube = Vec::with_capacity(h * w * bands);
        for &cls in &class_map {
            let base = if cls == 0 { &bg } else { &sampled[cls - 1] };
            let gain: f64 = if self.noise > 0.0 {
                1.0 + self.noise * self.rng.sample::<f64, _>(StandardNormal)
            } else {
                1.0
            };
            for &v in base {
                let e: f64 = if self.noise > 0.0 { self.noise * self.rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                cube.push((gain * v + e).max(0.0) as f32);
            }
        }
        // Exactly pixels_per_class labeled pixels per class; the surplus of the
        // last tile stays unlabeled.
        let mut labels = vec![0u16; h * w];
        let mut seen = vec![0usize; k + 1];
        for (i, &cls) in class_map.iter().enumerate() {
            if cls > 0 && seen[cls] < spec.pixels_per_class {
                seen[cls] += 1;
                labels[i] = cls as u16;
            }
        }
        let wl = |t: f64| 0.4 + 2.0 * t / (LATENT_BANDS - 1) as f64;
        SceneCube {
            height: h,
            width: w,
            bands,
            cube,
            labels,
            class_names: names,
            wavelength_range: Some((wl(range.0), wl(range.1))),
            scene_id: id.into(),
        }
    }
}

/// Source/target scene pair over a common latent continuum.
///
/// Shared classes reuse one latent signature in both scenes; private
/// signatures are decorrelated (mean-removed orthogonal) from every shared
/// one. The source sensor samples `source_bands` points of
/// [`SOURCE_LATENT_RANGE`], the target `target_bands` points of the shifted
/// [`TARGET_LATENT_RANGE`]. Noise (a per-pixel gain and per-band additive
/// term) scales with `noise_sigma`.
pub fn synth_cross_scene(spec: &SynthSpec) -> Result<(SceneCube, SceneCube, SharedClassMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared: Vec<Vec<f64>> = (0..spec.shared_classes).map(|_| gaussian_signature(&mut rng)).collect();
    let mut basis: Vec<Vec<f64>> = shared.iter().map(|s| centered(s)).collect();
    // Gram-Schmidt basis for the shared span
    for i in 0..basis.len() {
        let (done, rest) = basis.split_at_mut(i);
        let v = &mut rest[0];
        for b in done.iter() {
            let c = dot(v, b) / dot(b, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    basis.retain(|b| dot(b, b) > 1e-18);
    let private = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| orthogonalized(&gaussian_signature(rng), &basis)).collect()
    };
    let src_private = private(spec.source_private_classes, &mut rng);
    let tgt_private = private(spec.target_private_classes, &mut rng);
    let background: Vec<f64> = vec![0.2; LATENT_BANDS];

    let mut target_order: Vec<usize> = (0..spec.shared_classes).collect();
    target_order.shuffle(&mut rng);

    let mut src_sigs: Vec<&Vec<f64>> = shared.iter().collect();
    src_sigs.extend(src_private.iter());
    let mut src_names: Vec<String> = (0..spec.shared_classes).map(|i| format!("shared_{i}")).collect();
    src_names.extend((0..spec.source_private_classes).map(|i| format!("source_private_{i}")));

    let mut tgt_sigs: Vec<&Vec<f64>> = target_order.iter().map(|&i| &shared[i]).collect();
    tgt_sigs.extend(tgt_private.iter());
    let mut tgt_names: Vec<String> = target_order.iter().map(|i| format!("shared_{i}")).collect();
    tgt_names.extend((0..spec.target_private_classes).map(|i| format!("target_private_{i}")));

    let pairs = (0..spec.shared_classes)
        .map(|i| (i + 1, target_order.iter().position(|&t| t == i).unwrap() + 1))
        .collect();

    let mut painter = Painter { rng: &mut rng, noise: spec.noise_sigma };
    let src_id = format!("synth-{}-source", spec.seed);
    let tgt_id = format!("synth-{}-target", spec.seed);
    let source =
        painter.paint(&src_id, spec.source_bands, SOURCE_LATENT_RANGE, &src_sigs, &background, src_names, spec);
    let target =
        painter.paint(&tgt_id, spec.target_bands, TARGET_LATENT_RANGE, &tgt_sigs, &background, tgt_names, spec);
    Ok((source, target, SharedClassMap { pairs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> SceneCube {
        SceneCube {
            height: 2,
            width: 2,
            bands: 3,
            cube: (0..12).map(|i| i as f32 * 0.5).collect(),
            labels: vec![1, 0, 2, 1],
            class_names: vec!["a".into(), "b".into()],
            wavelength_range: None,
            scene_id: "tiny".into(),
        }
    }

    fn grid_scene(h: usize, w: usize, bands: usize, classes: usize) -> SceneCube {
        SceneCube {
            height: h,
            width: w,
            bands,
            cube: (0..h * w * bands).map(|i| i as f32).collect(),
            labels: (0..h * w).map(|i| (i % classes + 1) as u16).collect(),
            class_names: (0..classes).map(|i| format!("c{i}")).collect(),
            wavelength_range: None,
            scene_id: "grid".into(),
        }
    }

    #[test]
    fn validation_catches_bad_labels_and_shapes() {
        let mut s = tiny_scene();
        assert!(s.validate_for_training().is_ok());
        s.labels[1] = 3;
        assert_eq!(s.validate(), Err(Error::LabelOutOfRange { label: 3, classes: 2 }));
        let mut s = tiny_scene();
        s.cube.pop();
        assert!(matches!(s.validate(), Err(Error::Shape(_))));
        let mut s = tiny_scene();
        s.labels = vec![1, 0, 1, 1];
        assert_eq!(s.validate_for_training(), Err(Error::EmptyClass(2)));
    }

    #[test]
    fn split_counts_and_clamp() {
        let s = grid_scene(30, 30, 2, 9);
        let m = make_split(&s, 10, 7).unwrap();
        assert_eq!(m.train_len(), 90);
        assert_eq!(m.test_coords.len(), 900 - 90);
        assert_eq!(make_split(&s, 10, 7).unwrap(), m);
        assert_ne!(make_split(&s, 10, 8).unwrap(), m);

        let mut small = grid_scene(4, 4, 1, 2);
        small.labels = vec![1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2];
        let m = make_split(&small, 10, 1).unwrap();
        assert_eq!(m.train_coords[0].len(), 6);
        assert_eq!(m.train_coords[1].len(), 10);
        assert!(make_split(&small, 0, 1).is_err());
        small.labels[0..6].fill(2);
        assert_eq!(make_split(&small, 3, 1), Err(Error::EmptyClass(1)));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-3, 1), 0);
        assert_eq!(reflect(-7, 3), 1);
    }

    #[test]
    fn interior_window_is_raw_crop() {
        let s = grid_scene(12, 12, 3, 4);
        let b = extract_windows(&s, &[(6, 5)], 8, Padding::Mirror, Domain::Source).unwrap();
        assert_eq!(b.windows.shape(), &[1, 8, 8, 3]);
        for r in 0..8 {
            for c in 0..8 {
                for k in 0..3 {
                    let got = b.windows.data()[(r * 8 + c) * 3 + k];
                    assert_eq!(got, s.pixel(6 - 4 + r, 5 - 4 + c)[k] as f64);
                }
            }
        }
        assert_eq!(b.labels, vec![s.label(6, 5) as usize]);
    }

    #[test]
    fn window_errors() {
        let s = grid_scene(6, 6, 2, 2);
        assert_eq!(
            extract_windows(&s, &[(6, 0)], 4, Padding::Mirror, Domain::Source),
            Err(Error::CoordOutOfRange { row: 6, col: 0 })
        );
        assert!(extract_windows(&s, &[(0, 0)], 5, Padding::Mirror, Domain::Source).is_err());
        let t = tiny_scene();
        assert!(extract_windows(&t, &[(0, 1)], 2, Padding::Mirror, Domain::Source).is_err());
    }

    #[test]
    fn synth_shapes_and_map() {
        let spec = SynthSpec::default();
        let (s, t, map) = synth_cross_scene(&spec).unwrap();
        assert_eq!((s.bands, t.bands), (32, 20));
        assert_eq!(s.num_classes(), 6);
        assert_eq!(t.num_classes(), 5);
        s.validate_for_training().unwrap();
        t.validate_for_training().unwrap();
        assert!(s.class_counts().iter().all(|&c| c == spec.pixels_per_class));
        assert_eq!(map.pairs.len(), 4);
        for &(a, b) in &map.pairs {
            assert_eq!(s.class_names[a - 1], t.class_names[b - 1]);
        }
        assert!(!map.is_shared_source(5));
        let infeasible = SynthSpec { source_private_classes: 60, ..spec };
        assert!(synth_cross_scene(&infeasible).is_err());
    }
}

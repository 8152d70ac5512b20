use cki_core::data::{
    band_position, extract_windows, make_split, synth_cross_scene, Domain, Padding, SceneCube, SynthSpec,
    SOURCE_LATENT_RANGE, TARGET_LATENT_RANGE,
};
use proptest::prelude::*;

fn grid(h: usize, w: usize, bands: usize, classes: usize) -> SceneCube {
    SceneCube {
        height: h,
        width: w,
        bands,
        cube: (0..h * w * bands).map(|i| (i as f32 * 0.37).sin().abs()).collect(),
        labels: (0..h * w).map(|i| (i % classes + 1) as u16).collect(),
        class_names: (0..classes).map(|i| format!("c{i}")).collect(),
        wavelength_range: None,
        scene_id: "grid".into(),
    }
}

#[test]
fn split_is_deterministic_and_seed_sensitive() {
    let scene = grid(30, 30, 2, 9);
    let a = make_split(&scene, 10, 7).unwrap();
    assert_eq!(a, make_split(&scene, 10, 7).unwrap());
    assert_eq!(a.train_len(), 90);
    for seed in 8..40 {
        assert_ne!(a.train_coords, make_split(&scene, 10, seed).unwrap().train_coords);
    }
    let train = a.train_flat();
    assert!(a.test_coords.iter().all(|c| !train.contains(c)));
    assert_eq!(train.len() + a.test_coords.len(), 900);
}

/// Mirror padding written out as an explicit padded raster.
fn padded_oracle(scene: &SceneCube, pad: usize) -> (usize, usize, Vec<f32>) {
    let (h, w, c) = (scene.height, scene.width, scene.bands);
    let mirror = |i: isize, n: usize| -> usize {
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n as isize {
                i = 2 * (n as isize - 1) - i;
            } else {
                return i as usize;
            }
        }
    };
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(ph * pw * c);
    for r in 0..ph {
        for q in 0..pw {
            let sr = mirror(r as isize - pad as isize, h);
            let sc = mirror(q as isize - pad as isize, w);
            out.extend_from_slice(scene.pixel(sr, sc));
        }
    }
    (ph, pw, out)
}

#[test]
fn border_windows_match_explicit_padding() {
    let scene = grid(9, 7, 3, 4);
    let win = 8;
    let (_, pw, padded) = padded_oracle(&scene, win);
    let coords: Vec<(usize, usize)> = (0..9).flat_map(|r| (0..7).map(move |c| (r, c))).collect();
    let b = extract_windows(&scene, &coords, win, Padding::Mirror, Domain::Source).unwrap();
    for (n, &(r, c)) in coords.iter().enumerate() {
        for dr in 0..win {
            for dc in 0..win {
                let pr = r + win + dr - win / 2;
                let pc = c + win + dc - win / 2;
                for band in 0..3 {
                    let want = padded[(pr * pw + pc) * 3 + band] as f64;
                    let got = b.windows.data()[((n * win + dr) * win + dc) * 3 + band];
                    assert_eq!(got, want, "coord ({r},{c}) offset ({dr},{dc})");
                }
            }
        }
    }
    // the corner window's inner quadrant is the raw corner
    let corner = extract_windows(&scene, &[(0, 0)], win, Padding::Mirror, Domain::Source).unwrap();
    for dr in 0..4 {
        for dc in 0..4 {
            assert_eq!(&corner.windows.data()[((4 + dr) * win + 4 + dc) * 3..][..3], &scene.pixel(dr, dc).iter().map(|&v| v as f64).collect::<Vec<_>>()[..]);
        }
    }
}

proptest! {
    #[test]
    fn interior_windows_are_raw_crops(r in 4usize..12, c in 4usize..12, half in 1usize..5) {
        let scene = grid(16, 16, 2, 3);
        let win = 2 * half;
        prop_assume!(r + half <= 16 && c + half <= 16 && r >= half && c >= half);
        let b = extract_windows(&scene, &[(r, c)], win, Padding::Mirror, Domain::Target).unwrap();
        prop_assert_eq!(b.labels[0], scene.label(r, c) as usize);
        for dr in 0..win {
            for dc in 0..win {
                let px = scene.pixel(r + dr - half, c + dc - half);
                for k in 0..2 {
                    prop_assert_eq!(b.windows.data()[(dr * win + dc) * 2 + k], px[k] as f64);
                }
            }
        }
    }
}

#[test]
fn sixty_four_coords_make_batch_of_64() {
    let scene = grid(8, 8, 2, 2);
    let coords: Vec<_> = (0..64).map(|i| (i / 8, i % 8)).collect();
    let b = extract_windows(&scene, &coords, 4, Padding::Mirror, Domain::Source).unwrap();
    assert_eq!(b.len(), 64);
    assert_eq!(b.windows.shape(), &[64, 4, 4, 2]);
}

#[test]
fn synth_is_deterministic_and_reports_bands() {
    let spec = SynthSpec::default();
    let a = synth_cross_scene(&spec).unwrap();
    let b = synth_cross_scene(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.0.bands, a.1.bands), (32, 20));
    assert_eq!((a.0.num_classes(), a.1.num_classes()), (6, 5));
    assert_eq!(a.2.pairs.len(), 4);
}

fn first_pixel_of(scene: &SceneCube, class: usize) -> Vec<f64> {
    let (r, c) = scene.coords_of(class)[0];
    scene.pixel(r, c).iter().map(|&v| v as f64).collect()
}

/// Piecewise-linear resampling of a sensor spectrum onto integer latent positions.
fn to_latent(spec: &[f64], range: (f64, f64), grid: &[f64]) -> Vec<f64> {
    let n = spec.len();
    grid.iter()
        .map(|&t| {
            let x = (t - range.0) / (range.1 - range.0) * (n - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            let f = x - i as f64;
            spec[i] * (1.0 - f) + spec[i + 1] * f
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn noiseless_shared_classes_agree_on_the_latent_grid() {
    for seed in 1..6 {
        let spec = SynthSpec { noise_sigma: 0.0, seed, ..SynthSpec::default() };
        let (src, tgt, map) = synth_cross_scene(&spec).unwrap();
        // overlap of the two sensors' latent spans
        let grid: Vec<f64> = (TARGET_LATENT_RANGE.0 as usize..=SOURCE_LATENT_RANGE.1 as usize).map(|t| t as f64).collect();
        assert!(band_position(0, 20, TARGET_LATENT_RANGE) <= grid[0]);
        for &(s, t) in &map.pairs {
            let a = to_latent(&first_pixel_of(&src, s), SOURCE_LATENT_RANGE, &grid);
            let b = to_latent(&first_pixel_of(&tgt, t), TARGET_LATENT_RANGE, &grid);
            let r = pearson(&a, &b);
            assert!(r > 0.995, "seed {seed} pair ({s},{t}): r = {r}");
        }
    }
}

fn nearest_centroid_accuracy(scene: &SceneCube) -> f64 {
    let k = scene.num_classes();
    let c = scene.bands;
    let mut centroids = vec![vec![0.0; c]; k];
    let counts = scene.class_counts();
    for i in 0..scene.height * scene.width {
        let l = scene.labels[i] as usize;
        if l > 0 {
            for b in 0..c {
                centroids[l - 1][b] += scene.cube[i * c + b] as f64 / counts[l - 1] as f64;
            }
        }
    }
    let (mut hit, mut n) = (0, 0);
    for i in 0..scene.height * scene.width {
        let l = scene.labels[i] as usize;
        if l == 0 {
            continue;
        }
        let px = &scene.cube[i * c..(i + 1) * c];
        let best = (0..k)
            .min_by(|&a, &b| {
                let d = |m: &Vec<f64>| px.iter().zip(m).map(|(&x, y)| (x as f64 - y).powi(2)).sum::<f64>();
                d(&centroids[a]).total_cmp(&d(&centroids[b]))
            })
            .unwrap();
        hit += usize::from(best + 1 == l);
        n += 1;
    }
    hit as f64 / n as f64
}

#[test]
fn noiseless_scenes_are_centroid_separable() {
    for seed in 1..6 {
        let spec = SynthSpec { noise_sigma: 0.0, seed, ..SynthSpec::default() };
        let (src, tgt, _) = synth_cross_scene(&spec).unwrap();
        assert_eq!(nearest_centroid_accuracy(&src), 1.0);
        assert_eq!(nearest_centroid_accuracy(&tgt), 1.0);
        assert!(src.class_counts().iter().all(|&n| n == spec.pixels_per_class));
    }
}

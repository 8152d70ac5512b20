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

//! Scene, manifest and report files.
//!
//! A scene is a JSON header next to two raw little-endian payloads: the cube
//! as `f32` in band-sequential order (all of band 0, then band 1, ...) and
//! the label raster as `u16` in row-major order. Payload paths in the header
//! are resolved relative to the header's directory.

use std::fs;
use std::path::{Path, PathBuf};

use cki_core::data::{SceneCube, SplitManifest};
use cki_core::metrics::EvalReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CkiError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneHeader {
    pub scene_id: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub cube_file: PathBuf,
    pub label_file: PathBuf,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_max: Option<f64>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CkiError::io(path))?;
    serde_json::from_str(&text).map_err(CkiError::json(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CkiError::json(path))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CkiError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CkiError::io(path))
}

fn resolve(header_path: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        return file.to_path_buf();
    }
    header_path.parent().unwrap_or(Path::new("")).join(file)
}

fn read_payload(path: &Path, expected: usize, width: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(CkiError::io(path))?;
    if bytes.len() != expected * width {
        return Err(CkiError::format(
            path,
            format!(
                "payload holds {} bytes, header implies {} ({} values of {} bytes)",
                bytes.len(),
                expected * width,
                expected,
                width
            ),
        ));
    }
    Ok(bytes)
}

/// Reads a scene; `normalize` rescales every band to `[0, 1]`.
pub fn load_scene(header_path: &Path, normalize: bool) -> Result<SceneCube> {
    let h: SceneHeader = read_json(header_path)?;
    let pixels = h.height * h.width;
    let cube_path = resolve(header_path, &h.cube_file);
    let raw = read_payload(&cube_path, pixels * h.bands, 4)?;
    let mut cube = vec![0f32; pixels * h.bands];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let (band, px) = (i / pixels, i % pixels);
        cube[px * h.bands + band] = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    let label_path = resolve(header_path, &h.label_file);
    let raw = read_payload(&label_path, pixels, 2)?;
    let labels = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    let wavelength_range = match (h.wavelength_min, h.wavelength_max) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let mut scene = SceneCube {
        height: h.height,
        width: h.width,
        bands: h.bands,
        cube,
        labels,
        class_names: h.class_names,
        wavelength_range,
        scene_id: h.scene_id,
    };
    scene.validate()?;
    if normalize {
        scene.normalize_bands();
    }
    Ok(scene)
}

/// Writes `scene` as `<stem>.json`, `<stem>.cube.f32` and `<stem>.labels.u16`
/// beside `header_path`.
pub fn save_scene(scene: &SceneCube, header_path: &Path) -> Result<()> {
    scene.validate()?;
    let stem = header_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
    let cube_file = PathBuf::from(format!("{stem}.cube.f32"));
    let label_file = PathBuf::from(format!("{stem}.labels.u16"));
    let pixels = scene.height * scene.width;
    let mut raw = Vec::with_capacity(pixels * scene.bands * 4);
    for band in 0..scene.bands {
        for px in 0..pixels {
            raw.extend_from_slice(&scene.cube[px * scene.bands + band].to_le_bytes());
        }
    }
    write_file(&resolve(header_path, &cube_file), &raw)?;
    let raw: Vec<u8> = scene.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    write_file(&resolve(header_path, &label_file), &raw)?;
    let header = SceneHeader {
        scene_id: scene.scene_id.clone(),
        height: scene.height,
        width: scene.width,
        bands: scene.bands,
        cube_file,
        label_file,
        class_names: scene.class_names.clone(),
        wavelength_min: scene.wavelength_range.map(|r| r.0),
        wavelength_max: scene.wavelength_range.map(|r| r.1),
    };
    write_json(header_path, &header)
}

pub fn load_manifest(path: &Path) -> Result<SplitManifest> {
    read_json(path)
}

pub fn save_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    write_json(path, manifest)
}

/// Key/value lines followed by the confusion matrix (rows are true classes).
pub fn eval_report_text(report: &EvalReport, class_names: &[String]) -> String {
    let mut s = String::new();
    s.push_str(&format!("n\t{}\noa\t{:.6}\naa\t{:.6}\nkappa\t{:.6}\n", report.n, report.oa, report.aa, report.kappa));
    for (k, acc) in report.per_class_acc.iter().enumerate() {
        let name = class_names.get(k).map(String::as_str).unwrap_or("");
        let flag = if report.empty_classes.contains(&(k + 1)) { "\tempty" } else { "" };
        s.push_str(&format!("class\t{}\t{name}\t{acc:.6}{flag}\n", k + 1));
    }
    s.push_str("confusion\n");
    for row in &report.confusion.counts {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

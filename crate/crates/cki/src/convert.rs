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

//! Import of headerless raw rasters (ENVI-style payloads) into [`SceneCube`].
//!
//! Any sample type and interleave is accepted for the cube; the label raster
//! is a row-major integer image where 0 marks unlabeled pixels.

use std::fs;
use std::path::Path;

use cki_core::data::SceneCube;

use crate::error::{CkiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interleave {
    /// band, row, col
    Bsq,
    /// row, band, col
    Bil,
    /// row, col, band
    Bip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleType {
    U8,
    U16,
    I16,
    I32,
    F32,
    F64,
}

impl SampleType {
    pub fn width(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::U16 | SampleType::I16 => 2,
            SampleType::I32 | SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = b.try_into().expect("sample width");
                (if big_endian { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            SampleType::U8 => b[0] as f64,
            SampleType::U16 => num!(u16),
            SampleType::I16 => num!(i16),
            SampleType::I32 => num!(i32),
            SampleType::F32 => num!(f32),
            SampleType::F64 => num!(f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvertArgs {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub dtype: SampleType,
    pub label_dtype: SampleType,
    pub big_endian: bool,
    pub class_names: Vec<String>,
    pub scene_id: String,
    pub wavelength_range: Option<(f64, f64)>,
}

fn read_samples(path: &Path, count: usize, ty: SampleType, big_endian: bool) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(CkiError::io(path))?;
    if bytes.len() != count * ty.width() {
        return Err(CkiError::format(
            path,
            format!("{} bytes, expected {} samples of {} bytes", bytes.len(), count, ty.width()),
        ));
    }
    Ok(bytes.chunks_exact(ty.width()).map(|c| ty.decode(c, big_endian)).collect())
}

pub fn convert(cube_path: &Path, label_path: &Path, a: &ConvertArgs) -> Result<SceneCube> {
    let (h, w, b) = (a.height, a.width, a.bands);
    let raw = read_samples(cube_path, h * w * b, a.dtype, a.big_endian)?;
    let mut cube = vec![0f32; h * w * b];
    for r in 0..h {
        for c in 0..w {
            for k in 0..b {
                let src = match a.interleave {
                    Interleave::Bsq => (k * h + r) * w + c,
                    Interleave::Bil => (r * b + k) * w + c,
                    Interleave::Bip => (r * w + c) * b + k,
                };
                cube[(r * w + c) * b + k] = raw[src] as f32;
            }
        }
    }
    let labels = read_samples(label_path, h * w, a.label_dtype, a.big_endian)?;
    let mut out = Vec::with_capacity(labels.len());
    for v in labels {
        if v < 0.0 || v.fract() != 0.0 || v > u16::MAX as f64 {
            return Err(CkiError::format(label_path, format!("label value {v} is not a class index")));
        }
        out.push(v as u16);
    }
    let scene = SceneCube {
        height: h,
        width: w,
        bands: b,
        cube,
        labels: out,
        class_names: a.class_names.clone(),
        wavelength_range: a.wavelength_range,
        scene_id: a.scene_id.clone(),
    };
    scene.validate()?;
    Ok(scene)
}

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

//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CKICKPT\0"
//! version    u32      currently 1
//! meta_len   u64      length of the JSON metadata block
//! meta       JSON     CheckpointMeta
//! count      u32      number of parameter tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   data     f64 LE, row-major
//! ```
//!
//! A `<file>.shapes.txt` sidecar lists `name<TAB>d0xd1x...` per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use cki_core::cki::{AblationFlags, CkiModel, LossWeights, ModelDims, Path as EvalPath};
use cki_core::ifss::PatchConfig;
use cki_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CkiError, Result};
use crate::io::{write_file, write_text};

pub const MAGIC: &[u8; 8] = b"CKICKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    pub patch: PatchConfig,
    pub loss_weights: LossWeights,
    pub ablation_flags: AblationFlags,
    pub eval_path: EvalPath,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".shapes.txt");
    PathBuf::from(s)
}

fn shape_text(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    if dims.is_empty() {
        "scalar".into()
    } else {
        dims.join("x")
    }
}

pub fn save_checkpoint(path: &Path, model: &CkiModel, meta: &CheckpointMeta) -> Result<()> {
    let json = serde_json::to_vec(meta).map_err(CkiError::json(path))?;
    let mut buf = Vec::with_capacity(64 + json.len() + model.store.numel() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    let mut sidecar = String::new();
    for (name, t) in model.store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sidecar.push_str(&format!("{name}\t{}\n", shape_text(t.shape())));
    }
    write_file(path, &buf)?;
    write_text(&sidecar_path(path), &sidecar)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CkiError::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(CkiModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(CkiError::io(path))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(CkiError::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CkiError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?).map_err(CkiError::json(path))?;
    let mut model = CkiModel::new(meta.dims, meta.patch, 0)?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(CkiError::format(path, format!("{count} tensors, model has {}", model.store.len())));
    }
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CkiError::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let id = model.store.find(&name).ok_or_else(|| CkiError::format(path, format!("unknown tensor {name}")))?;
        if model.store.get(id).shape() != shape.as_slice() {
            return Err(CkiError::format(
                path,
                format!("{name}: stored shape {shape:?}, model expects {:?}", model.store.get(id).shape()),
            ));
        }
        let n: usize = shape.iter().product();
        let data = r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        *model.store.get_mut(id) = Tensor::new(&shape, data);
    }
    if r.pos != bytes.len() {
        return Err(CkiError::format(path, "trailing bytes after last tensor"));
    }
    Ok((model, meta))
}

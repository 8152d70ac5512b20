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

use std::path::PathBuf;

use crate::train::RunFailure;

#[derive(Debug, thiserror::Error)]
pub enum CkiError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed file {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] cki_core::Error),
    #[error("training aborted at epoch {}, step {}: {}", .0.epoch, .0.step, .0.error)]
    Run(Box<RunFailure>),
}

impl CkiError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CkiError {
        let path = path.into();
        move |source| CkiError::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CkiError {
        let path = path.into();
        move |source| CkiError::Json { path, source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> CkiError {
        CkiError::Format { path: path.into(), msg: msg.into() }
    }

    /// Process exit code: 3 for numerical failure, 2 for everything else
    /// (bad configuration, unreadable or malformed inputs).
    pub fn exit_code(&self) -> i32 {
        match self {
            CkiError::Core(cki_core::Error::NonFinite(_)) => 3,
            CkiError::Run(f) if matches!(f.error, cki_core::Error::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CkiError>;

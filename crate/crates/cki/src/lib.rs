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

//! Scene and checkpoint files, run configuration, the training loop and the
//! experiment drivers around [`cki_core`].

pub mod checkpoint;
pub mod config;
pub mod convert;
pub mod drivers;
pub mod error;
pub mod io;
pub mod train;

pub use config::{RunConfig, SceneSource};
pub use error::{CkiError, Result};
pub use train::{evaluate, train, RunRecord};

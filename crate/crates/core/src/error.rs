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

use alloc::string::String;
use core::fmt;

use crate::cki::LossReport;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A shape or divisibility contract was violated.
    Shape(String),
    /// A label fell outside `1..=classes`.
    LabelOutOfRange { label: usize, classes: usize },
    /// A pixel coordinate fell outside the raster.
    CoordOutOfRange { row: usize, col: usize },
    /// A class required by the operation has no labeled pixels.
    EmptyClass(usize),
    /// Invalid argument or configuration value.
    Invalid(String),
    /// A probability row had negative entries or did not sum to one.
    NotADistribution(String),
    /// A loss became NaN or infinite; the offending report is attached.
    NonFinite(alloc::boxed::Box<LossReport>),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside 1..={classes}")
            }
            Error::CoordOutOfRange { row, col } => {
                write!(f, "coordinate ({row}, {col}) outside raster")
            }
            Error::EmptyClass(k) => write!(f, "class {k} has no labeled pixels"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::NotADistribution(msg) => write!(f, "not a probability distribution: {msg}"),
            Error::NonFinite(report) => write!(f, "non-finite loss (total = {})", report.total),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

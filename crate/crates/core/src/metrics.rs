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

//! Overall accuracy, average accuracy and Cohen's kappa from a confusion matrix.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K × K` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|i| (0..self.classes).all(|j| i == j || self.counts[i][j] == 0))
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// Labels are 1-based.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Shape("label slices differ in length".into()));
    }
    let mut m = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(pred) {
        for l in [t, p] {
            if l == 0 || l > classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        m.counts[t - 1][p - 1] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class_acc: Vec<f64>,
    /// Classes (1-based) with no test samples; excluded from AA.
    pub empty_classes: Vec<usize>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub n: u64,
}

pub fn compute_metrics(confusion: &ConfusionMatrix) -> Result<EvalReport> {
    let n = confusion.total();
    if n == 0 {
        return Err(Error::Invalid("metrics need at least one sample".into()));
    }
    let k = confusion.classes;
    let nf = n as f64;
    let oa = confusion.trace() as f64 / nf;
    let mut per_class_acc = Vec::with_capacity(k);
    let mut empty_classes = Vec::new();
    let mut aa_sum = 0.0;
    let mut pe = 0.0;
    for i in 0..k {
        let row = confusion.row_sum(i);
        if row == 0 {
            per_class_acc.push(0.0);
            empty_classes.push(i + 1);
        } else {
            let acc = confusion.counts[i][i] as f64 / row as f64;
            aa_sum += acc;
            per_class_acc.push(acc);
        }
        pe += row as f64 * confusion.col_sum(i) as f64;
    }
    let pe = pe / (nf * nf);
    let aa = aa_sum / (k - empty_classes.len()) as f64;
    let kappa = if 1.0 - pe == 0.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(EvalReport { confusion: confusion.clone(), per_class_acc, empty_classes, oa, aa, kappa, n })
}

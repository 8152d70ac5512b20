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

//! Multi-run drivers: the cumulative ablation ladder and the temperature sweep.

use cki_core::cki::AblationFlags;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CkiError, Result};
use crate::io::{write_json, write_text};
use crate::train::{prepare, train_prepared, RunRecord};

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRuns {
    pub label: String,
    pub seeds: Vec<u64>,
    pub oa: Vec<f64>,
    pub aa: Vec<f64>,
    pub kappa: Vec<f64>,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub aa_mean: f64,
    pub kappa_mean: f64,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl SeedRuns {
    fn from_records(label: String, seeds: &[u64], records: Vec<RunRecord>) -> Self {
        let oa: Vec<f64> = records.iter().map(|r| r.final_eval.oa).collect();
        let aa: Vec<f64> = records.iter().map(|r| r.final_eval.aa).collect();
        let kappa: Vec<f64> = records.iter().map(|r| r.final_eval.kappa).collect();
        let (oa_mean, oa_std) = mean_std(&oa);
        SeedRuns {
            label,
            seeds: seeds.to_vec(),
            aa_mean: mean_std(&aa).0,
            kappa_mean: mean_std(&kappa).0,
            oa,
            aa,
            kappa,
            oa_mean,
            oa_std,
            records,
        }
    }
}

/// Runs `base` once per seed, each with its own output subdirectory.
pub fn run_seeds(base: &RunConfig, seeds: &[u64], label: &str) -> Result<SeedRuns> {
    if seeds.is_empty() {
        return Err(CkiError::Config("at least one seed is required".into()));
    }
    let mut records = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.output_dir = base.output_dir.as_ref().map(|d| d.join(label).join(format!("seed{seed}")));
        let data = prepare(&cfg)?;
        records.push(train_prepared(&cfg, &data)?.0);
    }
    Ok(SeedRuns::from_records(label.to_string(), seeds, records))
}

fn table_text(header: &str, rows: &[SeedRuns]) -> String {
    let mut s = format!("{header}\toa_mean\toa_std\taa_mean\tkappa_mean\tseeds\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
            r.label,
            r.oa_mean,
            r.oa_std,
            r.aa_mean,
            r.kappa_mean,
            r.seeds.len()
        ));
    }
    s
}

/// The five cumulative configurations in ladder order.
pub fn ablate(base: &RunConfig, seeds: &[u64]) -> Result<Vec<SeedRuns>> {
    let mut rows = Vec::with_capacity(5);
    for flags in AblationFlags::ladder() {
        let mut cfg = base.clone();
        cfg.ablation_flags = flags;
        cfg.output_dir = base.output_dir.as_ref().map(|d| d.join("ablation"));
        rows.push(run_seeds(&cfg, seeds, &flags.label())?);
    }
    if let Some(dir) = &base.output_dir {
        write_text(&dir.join("ablation.tsv"), &table_text("config", &rows))?;
        write_json(&dir.join("ablation.json"), &rows)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: f64,
    pub runs: SeedRuns,
}

/// One seed-averaged run per temperature; requires distillation to be on.
pub fn sweep_temperature(base: &RunConfig, taus: &[f64], seeds: &[u64]) -> Result<Vec<TauRow>> {
    if !base.ablation_flags.di {
        return Err(CkiError::Config("the temperature sweep needs the DI component enabled".into()));
    }
    if taus.is_empty() || taus.iter().any(|&t| !(t > 0.0)) {
        return Err(CkiError::Config("temperatures must be a non-empty list of positive values".into()));
    }
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut cfg = base.clone();
        cfg.loss_weights.tau = tau;
        cfg.output_dir = base.output_dir.as_ref().map(|d| d.join("tau_sweep"));
        let runs = run_seeds(&cfg, seeds, &format!("tau{tau}"))?;
        rows.push(TauRow { tau, runs });
    }
    if let Some(dir) = &base.output_dir {
        write_text(&dir.join("tau_sweep.tsv"), &tau_table_text(&rows))?;
        write_json(&dir.join("tau_sweep.json"), &rows)?;
    }
    Ok(rows)
}

pub fn tau_table_text(rows: &[TauRow]) -> String {
    let mut s = String::from("tau\toa_mean\toa_std\tseeds\n");
    for r in rows {
        s.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", r.tau, r.runs.oa_mean, r.runs.oa_std, r.runs.seeds.len()));
    }
    s
}

pub fn ablation_table_text(rows: &[SeedRuns]) -> String {
    table_text("config", rows)
}

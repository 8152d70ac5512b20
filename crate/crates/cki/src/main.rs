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

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cki::config::RunConfig;
use cki::convert::{convert, ConvertArgs, Interleave, SampleType};
use cki::drivers::{ablate, ablation_table_text, sweep_temperature, tau_table_text};
use cki::error::{CkiError, Result};
use cki::io::{eval_report_text, load_scene, read_json, save_manifest, save_scene, write_json};
use cki::train::{evaluate, train};
use cki_core::data::{make_split, synth_cross_scene, SynthSpec};

#[derive(Parser)]
#[command(name = "cki", version, about = "Cross-scene knowledge integration for hyperspectral classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration and write its outputs.
    Train {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on the test coordinates of a split manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Skip per-band min-max scaling of the scene.
        #[arg(long)]
        raw: bool,
        /// Write the report as JSON here as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the five cumulative ablation configurations.
    Ablate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Sweep the distillation temperature.
    SweepTau {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        taus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write a synthetic source/target scene pair.
    Synth {
        /// JSON synthetic spec; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Convert a raw third-party raster into a scene header and payloads.
    Convert {
        /// Raw cube file without a header.
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        bands: usize,
        #[arg(long, value_enum, default_value = "bsq")]
        interleave: InterleaveArg,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: SampleArg,
        #[arg(long, value_enum, default_value = "u16")]
        label_dtype: SampleArg,
        #[arg(long)]
        big_endian: bool,
        /// Comma-separated class names, one per label value 1..K.
        #[arg(long, value_delimiter = ',')]
        class_names: Vec<String>,
        #[arg(long)]
        scene_id: Option<String>,
        #[arg(long)]
        wavelength_min: Option<f64>,
        #[arg(long)]
        wavelength_max: Option<f64>,
        /// Output header path; payloads are written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a seeded few-shot split of a scene.
    Split {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 10)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InterleaveArg {
    Bsq,
    Bil,
    Bip,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleArg {
    U8,
    U16,
    I16,
    I32,
    F32,
    F64,
}

impl From<InterleaveArg> for Interleave {
    fn from(v: InterleaveArg) -> Self {
        match v {
            InterleaveArg::Bsq => Interleave::Bsq,
            InterleaveArg::Bil => Interleave::Bil,
            InterleaveArg::Bip => Interleave::Bip,
        }
    }
}

impl From<SampleArg> for SampleType {
    fn from(v: SampleArg) -> Self {
        match v {
            SampleArg::U8 => SampleType::U8,
            SampleArg::U16 => SampleType::U16,
            SampleArg::I16 => SampleType::I16,
            SampleArg::I32 => SampleType::I32,
            SampleArg::F32 => SampleType::F32,
            SampleArg::F64 => SampleType::F64,
        }
    }
}

fn load_config(path: &Path, output_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if output_dir.is_some() {
        cfg.output_dir = output_dir;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, output_dir, seed } => {
            let mut cfg = load_config(&config, output_dir)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (record, _) = train(&cfg)?;
            let e = &record.final_eval;
            println!("oa {:.4}  aa {:.4}  kappa {:.4}  ({:.1}s)", e.oa, e.aa, e.kappa, record.wall_clock_secs);
            if let Some(dir) = &cfg.output_dir {
                println!("outputs in {}", dir.display());
            }
        }
        Cmd::Evaluate { checkpoint, scene, manifest, raw, json } => {
            let report = evaluate(&checkpoint, &scene, &manifest, !raw)?;
            let names = load_scene(&scene, false)?.class_names;
            print!("{}", eval_report_text(&report, &names));
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
        }
        Cmd::Ablate { config, seeds, output_dir } => {
            let cfg = load_config(&config, output_dir)?;
            let rows = ablate(&cfg, &seeds)?;
            print!("{}", ablation_table_text(&rows));
        }
        Cmd::SweepTau { config, taus, seeds, output_dir } => {
            let cfg = load_config(&config, output_dir)?;
            let rows = sweep_temperature(&cfg, &taus, &seeds)?;
            print!("{}", tau_table_text(&rows));
        }
        Cmd::Synth { spec, seed, output_dir } => {
            let mut spec: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate().map_err(|e| CkiError::Config(e.to_string()))?;
            let (src, tgt, map) = synth_cross_scene(&spec)?;
            save_scene(&src, &output_dir.join("source.json"))?;
            save_scene(&tgt, &output_dir.join("target.json"))?;
            write_json(&output_dir.join("shared_classes.json"), &map)?;
            write_json(&output_dir.join("synth_spec.json"), &spec)?;
            println!("wrote source.json and target.json in {}", output_dir.display());
        }
        Cmd::Convert {
            cube,
            labels,
            height,
            width,
            bands,
            interleave,
            dtype,
            label_dtype,
            big_endian,
            class_names,
            scene_id,
            wavelength_min,
            wavelength_max,
            out,
        } => {
            let args = ConvertArgs {
                height,
                width,
                bands,
                interleave: interleave.into(),
                dtype: dtype.into(),
                label_dtype: label_dtype.into(),
                big_endian,
                class_names,
                scene_id: scene_id.unwrap_or_else(|| {
                    out.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string()
                }),
                wavelength_range: wavelength_min.zip(wavelength_max),
            };
            let scene = convert(&cube, &labels, &args)?;
            save_scene(&scene, &out)?;
            println!("{}: {}x{}x{}, {} classes", out.display(), scene.height, scene.width, scene.bands, scene.num_classes());
        }
        Cmd::Split { scene, shots, seed, out } => {
            let s = load_scene(&scene, false)?;
            let m = make_split(&s, shots, seed)?;
            save_manifest(&m, &out)?;
            println!("{} train, {} test coordinates", m.train_len(), m.test_coords.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

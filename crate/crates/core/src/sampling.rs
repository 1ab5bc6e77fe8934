//! Batch generation over corpus scenes with per-sample sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{pnm, Caption, Dataset, StructurePrior};
use crate::diffusion::{sample, to_unit, ScheduleConfig};
use crate::error::{Error, Result};
use crate::params::mix_seed;
use crate::tensor::Tensor;
use crate::training::Model;

pub const SAMPLE_PREFIX: &str = "sample_";

/// Which structure prior conditions generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// The scene's own edge map.
    Edge,
    /// An all-zero edge map.
    Blank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSidecar {
    pub seed: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub caption: String,
    pub caption_tokens: Vec<usize>,
    pub prior: PriorMode,
    /// Edge map file relative to the corpus root; `None` for a blank prior.
    pub prior_path: Option<String>,
    pub scene_index: usize,
    /// Rendered ground truth relative to the corpus root.
    pub reference_image: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    /// File stem, e.g. `sample_00019`.
    pub name: String,
    /// Image in `[0, 1]`.
    pub image: Tensor,
    pub sidecar: SampleSidecar,
}

pub fn sample_name(scene_index: usize) -> String {
    format!("{SAMPLE_PREFIX}{scene_index:05}")
}

/// Per-scene sampling seed.
pub fn sample_seed(seed: u64, scene_index: usize) -> u64 {
    mix_seed(seed, scene_index as u64 ^ 0x5A3D_0000_0000)
}

/// Samples one image per scene in `indices`, conditioned on its caption and
/// the chosen prior.
pub fn generate_samples(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
    schedule: &ScheduleConfig,
    seed: u64,
    prior: PriorMode,
) -> Result<Vec<GeneratedSample>> {
    if model.canvas_size() != data.canvas_size() {
        return Err(Error::Dimension(format!(
            "model expects {}px images, corpus has {}px",
            model.canvas_size(),
            data.canvas_size()
        )));
    }
    let sched = schedule.build()?;
    let s = data.canvas_size();
    indices
        .par_iter()
        .map(|&i| {
            let ex = data
                .examples
                .get(i)
                .ok_or_else(|| Error::Corpus(format!("scene index {i} out of range")))?;
            let record = &data.manifest.records[i];
            let edge = match prior {
                PriorMode::Edge => ex.prior.clone(),
                PriorMode::Blank => StructurePrior::blank(s, s),
            };
            let text = model.text.encode(&ex.caption)?;
            let seed_i = sample_seed(seed, i);
            let x = sample(
                edge.edge_map(),
                text.values(),
                &model.denoiser,
                &sched,
                seed_i,
            )?;
            Ok(GeneratedSample {
                name: sample_name(i),
                image: to_unit(&x),
                sidecar: SampleSidecar {
                    seed: seed_i,
                    timesteps: schedule.timesteps,
                    beta_start: schedule.beta_start,
                    beta_end: schedule.beta_end,
                    caption: ex.caption.raw_text().to_string(),
                    caption_tokens: ex.caption.tokens().to_vec(),
                    prior,
                    prior_path: (prior == PriorMode::Edge).then(|| record.edge_path.clone()),
                    scene_index: i,
                    reference_image: record.image_path.clone(),
                },
            })
        })
        .collect()
}

/// Writes `<name>.ppm` and `<name>.json` for every sample.
pub fn write_samples(samples: &[GeneratedSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        pnm::write(&dir.join(format!("{}.ppm", s.name)), &s.image)?;
        let side = dir.join(format!("{}.json", s.name));
        let text = serde_json::to_string_pretty(&s.sidecar).expect("sidecar serializes") + "\n";
        fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

/// Reads every `*.ppm` in `dir` (sorted by name) with its sidecar.
pub fn read_samples(dir: &Path) -> Result<Vec<GeneratedSample>> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Error::Empty(format!(
            "no generated images in {}",
            dir.display()
        )));
    }
    images
        .into_iter()
        .map(|path| {
            let side = path.with_extension("json");
            if !side.exists() {
                return Err(Error::MissingSidecar(side));
            }
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let sidecar: SampleSidecar =
                serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
            Ok(GeneratedSample {
                name: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                image: pnm::read(&path)?,
                sidecar,
            })
        })
        .collect()
}

impl GeneratedSample {
    pub fn caption(&self) -> Result<Caption> {
        Caption::from_tokens(&self.sidecar.caption_tokens)
    }
}

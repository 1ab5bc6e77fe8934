//! Scores generated samples against their reference scenes.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{clip_scores, feature_stats, frechet_distance, ssim};
use crate::sampling::{read_samples, GeneratedSample};
use crate::training::Model;

pub const REPORT_FILE: &str = "report.json";
pub const ITEMS_FILE: &str = "items.csv";
pub const FEATURE_SPACE: &str = "internal";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub name: String,
    pub scene_index: usize,
    pub clip_score: f64,
    pub ssim: f64,
}

/// Aggregate scores. `fid` is measured in the frozen semantic encoder's
/// feature space, so it is only comparable between runs of this tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clip_score: f64,
    pub fid: f64,
    pub ssim: f64,
    pub n_items: usize,
    pub feature_space: String,
    #[serde(skip)]
    pub items: Vec<ItemMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn items_csv(&self) -> String {
        let mut out = String::from("name,scene_index,clip_score,ssim\n");
        for it in &self.items {
            out.push_str(&format!(
                "{},{},{},{}\n",
                it.name, it.scene_index, it.clip_score, it.ssim
            ));
        }
        out
    }

    /// Writes `report.json` and `items.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            (REPORT_FILE, self.to_json()),
            (ITEMS_FILE, self.items_csv()),
        ] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Caption alignment of each sample with its own caption, SSIM against its
/// scene's rendered image, and the feature distance between the sample set
/// and the set of reference images.
pub fn evaluate_samples(
    samples: &[GeneratedSample],
    data: &Dataset,
    model: &Model,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let mut references = Vec::with_capacity(samples.len());
    for s in samples {
        let ex = data.examples.get(s.sidecar.scene_index).ok_or_else(|| {
            Error::Corpus(format!(
                "{} refers to missing scene {}",
                s.name, s.sidecar.scene_index
            ))
        })?;
        references.push(ex.image.clone());
    }
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let captions = samples
        .iter()
        .map(|s| s.caption())
        .collect::<Result<Vec<_>>>()?;
    let clips = clip_scores(&images, &captions, &model.image, &model.text)?;
    let ssims = images
        .par_iter()
        .zip(&references)
        .map(|(x, r)| ssim(x, r))
        .collect::<Result<Vec<_>>>()?;
    let fid = frechet_distance(
        &feature_stats(&images, &model.semantic)?,
        &feature_stats(&references, &model.semantic)?,
    )?;
    let n = samples.len() as f64;
    let items = samples
        .iter()
        .zip(clips.iter().zip(&ssims))
        .map(|(s, (&c, &q))| ItemMetrics {
            name: s.name.clone(),
            scene_index: s.sidecar.scene_index,
            clip_score: c,
            ssim: q,
        })
        .collect();
    Ok(MetricReport {
        clip_score: clips.iter().sum::<f64>() / n,
        fid,
        ssim: ssims.iter().sum::<f64>() / n,
        n_items: samples.len(),
        feature_space: FEATURE_SPACE.into(),
        items,
    })
}

/// [`evaluate_samples`] over the images and sidecars in `gen_dir`.
pub fn evaluate_dir(gen_dir: &Path, data: &Dataset, model: &Model) -> Result<MetricReport> {
    evaluate_samples(&read_samples(gen_dir)?, data, model)
}

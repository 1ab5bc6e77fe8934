//! Procedurally generated (image, caption, structure prior) corpus.

pub mod caption;
pub mod edge;
pub mod pnm;
pub mod render;
pub mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use caption::{caption_for, caption_with_budget, Caption, Verbosity};
pub use edge::{edge_prior, StructurePrior};
pub use render::render_scene;
pub use scene::{Color, ObjectSpec, Position, SceneSpec, Shape, Size};

use crate::error::{Error, Result};
use crate::params::mix_seed;
use crate::tensor::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub count: usize,
    pub seed: u64,
    pub canvas_size: usize,
    pub verbosity: Verbosity,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            seed: 7,
            canvas_size: 32,
            verbosity: Verbosity::Long,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    /// Every tenth scene is held out: 90% train, 10% eval.
    pub fn for_index(index: usize) -> Self {
        if index % 10 == 9 {
            Split::Eval
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub index: usize,
    pub image_path: String,
    pub edge_path: String,
    pub caption_text: String,
    pub caption_tokens: Vec<usize>,
    pub split: Split,
    pub scene_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub canvas_size: usize,
    pub verbosity: Verbosity,
    pub records: Vec<CorpusRecord>,
}

impl CorpusManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Corpus(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

/// Seed of scene `index` under the global corpus seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    mix_seed(seed, index as u64)
}

/// Renders scene `index` and its manifest record. The image and prior are
/// passed through 8-bit quantization so they equal what a reload returns.
fn build_item(cfg: &CorpusConfig, index: usize) -> Result<(CorpusRecord, Example)> {
    let seed = scene_seed(cfg.seed, index);
    let spec = SceneSpec::random(seed, cfg.canvas_size)?;
    let round = |v: f32| pnm::dequantize(pnm::quantize(v));
    let image = render_scene(&spec).map(round);
    let prior = StructurePrior::new(edge_prior(&image)?.edge_map().map(round))?;
    let caption = caption_for(&spec, cfg.verbosity);
    let record = CorpusRecord {
        index,
        image_path: format!("images/scene_{index:05}.ppm"),
        edge_path: format!("edges/scene_{index:05}.pgm"),
        caption_text: caption.raw_text().to_string(),
        caption_tokens: caption.tokens().to_vec(),
        split: Split::for_index(index),
        scene_seed: seed,
    };
    let example = Example {
        index,
        spec,
        image,
        prior,
        caption,
        split: record.split,
    };
    Ok((record, example))
}

/// Writes `count` scenes (image, edge prior) plus `manifest.json` into
/// `out_dir`. Refuses a non-empty directory unless `overwrite` is set.
pub fn generate_corpus(
    cfg: &CorpusConfig,
    out_dir: &Path,
    overwrite: bool,
) -> Result<CorpusManifest> {
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .map_err(|e| Error::io(out_dir, e))?
            .next()
            .is_some();
        if non_empty {
            if !overwrite {
                return Err(Error::Corpus(format!(
                    "{} is not empty; pass the overwrite flag to replace it",
                    out_dir.display()
                )));
            }
            for sub in ["images", "edges"] {
                let p = out_dir.join(sub);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    for sub in ["images", "edges"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let records = (0..cfg.count)
        .into_par_iter()
        .map(|index| -> Result<CorpusRecord> {
            let (record, example) = build_item(cfg, index)?;
            pnm::write(&out_dir.join(&record.image_path), &example.image)?;
            pnm::write(&out_dir.join(&record.edge_path), example.prior.edge_map())?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        canvas_size: cfg.canvas_size,
        verbosity: cfg.verbosity,
        records,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One corpus item loaded into memory.
#[derive(Clone, Debug)]
pub struct Example {
    pub index: usize,
    pub spec: SceneSpec,
    /// RGB image in `[0, 1]`.
    pub image: ImageTensor,
    pub prior: StructurePrior,
    pub caption: Caption,
    pub split: Split,
}

impl Example {
    /// (shape, color) class of the dominant object.
    pub fn class_index(&self) -> usize {
        self.spec.dominant().class_index()
    }
}

/// A corpus read back from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Loads `dir/manifest.json` and every file it references.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = CorpusManifest::read(&dir.join(MANIFEST_FILE))?;
        let examples = manifest
            .records
            .par_iter()
            .map(|r| -> Result<Example> {
                let image = pnm::read(&dir.join(&r.image_path))?;
                if image.channels() != 3 {
                    return Err(Error::Corpus(format!(
                        "{} is not an RGB image",
                        r.image_path
                    )));
                }
                let prior = StructurePrior::new(pnm::read(&dir.join(&r.edge_path))?)?;
                let spec = SceneSpec::random(r.scene_seed, manifest.canvas_size)?;
                Ok(Example {
                    index: r.index,
                    spec,
                    image,
                    prior,
                    caption: Caption::from_tokens(&r.caption_tokens)?,
                    split: r.split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            examples,
        })
    }

    /// Builds the corpus described by `cfg` in memory, identical to what
    /// [`generate_corpus`] followed by [`Dataset::load`] yields.
    pub fn synthesize(cfg: &CorpusConfig) -> Result<Self> {
        let (records, examples): (Vec<_>, Vec<_>) = (0..cfg.count)
            .into_par_iter()
            .map(|i| build_item(cfg, i))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self {
            root: PathBuf::new(),
            manifest: CorpusManifest {
                version: MANIFEST_VERSION,
                seed: cfg.seed,
                canvas_size: cfg.canvas_size,
                verbosity: cfg.verbosity,
                records,
            },
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn canvas_size(&self) -> usize {
        self.manifest.canvas_size
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len())
            .filter(|&i| self.examples[i].split == split)
            .collect()
    }

    /// Same scenes, captions regenerated as long-form text of at most
    /// `max_tokens` tokens.
    pub fn with_caption_budget(&self, max_tokens: usize) -> Result<Self> {
        let mut out = self.clone();
        for ex in &mut out.examples {
            ex.caption = caption_with_budget(&ex.spec, max_tokens)?;
        }
        Ok(out)
    }
}

//! The end-to-end workflow over a working directory: corpus generation,
//! semantic pretraining, training, sampling, evaluation and ablations.
//!
//! Layout under the working directory:
//! `corpus/`, `semantic.ckpt`, `train/`, `samples/`, `eval/`, `ablation/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ablation::{rows_to_csv, run_ablation, AblationAxis, AblationRow, AblationSpec};
use crate::checkpoint::{Container, ParamGroup};
use crate::corpus::{generate_corpus, CorpusConfig, CorpusManifest, Dataset, Split};
use crate::encoders::{pretrain_semantic_encoder, PretrainConfig, PretrainReport, SemanticEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_dir, MetricReport};
use crate::sampling::{generate_samples, write_samples, GeneratedSample, PriorMode};
use crate::training::{self, TrainConfig, TrainOutcome, TrainState, MODEL_FILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub seed: u64,
    pub prior: PriorMode,
    pub split: Split,
    /// Sample only the first `limit` scenes of the split.
    pub limit: Option<usize>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            prior: PriorMode::Edge,
            split: Split::Eval,
            limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub axis: AblationAxis,
    /// Defaults to the axis' standard range.
    pub values: Option<Vec<f64>>,
    pub seed: u64,
    pub step_fraction: f64,
    pub eval_items: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            axis: AblationAxis::StructWeight,
            values: None,
            seed: 3,
            step_fraction: 0.25,
            eval_items: 32,
        }
    }
}

/// Every stage's settings in one JSON document; unknown fields are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub ablation: AblationConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn ablation_spec(&self, axis: AblationAxis) -> AblationSpec {
        let values = match &self.ablation.values {
            Some(v) if axis == self.ablation.axis => v.clone(),
            _ => axis.default_values(),
        };
        AblationSpec {
            axis,
            values,
            base: self.train.clone(),
            seed: self.ablation.seed,
            step_fraction: self.ablation.step_fraction,
            eval_items: self.ablation.eval_items,
        }
    }
}

/// Paths of one working directory.
#[derive(Clone, Debug)]
pub struct Workdir {
    pub root: PathBuf,
}

pub const SEMANTIC_KIND: &str = "semantic";

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn semantic(&self) -> PathBuf {
        self.root.join("semantic.ckpt")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn model(&self) -> PathBuf {
        self.train().join(MODEL_FILE)
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn ablation(&self, axis: AblationAxis) -> PathBuf {
        self.root
            .join("ablation")
            .join(format!("{}.csv", axis.name()))
    }
}

pub fn run_dataset(cfg: &PipelineConfig, out: &Path, overwrite: bool) -> Result<CorpusManifest> {
    generate_corpus(&cfg.corpus, out, overwrite)
}

pub fn save_semantic(
    encoder: &SemanticEncoder,
    report: Option<&PretrainReport>,
    path: &Path,
) -> Result<()> {
    Container {
        meta: json!({
            "kind": SEMANTIC_KIND,
            "config": encoder.config(),
            "report": report,
        }),
        groups: vec![ParamGroup {
            name: training::model::GROUP_SEMANTIC.into(),
            params: encoder.params().clone(),
        }],
    }
    .write(path)
}

pub fn load_semantic(path: &Path) -> Result<SemanticEncoder> {
    let c = Container::read(path)?;
    if c.meta["kind"] != SEMANTIC_KIND {
        return Err(Error::Format(format!(
            "{} is not a semantic encoder checkpoint",
            path.display()
        )));
    }
    let config = serde_json::from_value(c.meta["config"].clone())
        .map_err(|e| Error::Format(format!("semantic encoder config: {e}")))?;
    let enc = SemanticEncoder::from_params(
        config,
        c.group(training::model::GROUP_SEMANTIC)?.params.clone(),
    )?;
    if !enc.is_frozen() {
        return Err(Error::Format(
            "semantic encoder checkpoint is not frozen".into(),
        ));
    }
    Ok(enc)
}

pub fn run_pretrain(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<PretrainReport> {
    let data = Dataset::load(corpus)?;
    let (encoder, report) = pretrain_semantic_encoder(&data, &cfg.pretrain)?;
    save_semantic(&encoder, Some(&report), out)?;
    Ok(report)
}

/// Trains from scratch, or continues the checkpoint `resume` up to
/// `cfg.train.steps`.
pub fn run_train(
    cfg: &PipelineConfig,
    corpus: &Path,
    semantic: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let data = Dataset::load(corpus)?;
    let state = match resume {
        Some(path) => {
            let (state, saved) = TrainState::load(path)?;
            let mut expected = saved.clone();
            expected.steps = cfg.train.steps;
            expected.checkpoint_interval = cfg.train.checkpoint_interval;
            if expected != cfg.train {
                return Err(Error::Config(
                    "resumed training must use the configuration of the checkpoint (steps and checkpoint_interval may differ)"
                        .into(),
                ));
            }
            state
        }
        None => TrainState::init(&cfg.train, &data, load_semantic(semantic)?)?,
    };
    training::train(&data, state, &cfg.train, Some(out))
}

pub fn load_model(path: &Path) -> Result<training::Model> {
    Ok(TrainState::load(path)?.0.model)
}

pub fn run_sample(
    cfg: &PipelineConfig,
    corpus: &Path,
    model: &Path,
    out: &Path,
) -> Result<Vec<GeneratedSample>> {
    let data = Dataset::load(corpus)?;
    let (state, train_cfg) = TrainState::load(model)?;
    let mut indices = data.indices(cfg.sample.split);
    if let Some(limit) = cfg.sample.limit {
        indices.truncate(limit);
    }
    let samples = generate_samples(
        &state.model,
        &data,
        &indices,
        &train_cfg.schedule,
        cfg.sample.seed,
        cfg.sample.prior,
    )?;
    write_samples(&samples, out)?;
    Ok(samples)
}

pub fn run_eval(corpus: &Path, model: &Path, gen_dir: &Path, out: &Path) -> Result<MetricReport> {
    let data = Dataset::load(corpus)?;
    let model = load_model(model)?;
    let report = evaluate_dir(gen_dir, &data, &model)?;
    report.write(out)?;
    Ok(report)
}

pub fn run_ablate(
    cfg: &PipelineConfig,
    axis: AblationAxis,
    corpus: &Path,
    semantic: &Path,
    out: &Path,
) -> Result<Vec<AblationRow>> {
    let data = Dataset::load(corpus)?;
    let semantic = load_semantic(semantic)?;
    let rows = run_ablation(&cfg.ablation_spec(axis), &data, &semantic)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out, rows_to_csv(&rows)).map_err(|e| Error::io(out, e))?;
    Ok(rows)
}

//! One-axis sensitivity sweeps: train a reduced-budget model per value and
//! score it on held-out scenes.

use serde::{Deserialize, Serialize};

use crate::corpus::caption::{MAX_TOKENS, MIN_TOKENS};
use crate::corpus::{Dataset, Split};
use crate::encoders::SemanticEncoder;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_samples;
use crate::sampling::{generate_samples, PriorMode};
use crate::training::{train, TrainConfig, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Shared text/image embedding dimension.
    EmbedDim,
    /// Token budget of the long-form captions.
    CaptionLen,
    /// Weight of the structure-preservation term.
    StructWeight,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::EmbedDim => "embed_dim",
            AblationAxis::CaptionLen => "caption_len",
            AblationAxis::StructWeight => "struct_weight",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            AblationAxis::EmbedDim => vec![8.0, 16.0, 32.0, 64.0, 128.0],
            AblationAxis::CaptionLen => vec![3.0, 6.0, 10.0, 14.0],
            AblationAxis::StructWeight => vec![0.0, 0.25, 0.5, 1.0, 2.0],
        }
    }

    fn check_value(self, v: f64) -> Result<()> {
        let integral = v.fract() == 0.0 && v.is_finite();
        let ok = match self {
            AblationAxis::EmbedDim => integral && v >= 1.0,
            AblationAxis::CaptionLen => {
                integral && (MIN_TOKENS as f64..=MAX_TOKENS as f64).contains(&v)
            }
            AblationAxis::StructWeight => v >= 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(Error::Config(format!("invalid {} value {v}", self.name())));
        }
        Ok(())
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            AblationAxis::EmbedDim,
            AblationAxis::CaptionLen,
            AblationAxis::StructWeight,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub values: Vec<f64>,
    pub base: TrainConfig,
    pub seed: u64,
    /// Fraction of `base.steps` each cell trains for.
    pub step_fraction: f64,
    /// Number of held-out scenes sampled and scored per cell.
    pub eval_items: usize,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::Config("an ablation needs at least 2 values".into()));
        }
        for &v in &self.values {
            self.axis.check_value(v)?;
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "step_fraction must be in (0, 1], got {}",
                self.step_fraction
            )));
        }
        if self.eval_items < 2 {
            return Err(Error::Config("eval_items must be at least 2".into()));
        }
        self.base.validate()
    }

    /// Training configuration of the cell for `value`.
    pub fn cell_config(&self, value: f64) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.seed = self.seed;
        cfg.steps = ((self.base.steps as f64 * self.step_fraction).ceil() as usize).max(1);
        cfg.checkpoint_interval = 0;
        match self.axis {
            AblationAxis::EmbedDim => cfg.embed_dim = value as usize,
            AblationAxis::StructWeight => cfg.weights.lambda2 = value,
            AblationAxis::CaptionLen => {}
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis_value: f64,
    pub clip_score: f64,
    pub fid: f64,
    pub ssim: f64,
    /// Means over the last tenth of the cell's steps.
    pub final_l_total: f64,
    pub final_l_struct: f64,
    pub error: Option<String>,
}

pub const ABLATION_CSV_HEADER: &str =
    "axis_value,clip_score,fid,ssim,final_l_total,final_l_struct,error";

pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.axis_value, r.clip_score, r.fid, r.ssim, r.final_l_total, r.final_l_struct, err
        ));
    }
    out
}

fn run_cell(
    spec: &AblationSpec,
    value: f64,
    data: &Dataset,
    semantic: &SemanticEncoder,
) -> Result<AblationRow> {
    let cfg = spec.cell_config(value);
    let budgeted;
    let data = if spec.axis == AblationAxis::CaptionLen {
        budgeted = data.with_caption_budget(value as usize)?;
        &budgeted
    } else {
        data
    };
    let state = TrainState::init(&cfg, data, semantic.clone())?;
    let outcome = train(data, state, &cfg, None)?;
    let tail = (outcome.log.len() / 10).max(1);
    let last = &outcome.log[outcome.log.len() - tail..];
    let mean = |f: fn(&crate::objectives::LossReport) -> f64| {
        last.iter().map(|(_, r)| f(r)).sum::<f64>() / tail as f64
    };

    let held: Vec<usize> = data
        .indices(Split::Eval)
        .into_iter()
        .take(spec.eval_items)
        .collect();
    let samples = generate_samples(
        &outcome.state.model,
        data,
        &held,
        &cfg.schedule,
        spec.seed,
        PriorMode::Edge,
    )?;
    let report = evaluate_samples(&samples, data, &outcome.state.model)?;
    Ok(AblationRow {
        axis_value: value,
        clip_score: report.clip_score,
        fid: report.fid,
        ssim: report.ssim,
        final_l_total: mean(|r| r.l_total),
        final_l_struct: mean(|r| r.l_struct),
        error: None,
    })
}

/// One row per value, in request order. A failing cell becomes a row with
/// NaN metrics and the error message; the sweep continues.
pub fn run_ablation(
    spec: &AblationSpec,
    data: &Dataset,
    semantic: &SemanticEncoder,
) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    Ok(spec
        .values
        .iter()
        .map(|&v| {
            run_cell(spec, v, data, semantic).unwrap_or_else(|e| AblationRow {
                axis_value: v,
                clip_score: f64::NAN,
                fid: f64::NAN,
                ssim: f64::NAN,
                final_l_total: f64::NAN,
                final_l_struct: f64::NAN,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::TrainConfig;
use crate::checkpoint::{Container, ParamGroup};
use crate::diffusion::{Denoiser, DenoiserConfig};
use crate::encoders::{
    ImageEncoder, ImageEncoderConfig, SemanticEncoder, SemanticEncoderConfig, TextEncoder,
    TextEncoderConfig,
};
use crate::error::{Error, Result};
use crate::params::{mix_seed, ParamSet};
use crate::tensor::Scalar;

/// Architecture of every network in a [`Model`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub text: TextEncoderConfig,
    pub image: ImageEncoderConfig,
    pub denoiser: DenoiserConfig,
    pub semantic: SemanticEncoderConfig,
}

impl Architecture {
    pub fn new(cfg: &TrainConfig, canvas_size: usize, semantic: SemanticEncoderConfig) -> Self {
        Self {
            text: TextEncoderConfig::new(cfg.embed_dim),
            image: ImageEncoderConfig {
                canvas_size,
                channels: cfg.image_channels,
                embed_dim: cfg.embed_dim,
            },
            denoiser: DenoiserConfig {
                canvas_size,
                hidden_channels: cfg.hidden_channels,
                time_dim: cfg.time_dim,
                text_dim: cfg.embed_dim,
            },
            semantic,
        }
    }
}

/// Trainable text encoder, image encoder and denoiser plus the frozen
/// semantic encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub text: TextEncoder<T>,
    pub image: ImageEncoder<T>,
    pub denoiser: Denoiser<T>,
    pub semantic: SemanticEncoder<T>,
}

pub const GROUP_TEXT: &str = "text_encoder";
pub const GROUP_IMAGE: &str = "image_encoder";
pub const GROUP_DENOISER: &str = "denoiser";
pub const GROUP_SEMANTIC: &str = "semantic_encoder";

impl<T: Scalar> Model<T> {
    /// Fresh trainable networks seeded from `seed`, around a frozen
    /// semantic encoder.
    pub fn init(
        cfg: &TrainConfig,
        canvas_size: usize,
        semantic: SemanticEncoder<T>,
        seed: u64,
    ) -> Result<Self> {
        if !semantic.is_frozen() {
            return Err(Error::Frozen(
                "training requires a frozen semantic encoder".into(),
            ));
        }
        if semantic.config().canvas_size != canvas_size {
            return Err(Error::Dimension(format!(
                "semantic encoder expects {}px images, corpus has {canvas_size}px",
                semantic.config().canvas_size
            )));
        }
        let arch = Architecture::new(cfg, canvas_size, *semantic.config());
        Ok(Self {
            text: TextEncoder::new(arch.text, mix_seed(seed, 1)),
            image: ImageEncoder::new(arch.image, mix_seed(seed, 2)),
            denoiser: Denoiser::new(arch.denoiser, mix_seed(seed, 3)),
            semantic,
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            text: self.text.config,
            image: self.image.config,
            denoiser: self.denoiser.config,
            semantic: *self.semantic.config(),
        }
    }

    pub fn canvas_size(&self) -> usize {
        self.denoiser.config.canvas_size
    }

    pub fn num_trainable(&self) -> usize {
        self.text.params.num_scalars()
            + self.image.params.num_scalars()
            + self.denoiser.params.num_scalars()
    }

    pub fn is_finite(&self) -> bool {
        self.text.params.is_finite()
            && self.image.params.is_finite()
            && self.denoiser.params.is_finite()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            text: TextEncoder {
                config: self.text.config,
                params: self.text.params.cast(),
            },
            image: ImageEncoder {
                config: self.image.config,
                params: self.image.params.cast(),
            },
            denoiser: Denoiser {
                config: self.denoiser.config,
                params: self.denoiser.params.cast(),
            },
            semantic: self.semantic.cast(),
        }
    }
}

impl Model<f32> {
    /// Packs the parameters with `meta` (which gains an `architecture` key).
    pub fn to_container(&self, mut meta: Value) -> Container {
        meta["architecture"] = json!(self.architecture());
        let group = |name: &str, params: &ParamSet| ParamGroup {
            name: name.into(),
            params: params.clone(),
        };
        Container {
            meta,
            groups: vec![
                group(GROUP_TEXT, &self.text.params),
                group(GROUP_IMAGE, &self.image.params),
                group(GROUP_DENOISER, &self.denoiser.params),
                group(GROUP_SEMANTIC, self.semantic.params()),
            ],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(c.meta["architecture"].clone())
            .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
        let semantic =
            SemanticEncoder::from_params(arch.semantic, c.group(GROUP_SEMANTIC)?.params.clone())?;
        if !semantic.is_frozen() {
            return Err(Error::Format(
                "semantic encoder in checkpoint is not frozen".into(),
            ));
        }
        Ok(Self {
            text: TextEncoder::from_params(arch.text, c.group(GROUP_TEXT)?.params.clone())?,
            image: ImageEncoder::from_params(arch.image, c.group(GROUP_IMAGE)?.params.clone())?,
            denoiser: Denoiser::from_params(
                arch.denoiser,
                c.group(GROUP_DENOISER)?.params.clone(),
            )?,
            semantic,
        })
    }
}

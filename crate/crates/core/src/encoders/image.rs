use serde::{Deserialize, Serialize};

use super::{check_image, conv_trunk, trunk_params, trunk_side, EmbeddingVector};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Initializer, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Two stride-2 convolutions followed by a two-layer MLP head.
/// Inputs are `[3, canvas, canvas]` images with values in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub canvas_size: usize,
    pub channels: [usize; 2],
    pub embed_dim: usize,
}

impl ImageEncoderConfig {
    pub fn new(canvas_size: usize, embed_dim: usize) -> Self {
        Self {
            canvas_size,
            channels: [8, 16],
            embed_dim,
        }
    }

    fn flat_dim(&self) -> usize {
        let side = trunk_side(self.canvas_size);
        self.channels[1] * side * side
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let d = self.embed_dim;
        let mut init = Initializer::new(seed);
        let mut entries = trunk_params(&mut init, self.channels);
        entries.push(("fc1.weight".into(), init.linear(d, self.flat_dim())));
        entries.push(("fc1.bias".into(), Tensor::zeros(&[d])));
        entries.push(("fc2.weight".into(), init.linear(d, d)));
        entries.push(("fc2.bias".into(), Tensor::zeros(&[d])));
        ParamSet::new(entries)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], image: Var) -> Result<Var> {
        let h = conv_trunk(tape, &p[..4], image)?;
        let h = tape.linear(h, p[4], p[5])?;
        let h = tape.silu(h);
        tape.linear(h, p[6], p[7])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder<T = f32> {
    pub config: ImageEncoderConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> ImageEncoder<T> {
    pub fn new(config: ImageEncoderConfig, seed: u64) -> Self {
        Self {
            params: config.init(seed),
            config,
        }
    }

    pub fn from_params(config: ImageEncoderConfig, params: ParamSet<T>) -> Result<Self> {
        if config.init::<T>(0).specs() != params.specs() {
            return Err(Error::Dimension(
                "image encoder parameters do not match config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn encode(&self, image: &Tensor<T>) -> Result<EmbeddingVector<T>> {
        check_image(image, self.config.canvas_size)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let out = self.config.forward(&mut tape, &p, x)?;
        EmbeddingVector::new(tape.value(out).data().to_vec())
    }
}

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Initializer, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Noise predictor: `[x_t ‖ s]` through three 3×3 convolutions, with the
/// projected timestep and text embeddings added per channel after the
/// first one. The last convolution starts at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub canvas_size: usize,
    pub hidden_channels: usize,
    pub time_dim: usize,
    pub text_dim: usize,
}

pub const IMAGE_CHANNELS: usize = 3;
pub const PRIOR_CHANNELS: usize = 1;

impl DenoiserConfig {
    pub fn new(canvas_size: usize, text_dim: usize) -> Self {
        Self {
            canvas_size,
            hidden_channels: 16,
            time_dim: 16,
            text_dim,
        }
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let c = self.hidden_channels;
        let mut init = Initializer::new(seed);
        ParamSet::new(vec![
            (
                "conv1.weight".into(),
                init.conv(c, IMAGE_CHANNELS + PRIOR_CHANNELS, 3),
            ),
            ("conv1.bias".into(), Tensor::zeros(&[c])),
            ("time.weight".into(), init.linear(c, self.time_dim)),
            ("text.weight".into(), init.linear(c, self.text_dim)),
            ("cond.bias".into(), Tensor::zeros(&[c])),
            ("conv2.weight".into(), init.conv(c, c, 3)),
            ("conv2.bias".into(), Tensor::zeros(&[c])),
            (
                "conv3.weight".into(),
                Tensor::zeros(&[IMAGE_CHANNELS, c, 3, 3]),
            ),
            ("conv3.bias".into(), Tensor::zeros(&[IMAGE_CHANNELS])),
        ])
    }

    /// Records `ε_θ(x_t, t, s, text)`; `x_t: [3, S, S]`, `prior: [1, S, S]`,
    /// `text: [text_dim]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x_t: Var,
        t: usize,
        prior: Var,
        text: Var,
    ) -> Result<Var> {
        let s = self.canvas_size;
        if tape.shape(x_t) != [IMAGE_CHANNELS, s, s]
            || tape.shape(prior) != [PRIOR_CHANNELS, s, s]
            || tape.shape(text) != [self.text_dim]
        {
            return Err(Error::Dimension(format!(
                "denoiser expects x_t [3, {s}, {s}], prior [1, {s}, {s}], text [{}]; got {:?}, {:?}, {:?}",
                self.text_dim,
                tape.shape(x_t),
                tape.shape(prior),
                tape.shape(text)
            )));
        }
        let h = tape.concat_channels(x_t, prior)?;
        let h = tape.conv2d(h, p[0], p[1], 1, 1)?;
        let temb = tape.constant(timestep_embedding(t, self.time_dim));
        let time = tape.linear(temb, p[2], p[4])?;
        let zero = tape.constant(Tensor::zeros(&[self.hidden_channels]));
        let txt = tape.linear(text, p[3], zero)?;
        let cond = tape.add(time, txt)?;
        let h = tape.add_channel(h, cond)?;
        let h = tape.silu(h);
        let h = tape.conv2d(h, p[5], p[6], 1, 1)?;
        let h = tape.silu(h);
        tape.conv2d(h, p[7], p[8], 1, 1)
    }
}

/// Sinusoidal embedding `[sin(t·ω_i), cos(t·ω_i)]`, `ω_i = 10000^(−2i/dim)`.
pub fn timestep_embedding<T: Scalar>(t: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut v = vec![T::zero(); dim];
    for i in 0..half {
        let w = (10000f64).powf(-(2.0 * i as f64) / dim as f64);
        let a = t as f64 * w;
        v[i] = T::lit(a.sin());
        v[half + i] = T::lit(a.cos());
    }
    Tensor::new(vec![dim], v).expect("embedding length")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser<T = f32> {
    pub config: DenoiserConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Denoiser<T> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Self {
        Self {
            params: config.init(seed),
            config,
        }
    }

    pub fn from_params(config: DenoiserConfig, params: ParamSet<T>) -> Result<Self> {
        if config.init::<T>(0).specs() != params.specs() {
            return Err(Error::Dimension(
                "denoiser parameters do not match config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    /// Noise prediction for one image.
    pub fn denoise(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        prior: &Tensor<T>,
        text: &[T],
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(x_t.clone());
        let s = tape.constant(prior.clone());
        let e = tape.constant(Tensor::new(vec![text.len()], text.to_vec())?);
        let out = self.config.forward(&mut tape, &p, x, t, s, e)?;
        Ok(tape.value(out).clone())
    }
}

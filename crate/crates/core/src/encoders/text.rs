use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::autograd::{Tape, Var};
use crate::corpus::caption::VOCAB_SIZE;
use crate::corpus::Caption;
use crate::error::{Error, Result};
use crate::params::{Initializer, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Token embedding table, mean pooling over all positions, then a
/// two-layer MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
}

impl TextEncoderConfig {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            embed_dim,
        }
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let (v, d) = (self.vocab_size, self.embed_dim);
        let mut init = Initializer::new(seed);
        ParamSet::new(vec![
            ("embedding".into(), init.glorot(&[v, d], v, d)),
            ("fc1.weight".into(), init.linear(d, d)),
            ("fc1.bias".into(), Tensor::zeros(&[d])),
            ("fc2.weight".into(), init.linear(d, d)),
            ("fc2.bias".into(), Tensor::zeros(&[d])),
        ])
    }

    /// Records the encoder on `tape`; `p` are the bound parameters.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        tokens: &[usize],
    ) -> Result<Var> {
        let pooled = tape.embed_mean(p[0], tokens)?;
        let h = tape.linear(pooled, p[1], p[2])?;
        let h = tape.silu(h);
        tape.linear(h, p[3], p[4])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder<T = f32> {
    pub config: TextEncoderConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> TextEncoder<T> {
    pub fn new(config: TextEncoderConfig, seed: u64) -> Self {
        Self {
            params: config.init(seed),
            config,
        }
    }

    pub fn from_params(config: TextEncoderConfig, params: ParamSet<T>) -> Result<Self> {
        let expected = config.init::<T>(0);
        if expected.specs() != params.specs() {
            return Err(Error::Dimension(
                "text encoder parameters do not match config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    /// Embeds the token ids (padding included).
    pub fn encode_tokens(&self, tokens: &[usize]) -> Result<EmbeddingVector<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.config.forward(&mut tape, &p, tokens)?;
        EmbeddingVector::new(tape.value(out).data().to_vec())
    }

    pub fn encode(&self, caption: &Caption) -> Result<EmbeddingVector<T>> {
        self.encode_tokens(caption.tokens())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::caption::{MAX_TOKENS, PAD};
    use crate::gradcheck::{check_params, GradcheckOptions};

    #[test]
    fn all_pad_caption_embeds_finitely() {
        let enc = TextEncoder::<f32>::new(TextEncoderConfig::new(8), 1);
        let e = enc.encode_tokens(&[PAD; MAX_TOKENS]).unwrap();
        assert_eq!(e.dim(), 8);
        assert!(e.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_captions_embed_identically() {
        let enc = TextEncoder::<f32>::new(TextEncoderConfig::new(8), 1);
        let c = Caption::from_words(&["red", "circle"]).unwrap();
        assert_eq!(enc.encode(&c).unwrap(), enc.encode(&c.clone()).unwrap());
    }

    #[test]
    fn out_of_range_token_is_reported() {
        let enc = TextEncoder::<f32>::new(TextEncoderConfig::new(4), 1);
        let err = enc.encode_tokens(&[1, 2, VOCAB_SIZE + 3]).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { id, .. } if id == VOCAB_SIZE + 3));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = TextEncoderConfig::new(6);
        let mut params = cfg.init::<f64>(5);
        // Non-zero biases so every parameter is exercised.
        for t in params.tensors_mut().unwrap() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.05 * ((i as f64) * 0.7).sin();
            }
        }
        let tokens = [4, 8, 11, 13, 1, 0, 0, 0];
        let cot: Vec<f64> = (0..6).map(|i| (i as f64 * 1.3).cos()).collect();
        let err = check_params(&params, GradcheckOptions::default(), |tape, p| {
            let y = cfg.forward(tape, p, &tokens)?;
            let c = tape.constant(Tensor::new(vec![6], cot.clone())?);
            tape.dot(y, c)
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}

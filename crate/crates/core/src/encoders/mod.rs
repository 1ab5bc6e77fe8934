//! Feature extractors: the text encoder (`t`), the image encoder (`v`), the
//! parameter-free structure features `φ`, and the frozen semantic encoder `f`.

pub mod image;
pub mod semantic;
pub mod structure;
pub mod text;

pub use image::{ImageEncoder, ImageEncoderConfig};
pub use semantic::{
    pretrain_semantic_encoder, PretrainConfig, PretrainReport, SemanticEncoder,
    SemanticEncoderConfig,
};
pub use structure::{structure_features, structure_features_graph, FeatureStack, STRUCTURE_EPS};
pub use text::{TextEncoder, TextEncoderConfig};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::Initializer;
use crate::tensor::{Scalar, Tensor};

/// Fixed-dimension real vector: text embeddings, image encodings and
/// semantic features.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T = f32>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: "embedding".into(),
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self(self.0.iter().map(|&v| v * factor).collect())
    }
}

/// Output size of the two stride-2 trunk convolutions.
pub(crate) fn trunk_side(canvas: usize) -> usize {
    canvas / 4
}

/// Two stride-2 3×3 convolutions with SiLU, flattened. Consumes four
/// parameters: conv1 weight/bias, conv2 weight/bias.
pub(crate) fn conv_trunk<T: Scalar>(tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
    let h = tape.conv2d(x, p[0], p[1], 2, 1)?;
    let h = tape.silu(h);
    let h = tape.conv2d(h, p[2], p[3], 2, 1)?;
    Ok(tape.silu(h))
}

pub(crate) fn trunk_params<T: Scalar>(
    init: &mut Initializer,
    channels: [usize; 2],
) -> Vec<(String, Tensor<T>)> {
    let [c1, c2] = channels;
    vec![
        ("conv1.weight".into(), init.conv(c1, 3, 3)),
        ("conv1.bias".into(), Tensor::zeros(&[c1])),
        ("conv2.weight".into(), init.conv(c2, c1, 3)),
        ("conv2.bias".into(), Tensor::zeros(&[c2])),
    ]
}

/// Checks an encoder input is a `[3, canvas, canvas]` image.
pub(crate) fn check_image<T: Scalar>(image: &Tensor<T>, canvas: usize) -> Result<()> {
    image.ensure_shape(&[3, canvas, canvas])
}

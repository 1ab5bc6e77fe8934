//! Parameter-free structure features: a three-level pyramid of Sobel
//! gradient magnitudes of the image luminance.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Smoothing constant of the gradient magnitude `sqrt(gx² + gy² + ε²) − ε`.
/// Keeps the magnitude differentiable where both gradients vanish.
pub const STRUCTURE_EPS: f64 = 1e-3;

/// Flat concatenation of the full, half and quarter resolution levels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack<T = f32> {
    values: Vec<T>,
    height: usize,
    width: usize,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The `level`-th pyramid level (0 = full resolution) as `[h, w]` data.
    pub fn level(&self, level: usize) -> &[T] {
        let mut start = 0;
        for l in 0..level {
            start += (self.height >> l) * (self.width >> l);
        }
        let n = (self.height >> level) * (self.width >> level);
        &self.values[start..start + n]
    }
}

/// Records `φ(x)` on the tape for a 1- or 3-channel image whose sides are
/// multiples of four.
pub fn structure_features_graph<T: Scalar>(tape: &mut Tape<T>, image: Var) -> Result<Var> {
    let shape = tape.shape(image).to_vec();
    if shape.len() != 3
        || !shape[1].is_multiple_of(4)
        || !shape[2].is_multiple_of(4)
        || shape[1] == 0
    {
        return Err(Error::Dimension(format!(
            "structure features need [1|3, h, w] with h, w multiples of 4, got {shape:?}"
        )));
    }
    let luma = tape.luminance(image)?;
    let full = tape.sobel_magnitude(luma, T::lit(STRUCTURE_EPS))?;
    let half = tape.avg_pool2(full)?;
    let quarter = tape.avg_pool2(half)?;
    Ok(tape.concat(&[full, half, quarter]))
}

pub fn structure_features<T: Scalar>(image: &Tensor<T>) -> Result<FeatureStack<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(image.clone());
    let out = structure_features_graph(&mut tape, x)?;
    Ok(FeatureStack {
        values: tape.value(out).data().to_vec(),
        height: image.height(),
        width: image.width(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input, GradcheckOptions};

    #[test]
    fn constant_image_has_zero_features() {
        let f = structure_features(&Tensor::<f64>::full(&[3, 8, 8], 0.37)).unwrap();
        assert_eq!(f.len(), 64 + 16 + 4);
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_sizes_are_rejected() {
        assert!(structure_features(&Tensor::<f32>::zeros(&[1, 6, 6])).is_err());
    }

    #[test]
    fn l1_norm_input_gradient_matches_finite_differences() {
        let x = Tensor::from_fn(&[3, 8, 8], |i| ((i * 7 % 11) as f64) / 11.0);
        let err = check_input(&x, GradcheckOptions::default(), |t, v| {
            let f = structure_features_graph(t, v)?;
            let a = t.abs(f);
            Ok(t.sum(a))
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}

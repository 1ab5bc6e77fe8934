use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{ImageTensor, Scalar, Tensor};

/// Single-channel edge map `s` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructurePrior {
    edge_map: ImageTensor,
}

impl StructurePrior {
    /// Wraps a `[1, h, w]` map, clamping values into `[0, 1]`.
    pub fn new(edge_map: ImageTensor) -> Result<Self> {
        if !edge_map.is_image() || edge_map.channels() != 1 {
            return Err(Error::Dimension(format!(
                "structure prior must be [1, h, w], got {:?}",
                edge_map.shape()
            )));
        }
        if !edge_map.is_finite() {
            return Err(Error::Dimension(
                "structure prior contains non-finite values".into(),
            ));
        }
        Ok(Self {
            edge_map: edge_map.map(|v| v.clamp(0.0, 1.0)),
        })
    }

    /// The all-zero ("blank") prior.
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            edge_map: Tensor::zeros(&[1, height, width]),
        }
    }

    pub fn edge_map(&self) -> &ImageTensor {
        &self.edge_map
    }

    pub fn height(&self) -> usize {
        self.edge_map.height()
    }

    pub fn width(&self) -> usize {
        self.edge_map.width()
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        self.edge_map.cast()
    }
}

/// Sobel gradient magnitude of the luminance channel, scaled so its
/// maximum is 1 (all zero for a constant image).
pub fn edge_prior(image: &ImageTensor) -> Result<StructurePrior> {
    if !image.is_image() || !(image.channels() == 3 || image.channels() == 1) {
        return Err(Error::Dimension(format!(
            "edge_prior needs a 1- or 3-channel image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.height(), image.width());
    let lum = kernels::luminance(&image.cast::<f64>());
    let (gx, gy) = kernels::sobel(lum.data(), h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let max = mag.iter().copied().fold(0.0, f64::max);
    let scaled = if max > 0.0 {
        mag.iter().map(|m| (m / max) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    StructurePrior::new(Tensor::new(vec![1, h, w], scaled)?)
}

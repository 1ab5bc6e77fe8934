//! Evaluation metrics: windowed SSIM, a Fréchet distance between Gaussian
//! fits of semantic features, and a caption-alignment score in the learned
//! embedding space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::corpus::Caption;
use crate::encoders::{ImageEncoder, SemanticEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::kernels::luminance;
use crate::objectives::cosine_sim;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Eigenvalues down to this are treated as rounding and clamped to zero.
pub const EIGEN_TOLERANCE: f64 = -1e-8;

/// Mean SSIM over all 8×8 windows (stride 1) of the luminance planes of
/// two images with values in `[0, 1]`.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let la = luminance(&a.cast::<f64>());
    let lb = luminance(&b.cast::<f64>());
    let (h, w) = (la.height(), la.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let (pa, pb) = (la.data(), lb.data());
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let (u, v) = (pa[y * w + x], pb[y * w + x]);
                    sa += u;
                    sb += v;
                    saa += u * u;
                    sbb += v * v;
                    sab += u * v;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Gaussian fit of a feature sample: mean and unbiased covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Empty(format!(
                "feature statistics need at least 2 samples, got {}",
                features.len()
            )));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Dimension("feature vectors differ in length".into()));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![0.0; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1.0);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(Self {
            mean,
            cov,
            count: features.len(),
        })
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Eigen-decomposition of a symmetric matrix with rounding-level negative
/// eigenvalues clamped to zero.
fn psd_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for v in eig.eigenvalues.iter_mut() {
        if *v < EIGEN_TOLERANCE {
            return Err(Error::NotPsd(*v));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn sqrt_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m)?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// `‖μp − μq‖² + Tr(Σp + Σq − 2(Σp^½ Σq Σp^½)^½)`.
pub fn frechet_distance(p: &FeatureStats, q: &FeatureStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "feature dimensions differ: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let mp = DVector::from_column_slice(&p.mean);
    let mq = DVector::from_column_slice(&q.mean);
    let (sp, sq) = (p.matrix(), q.matrix());
    let root_p = sqrt_psd(sp.clone())?;
    let inner = &root_p * &sq * &root_p;
    let cross: f64 = psd_eigen(inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let d = (mp - mq).norm_squared() + sp.trace() + sq.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Semantic-feature statistics of a set of `[0, 1]` images.
pub fn feature_stats(images: &[Tensor], semantic: &SemanticEncoder) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::Empty(format!(
            "feature statistics need at least 2 images, got {}",
            images.len()
        )));
    }
    let features = images
        .iter()
        .map(|x| {
            Ok(semantic
                .features(x)?
                .values()
                .iter()
                .map(|&v| v as f64)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    FeatureStats::from_features(&features)
}

/// Mean cosine similarity of paired embeddings.
pub fn clip_score_from_embeddings(v: &[Vec<f32>], t: &[Vec<f32>]) -> Result<f64> {
    if v.len() != t.len() {
        return Err(Error::Dimension(format!(
            "{} images vs {} captions",
            v.len(),
            t.len()
        )));
    }
    if v.is_empty() {
        return Err(Error::Empty("clip score inputs".into()));
    }
    let mut total = 0.0;
    for (a, b) in v.iter().zip(t) {
        total += cosine_sim(a, b)? as f64;
    }
    Ok(total / v.len() as f64)
}

/// Per-pair image/caption cosine similarity in the learned embedding space.
pub fn clip_scores(
    images: &[Tensor],
    captions: &[Caption],
    image_encoder: &ImageEncoder,
    text_encoder: &TextEncoder,
) -> Result<Vec<f64>> {
    if images.len() != captions.len() {
        return Err(Error::Dimension(format!(
            "{} images vs {} captions",
            images.len(),
            captions.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::Empty("clip score inputs".into()));
    }
    images
        .iter()
        .zip(captions)
        .map(|(x, c)| {
            let v = image_encoder.encode(x)?;
            let t = text_encoder.encode(c)?;
            Ok(cosine_sim(v.values(), t.values())? as f64)
        })
        .collect()
}

pub fn clip_score(
    images: &[Tensor],
    captions: &[Caption],
    image_encoder: &ImageEncoder,
    text_encoder: &TextEncoder,
) -> Result<f64> {
    let s = clip_scores(images, captions, image_encoder, text_encoder)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

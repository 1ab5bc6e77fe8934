//! Contrastive, structure, semantic and denoising losses and their
//! weighted total.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::StructurePrior;
use crate::encoders::{structure_features_graph, EmbeddingVector};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower bound on vector norms in cosine similarity.
pub const COSINE_FLOOR: f64 = 1e-12;

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "vector dimensions differ: {a} vs {b}"
        )));
    }
    Ok(())
}

/// `a·b / (max(‖a‖, ε̄)·max(‖b‖, ε̄))`.
pub fn cosine_sim<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    let floor = T::lit(COSINE_FLOOR);
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
    Ok(dot / (na * nb))
}

pub fn cosine_graph<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let dot = tape.dot(a, b)?;
    let na = tape.norm_floor(a, T::lit(COSINE_FLOOR));
    let nb = tape.norm_floor(b, T::lit(COSINE_FLOOR));
    let denom = tape.mul(na, nb)?;
    tape.div(dot, denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Average the image→text and text→image directions.
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            symmetric: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// InfoNCE over a square matrix of similarity nodes: the mean over rows of
/// `logsumexp(row/τ) − diag/τ`, and the column direction if symmetric.
pub fn info_nce_graph<T: Scalar>(
    tape: &mut Tape<T>,
    sims: &[Vec<Var>],
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    cfg.validate()?;
    let n = sims.len();
    if n == 0 {
        return Err(Error::Empty("contrastive batch".into()));
    }
    if sims.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("similarity matrix must be square".into()));
    }
    let inv_tau = T::lit(1.0 / cfg.temperature);
    #[allow(clippy::needless_range_loop)]
    let direction = |tape: &mut Tape<T>, by_row: bool| -> Result<Var> {
        let mut terms = Vec::with_capacity(n);
        for i in 0..n {
            let line: Vec<Var> = (0..n)
                .map(|j| if by_row { sims[i][j] } else { sims[j][i] })
                .collect();
            let logits = tape.stack(&line)?;
            let logits = tape.scale(logits, inv_tau);
            let lse = tape.logsumexp(logits)?;
            let pos = tape.index(logits, i)?;
            terms.push(tape.sub(lse, pos)?);
        }
        let terms = tape.stack(&terms)?;
        Ok(tape.mean(terms))
    };
    let forward = direction(tape, true)?;
    if !cfg.symmetric {
        return Ok(forward);
    }
    let backward = direction(tape, false)?;
    let both = tape.add(forward, backward)?;
    Ok(tape.scale(both, T::lit(0.5)))
}

/// Contrastive loss of image encodings `v` against text embeddings `t`;
/// pair `i` is the positive for row `i`.
pub fn clip_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    v: &[Var],
    t: &[Var],
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    if v.len() != t.len() {
        return Err(Error::Dimension(format!(
            "{} image encodings vs {} text embeddings",
            v.len(),
            t.len()
        )));
    }
    let mut sims = Vec::with_capacity(v.len());
    for &vi in v {
        let row = t
            .iter()
            .map(|&tj| cosine_graph(tape, vi, tj))
            .collect::<Result<Vec<_>>>()?;
        sims.push(row);
    }
    info_nce_graph(tape, &sims, cfg)
}

fn embedding_const<T: Scalar>(tape: &mut Tape<T>, e: &EmbeddingVector<T>) -> Var {
    tape.constant(Tensor::new(vec![e.dim()], e.values().to_vec()).expect("embedding length"))
}

pub fn clip_loss<T: Scalar>(
    v: &[EmbeddingVector<T>],
    t: &[EmbeddingVector<T>],
    cfg: &ContrastiveConfig,
) -> Result<T> {
    let mut tape = Tape::new();
    let vv: Vec<Var> = v.iter().map(|e| embedding_const(&mut tape, e)).collect();
    let tv: Vec<Var> = t.iter().map(|e| embedding_const(&mut tape, e)).collect();
    for (a, b) in v.iter().zip(t) {
        check_dims(a.dim(), b.dim())?;
    }
    let out = clip_loss_graph(&mut tape, &vv, &tv, cfg)?;
    Ok(tape.item(out))
}

/// Contrastive loss evaluated directly on a similarity matrix.
pub fn clip_loss_from_similarities(sims: &[Vec<f64>], cfg: &ContrastiveConfig) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars = sims
        .iter()
        .map(|row| {
            row.iter()
                .map(|&s| tape.constant(Tensor::scalar(s)))
                .collect()
        })
        .collect::<Vec<Vec<Var>>>();
    let out = info_nce_graph(&mut tape, &vars, cfg)?;
    Ok(tape.item(out))
}

/// Mean absolute difference of two equal-length feature nodes.
pub fn feature_l1_graph<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

pub fn feature_l1<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Empty("feature stack".into()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<T>() / T::lit(a.len() as f64))
}

/// Structure-preservation loss of an image node (values in `[0, 1]`)
/// against precomputed features of the prior.
pub fn struct_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    x_hat: Var,
    prior_features: Var,
) -> Result<Var> {
    let fx = structure_features_graph(tape, x_hat)?;
    if tape.shape(fx) != tape.shape(prior_features) {
        return Err(Error::Shape {
            expected: tape.shape(prior_features).to_vec(),
            actual: tape.shape(fx).to_vec(),
        });
    }
    feature_l1_graph(tape, fx, prior_features)
}

/// `mean |φ(x̂) − φ(s)|` for `x_hat` in `[0, 1]`.
pub fn struct_loss<T: Scalar>(x_hat: &Tensor<T>, prior: &StructurePrior) -> Result<T> {
    if x_hat.shape().len() != 3 || x_hat.shape()[1..] != prior.edge_map().shape()[1..] {
        return Err(Error::Shape {
            expected: prior.edge_map().shape().to_vec(),
            actual: x_hat.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let s = tape.constant(prior.cast::<T>());
    let fs = structure_features_graph(&mut tape, s)?;
    let x = tape.constant(x_hat.clone());
    let out = struct_loss_graph(&mut tape, x, fs)?;
    Ok(tape.item(out))
}

pub fn sem_loss_graph<T: Scalar>(tape: &mut Tape<T>, f_hat: Var, f_ref: Var) -> Result<Var> {
    let c = cosine_graph(tape, f_hat, f_ref)?;
    Ok(tape.affine(c, -T::one(), T::one()))
}

/// `1 − cos(f(x̂), f(x))`.
pub fn sem_loss<T: Scalar>(f_hat: &EmbeddingVector<T>, f_ref: &EmbeddingVector<T>) -> Result<T> {
    Ok(T::one() - cosine_sim(f_hat.values(), f_ref.values())?)
}

/// Mean squared error between predicted and true noise.
pub fn denoise_loss_graph<T: Scalar>(tape: &mut Tape<T>, eps_hat: Var, eps: Var) -> Result<Var> {
    let d = tape.sub(eps_hat, eps)?;
    let d = tape.square(d);
    Ok(tape.mean(d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 1.0,
            lambda3: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    /// All weights finite and nonnegative. All-zero is allowed: the
    /// denoising term is always present.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_clip: f64,
    pub l_struct: f64,
    pub l_sem: f64,
    pub l_denoise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_clip: f64,
    pub l_struct: f64,
    pub l_sem: f64,
    pub l_denoise: f64,
    pub l_total: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,l_clip,l_struct,l_sem,l_denoise,l_total";

impl LossReport {
    pub fn parts(&self) -> LossParts {
        LossParts {
            l_clip: self.l_clip,
            l_struct: self.l_struct,
            l_sem: self.l_sem,
            l_denoise: self.l_denoise,
        }
    }

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.l_clip, self.l_struct, self.l_sem, self.l_denoise, self.l_total
        )
    }
}

/// `λ₁·l_clip + λ₂·l_struct + λ₃·l_sem + l_denoise`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<LossReport> {
    for (term, v) in [
        ("l_clip", parts.l_clip),
        ("l_struct", parts.l_struct),
        ("l_sem", parts.l_sem),
        ("l_denoise", parts.l_denoise),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: term.into() });
        }
    }
    let l_total = w.lambda1 * parts.l_clip
        + w.lambda2 * parts.l_struct
        + w.lambda3 * parts.l_sem
        + parts.l_denoise;
    Ok(LossReport {
        l_clip: parts.l_clip,
        l_struct: parts.l_struct,
        l_sem: parts.l_sem,
        l_denoise: parts.l_denoise,
        l_total,
    })
}

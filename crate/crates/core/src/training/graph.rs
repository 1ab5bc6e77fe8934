//! The training loss as tape computations, shared by the optimizer and by
//! gradient verification.

use super::model::Model;
use crate::autograd::{Tape, Var};
use crate::diffusion::{forward_noise, NoiseSchedule};
use crate::encoders::structure_features_graph;
use crate::error::Result;
use crate::objectives::{
    clip_loss_graph, denoise_loss_graph, sem_loss_graph, struct_loss_graph, ContrastiveConfig,
    LossWeights,
};
use crate::tensor::{Scalar, Tensor};

/// One training example with its noise draw.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem<T = f32> {
    /// Clean image in `[0, 1]`.
    pub image: Tensor<T>,
    pub tokens: Vec<usize>,
    /// Edge map `[1, S, S]`.
    pub prior: Tensor<T>,
    pub t: usize,
    pub eps: Tensor<T>,
}

/// Per-example loss nodes.
#[derive(Clone, Copy, Debug)]
pub struct ExampleTerms {
    pub denoise: Var,
    pub structure: Var,
    pub semantic: Var,
}

/// Denoising, structure and semantic losses of one example. The last two
/// are taken on the clean-image estimate implied by the noise prediction.
pub fn example_terms<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    text_vars: &[Var],
    denoiser_vars: &[Var],
    sched: &NoiseSchedule,
    item: &BatchItem<T>,
) -> Result<ExampleTerms> {
    let two = T::lit(2.0);
    let x0 = item.image.map(|v| v * two - T::one());
    let x_t = forward_noise(&x0, item.t, &item.eps, sched)?;

    let text = model.text.config.forward(tape, text_vars, &item.tokens)?;
    let prior = tape.constant(item.prior.clone());
    let x_t_var = tape.constant(x_t.clone());
    let eps_hat =
        model
            .denoiser
            .config
            .forward(tape, denoiser_vars, x_t_var, item.t, prior, text)?;
    let eps = tape.constant(item.eps.clone());
    let denoise = denoise_loss_graph(tape, eps_hat, eps)?;

    let ab = sched.alpha_bar(item.t);
    let inv = T::lit(1.0 / ab.sqrt());
    let k = T::lit((1.0 - ab).sqrt() / ab.sqrt());
    let scaled_xt = tape.constant(x_t.map(|v| v * inv));
    let correction = tape.scale(eps_hat, k);
    let x0_hat = tape.sub(scaled_xt, correction)?;
    let x0_hat = tape.clamp(x0_hat, -T::one(), T::one());
    let x_hat = tape.affine(x0_hat, T::lit(0.5), T::lit(0.5));

    let prior_features = structure_features_graph(tape, prior)?;
    let structure = struct_loss_graph(tape, x_hat, prior_features)?;

    let f_hat = model.semantic.graph(tape, x_hat)?;
    let real = tape.constant(item.image.clone());
    let f_ref = model.semantic.graph(tape, real)?;
    let semantic = sem_loss_graph(tape, f_hat, f_ref)?;
    Ok(ExampleTerms {
        denoise,
        structure,
        semantic,
    })
}

/// `(l_denoise + λ₂·l_struct + λ₃·l_sem) / n` for one example.
pub fn example_objective<T: Scalar>(
    tape: &mut Tape<T>,
    terms: &ExampleTerms,
    weights: &LossWeights,
    n: usize,
) -> Result<Var> {
    let s = tape.scale(terms.structure, T::lit(weights.lambda2));
    let m = tape.scale(terms.semantic, T::lit(weights.lambda3));
    let sum = tape.add(terms.denoise, s)?;
    let sum = tape.add(sum, m)?;
    Ok(tape.scale(sum, T::lit(1.0 / n as f64)))
}

/// Contrastive loss between real-image encodings and caption embeddings
/// with in-batch negatives.
pub fn contrastive_term<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    text_vars: &[Var],
    image_vars: &[Var],
    items: &[BatchItem<T>],
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    let mut v = Vec::with_capacity(items.len());
    let mut t = Vec::with_capacity(items.len());
    for item in items {
        let x = tape.constant(item.image.clone());
        v.push(model.image.config.forward(tape, image_vars, x)?);
        t.push(model.text.config.forward(tape, text_vars, &item.tokens)?);
    }
    clip_loss_graph(tape, &v, &t, cfg)
}

/// Whole-batch nodes: the optimized total and the four batch-mean parts
/// `(l_clip, l_struct, l_sem, l_denoise)`.
pub struct BatchLoss {
    pub total: Var,
    pub clip: Var,
    pub structure: Var,
    pub semantic: Var,
    pub denoise: Var,
}

/// The full objective on a single tape.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    text_vars: &[Var],
    image_vars: &[Var],
    denoiser_vars: &[Var],
    sched: &NoiseSchedule,
    items: &[BatchItem<T>],
    weights: &LossWeights,
    contrastive: &ContrastiveConfig,
) -> Result<BatchLoss> {
    let clip = contrastive_term(tape, model, text_vars, image_vars, items, contrastive)?;
    let mut objective = tape.scale(clip, T::lit(weights.lambda1));
    let (mut d, mut s, mut m) = (Vec::new(), Vec::new(), Vec::new());
    for item in items {
        let terms = example_terms(tape, model, text_vars, denoiser_vars, sched, item)?;
        let part = example_objective(tape, &terms, weights, items.len())?;
        objective = tape.add(objective, part)?;
        d.push(terms.denoise);
        s.push(terms.structure);
        m.push(terms.semantic);
    }
    let mean = |tape: &mut Tape<T>, v: &[Var]| -> Result<Var> {
        let st = tape.stack(v)?;
        Ok(tape.mean(st))
    };
    Ok(BatchLoss {
        total: objective,
        clip,
        structure: mean(tape, &s)?,
        semantic: mean(tape, &m)?,
        denoise: mean(tape, &d)?,
    })
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_image, conv_trunk, trunk_params, trunk_side, EmbeddingVector};
use crate::autograd::{Tape, Var};
use crate::corpus::scene::NUM_CLASSES;
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::params::{mix_seed, Initializer, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Smallest corpus accepted by [`pretrain_semantic_encoder`].
pub const MIN_PRETRAIN_ITEMS: usize = 32;

/// Conv trunk shared with the image encoder plus one SiLU projection; the
/// projection output is the semantic feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticEncoderConfig {
    pub canvas_size: usize,
    pub channels: [usize; 2],
    pub feature_dim: usize,
}

impl SemanticEncoderConfig {
    pub fn new(canvas_size: usize) -> Self {
        Self {
            canvas_size,
            channels: [8, 16],
            feature_dim: 32,
        }
    }

    fn flat_dim(&self) -> usize {
        let side = trunk_side(self.canvas_size);
        self.channels[1] * side * side
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut init = Initializer::new(seed);
        let mut entries = trunk_params(&mut init, self.channels);
        entries.push((
            "fc.weight".into(),
            init.linear(self.feature_dim, self.flat_dim()),
        ));
        entries.push(("fc.bias".into(), Tensor::zeros(&[self.feature_dim])));
        ParamSet::new(entries)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], image: Var) -> Result<Var> {
        let h = conv_trunk(tape, &p[..4], image)?;
        let h = tape.linear(h, p[4], p[5])?;
        Ok(tape.silu(h))
    }
}

/// The semantic feature extractor `f`. Only a frozen instance produces
/// features; pretraining is the sole writer of its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEncoder<T = f32> {
    config: SemanticEncoderConfig,
    params: ParamSet<T>,
}

impl<T: Scalar> SemanticEncoder<T> {
    /// Untrained and not frozen.
    pub fn new(config: SemanticEncoderConfig, seed: u64) -> Self {
        Self {
            params: config.init(seed),
            config,
        }
    }

    pub fn from_params(config: SemanticEncoderConfig, params: ParamSet<T>) -> Result<Self> {
        if config.init::<T>(0).specs() != params.specs() {
            return Err(Error::Dimension(
                "semantic encoder parameters do not match config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SemanticEncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.params.is_frozen()
    }

    pub fn freeze(mut self) -> Self {
        self.params.freeze();
        self
    }

    pub fn cast<U: Scalar>(&self) -> SemanticEncoder<U> {
        SemanticEncoder {
            config: self.config,
            params: self.params.cast(),
        }
    }

    fn ensure_frozen(&self) -> Result<()> {
        if !self.is_frozen() {
            return Err(Error::Frozen(
                "semantic features require a frozen encoder; pretrain or freeze it first".into(),
            ));
        }
        Ok(())
    }

    /// Records `f(image)` with the parameters as constants, so gradients
    /// reach the image only.
    pub fn graph(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        self.ensure_frozen()?;
        let p = self.params.bind(tape, false);
        self.config.forward(tape, &p, image)
    }

    pub fn features(&self, image: &Tensor<T>) -> Result<EmbeddingVector<T>> {
        check_image(image, self.config.canvas_size)?;
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.graph(&mut tape, x)?;
        EmbeddingVector::new(tape.value(out).data().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub channels: [usize; 2],
    pub feature_dim: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 11,
            channels: [8, 16],
            feature_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean training-split cross-entropy before any update.
    pub initial_loss: f64,
    /// Mean training-split cross-entropy after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    /// `None` when the corpus has no held-out items.
    pub held_out_accuracy: Option<f64>,
    pub num_classes: usize,
}

struct Classifier {
    config: SemanticEncoderConfig,
}

impl Classifier {
    fn init(&self, seed: u64) -> ParamSet<f32> {
        let trunk = self.config.init::<f32>(seed);
        let mut entries: Vec<(String, Tensor)> = trunk
            .specs()
            .iter()
            .zip(trunk.tensors())
            .map(|(s, t)| (s.name.clone(), t.clone()))
            .collect();
        let mut head_init = Initializer::new(mix_seed(seed, 1));
        entries.push((
            "head.weight".into(),
            head_init.linear(NUM_CLASSES, self.config.feature_dim),
        ));
        entries.push(("head.bias".into(), Tensor::zeros(&[NUM_CLASSES])));
        ParamSet::new(entries)
    }

    fn logits(&self, tape: &mut Tape<f32>, p: &[Var], image: &Tensor) -> Result<Var> {
        let x = tape.constant(image.clone());
        let f = self.config.forward(tape, &p[..6], x)?;
        tape.linear(f, p[6], p[7])
    }

    fn extractor(&self, params: &ParamSet<f32>) -> ParamSet<f32> {
        ParamSet::new(
            params
                .specs()
                .iter()
                .zip(params.tensors())
                .take(6)
                .map(|(s, t)| (s.name.clone(), t.clone()))
                .collect(),
        )
    }

    /// Mean loss and accuracy over `items`.
    fn evaluate(
        &self,
        params: &ParamSet<f32>,
        data: &Dataset,
        items: &[usize],
    ) -> Result<(f64, f64)> {
        let rows = items
            .par_iter()
            .map(|&i| -> Result<(f64, bool)> {
                let ex = &data.examples[i];
                let mut tape = Tape::new();
                let p = params.bind(&mut tape, false);
                let logits = self.logits(&mut tape, &p, &ex.image)?;
                let target = ex.class_index();
                let loss = tape.cross_entropy(logits, target)?;
                let l = tape.value(logits).data();
                let argmax = (0..l.len()).fold(0, |b, k| if l[k] > l[b] { k } else { b });
                Ok((tape.item(loss) as f64, argmax == target))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = rows.len().max(1) as f64;
        let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
        let acc = rows.iter().filter(|r| r.1).count() as f64 / n;
        Ok((loss, acc))
    }

    fn batch_gradient(
        &self,
        params: &ParamSet<f32>,
        data: &Dataset,
        batch: &[usize],
    ) -> Result<ParamSet<f32>> {
        let per_item = batch
            .par_iter()
            .map(|&i| -> Result<ParamSet<f32>> {
                let ex = &data.examples[i];
                let mut tape = Tape::new();
                let p = params.bind(&mut tape, true);
                let logits = self.logits(&mut tape, &p, &ex.image)?;
                let loss = tape.cross_entropy(logits, ex.class_index())?;
                let loss = tape.scale(loss, 1.0 / batch.len() as f32);
                let grads = tape.backward(loss)?;
                let mut g = params.zeros_like();
                g.accumulate(&grads, &p);
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = params.zeros_like();
        for g in &per_item {
            total.add_assign(g);
        }
        Ok(total)
    }
}

/// Trains a classifier of the dominant object's (shape, color) class on the
/// training split and returns its penultimate layer as a frozen encoder.
pub fn pretrain_semantic_encoder(
    data: &Dataset,
    config: &PretrainConfig,
) -> Result<(SemanticEncoder, PretrainReport)> {
    if data.len() < MIN_PRETRAIN_ITEMS {
        return Err(Error::Corpus(format!(
            "pretraining needs at least {MIN_PRETRAIN_ITEMS} items, corpus has {}",
            data.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("pretrain batch_size must be positive".into()));
    }
    let train = data.indices(Split::Train);
    let held_out = data.indices(Split::Eval);
    let mut classes: Vec<usize> = train
        .iter()
        .map(|&i| data.examples[i].class_index())
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Corpus(format!(
            "pretraining needs at least 2 classes in the training split, found {}",
            classes.len()
        )));
    }

    let enc_config = SemanticEncoderConfig {
        canvas_size: data.canvas_size(),
        channels: config.channels,
        feature_dim: config.feature_dim,
    };
    let clf = Classifier { config: enc_config };
    let mut params = clf.init(config.seed);
    let lr = config.learning_rate as f32;

    let (initial_loss, _) = clf.evaluate(&params, data, &train)?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order = train.clone();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64 + 1));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let g = clf.batch_gradient(&params, data, batch)?;
            params.sgd_step(&g, lr)?;
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    term: "semantic pretraining".into(),
                });
            }
        }
        epoch_losses.push(clf.evaluate(&params, data, &train)?.0);
    }
    let (_, train_accuracy) = clf.evaluate(&params, data, &train)?;
    let held_out_accuracy = if held_out.is_empty() {
        None
    } else {
        Some(clf.evaluate(&params, data, &held_out)?.1)
    };
    let encoder = SemanticEncoder::from_params(enc_config, clf.extractor(&params))?.freeze();
    Ok((
        encoder,
        PretrainReport {
            initial_loss,
            epoch_losses,
            train_accuracy,
            held_out_accuracy,
            num_classes: NUM_CLASSES,
        },
    ))
}

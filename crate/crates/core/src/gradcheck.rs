//! Central finite-difference verification of tape gradients at float64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{CorpusConfig, Dataset};
use crate::diffusion::sampler::gaussian;
use crate::diffusion::NoiseSchedule;
use crate::encoders::{structure_features_graph, SemanticEncoder, SemanticEncoderConfig};
use crate::error::{Error, Result};
use crate::objectives::{ContrastiveConfig, LossWeights};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::training::graph::contrastive_term;
use crate::training::{batch_loss_graph, BatchItem, Model, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Step is `rel_step · max(1, |θ|)`.
    pub rel_step: f64,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero up to rounding are compared absolutely.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-5,
            floor: 1e-5,
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between the tape gradient of `build` with
/// respect to every scalar in `params` and its central difference.
pub fn check_params<F>(params: &ParamSet<f64>, opts: GradcheckOptions, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let mut analytic = params.zeros_like();
    analytic.accumulate(&grads, &vars);

    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = p.bind(&mut t, false);
        let r = build(&mut t, &v)?;
        Ok(t.item(r))
    };
    let mut probe = params.clone();
    probe.set_frozen(false);
    let mut worst = 0.0f64;
    for i in 0..params.num_scalars() {
        let theta = params.flat_get(i);
        let h = opts.rel_step * theta.abs().max(1.0);
        let (hi, lo) = (theta + h, theta - h);
        probe.flat_set(i, hi)?;
        let up = eval(&probe)?;
        probe.flat_set(i, lo)?;
        let down = eval(&probe)?;
        probe.flat_set(i, theta)?;
        // Divide by the representable step rather than 2h.
        let numeric = (up - down) / (hi - lo);
        worst = worst.max(relative_error(analytic.flat_get(i), numeric, opts.floor));
    }
    Ok(worst)
}

/// Same as [`check_params`] but differentiating with respect to an input.
pub fn check_input<F>(x: &Tensor<f64>, opts: GradcheckOptions, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let params = ParamSet::new(vec![("input".into(), x.clone())]);
    check_params(&params, opts, |tape, p| build(tape, p[0]))
}

/// Graphs that can be verified on the miniature model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    /// A linear functional of the input; checks the harness itself.
    Identity,
    TextEncoder,
    ImageEncoder,
    StructureFeatures,
    SemanticFeatures,
    Denoiser,
    ClipLoss,
    TotalLoss,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Identity,
        Component::TextEncoder,
        Component::ImageEncoder,
        Component::StructureFeatures,
        Component::SemanticFeatures,
        Component::Denoiser,
        Component::ClipLoss,
        Component::TotalLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Identity => "identity",
            Component::TextEncoder => "text-encoder",
            Component::ImageEncoder => "image-encoder",
            Component::StructureFeatures => "structure-features",
            Component::SemanticFeatures => "semantic-features",
            Component::Denoiser => "denoiser",
            Component::ClipLoss => "clip-loss",
            Component::TotalLoss => "total-loss",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck component {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: Component,
    /// Largest relative error over all checked scalars; infinite when the
    /// check could not run.
    pub max_rel_error: f64,
    pub scalars_checked: usize,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub num_params: usize,
    pub results: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Miniature model and micro-batch used for verification, at float64.
pub struct MicroFixture {
    pub model: Model<f64>,
    pub items: Vec<BatchItem<f64>>,
    pub sched: NoiseSchedule,
    pub weights: LossWeights,
    pub contrastive: ContrastiveConfig,
}

fn perturb(params: &mut ParamSet<f64>, phase: f64) -> Result<()> {
    for t in params.tensors_mut()? {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.15 * (i as f64 * 0.77 + phase).sin();
        }
    }
    Ok(())
}

impl MicroFixture {
    pub const CANVAS: usize = 8;

    pub fn new() -> Result<Self> {
        let canvas = Self::CANVAS;
        let data = Dataset::synthesize(&CorpusConfig {
            count: 3,
            seed: 5,
            canvas_size: canvas,
            ..CorpusConfig::default()
        })?;
        let cfg = TrainConfig {
            batch_size: 3,
            embed_dim: 4,
            image_channels: [2, 4],
            hidden_channels: 4,
            time_dim: 4,
            ..TrainConfig::default()
        };
        let semantic = SemanticEncoder::<f64>::new(
            SemanticEncoderConfig {
                canvas_size: canvas,
                channels: [2, 4],
                feature_dim: 4,
            },
            21,
        )
        .freeze();
        let mut model = Model::init(&cfg, canvas, semantic, 17)?;
        // Move off the zero-initialized output layer and zero biases so
        // every parameter carries gradient.
        perturb(&mut model.text.params, 0.1)?;
        perturb(&mut model.image.params, 0.2)?;
        perturb(&mut model.denoiser.params, 0.3)?;
        let sched = NoiseSchedule::linear(10, 1e-3, 0.2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let items = data
            .examples
            .iter()
            .zip([2, 5, 9])
            .map(|(ex, t)| BatchItem {
                image: ex.image.cast(),
                tokens: ex.caption.tokens().to_vec(),
                prior: ex.prior.cast(),
                t,
                eps: gaussian(&[3, canvas, canvas], &mut rng),
            })
            .collect();
        Ok(Self {
            model,
            items,
            sched,
            weights: LossWeights::default(),
            contrastive: ContrastiveConfig::default(),
        })
    }
}

/// Joins parameter sets into one, returning the split points.
fn join(sets: &[&ParamSet<f64>]) -> (ParamSet<f64>, Vec<usize>) {
    let mut entries = Vec::new();
    let mut ends = Vec::new();
    for (k, set) in sets.iter().enumerate() {
        for (spec, t) in set.specs().iter().zip(set.tensors()) {
            entries.push((format!("{k}.{}", spec.name), t.clone()));
        }
        ends.push(entries.len());
    }
    (ParamSet::new(entries), ends)
}

fn weights_for(n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n], |i| ((i as f64) * 0.61 + 0.4).cos())
}

/// Projects `y` onto fixed weights so any output is checked through a
/// scalar.
fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let n = tape.value(y).len();
    let flat = tape.reshape(y, &[n])?;
    let c = tape.constant(weights_for(n));
    tape.dot(flat, c)
}

fn check_component(
    fx: &MicroFixture,
    component: Component,
    opts: GradcheckOptions,
) -> Result<(f64, usize)> {
    let m = &fx.model;
    let item = &fx.items[0];
    match component {
        Component::Identity => {
            // Weights bounded away from zero and small inputs keep the
            // rounding error of the difference quotient near 1e-12.
            let x = Tensor::from_fn(&[8], |i| (i as f64 * 0.3).sin() * 0.05);
            let c = Tensor::from_fn(&[8], |i| 0.5 + 0.125 * i as f64);
            let err = check_input(&x, opts, |t, v| {
                let k = t.constant(c.clone());
                t.dot(v, k)
            })?;
            Ok((err, x.len()))
        }
        Component::TextEncoder => {
            let err = check_params(&m.text.params, opts, |t, p| {
                let y = m.text.config.forward(t, p, &item.tokens)?;
                project(t, y)
            })?;
            Ok((err, m.text.params.num_scalars()))
        }
        Component::ImageEncoder => {
            let err = check_params(&m.image.params, opts, |t, p| {
                let x = t.constant(item.image.clone());
                let y = m.image.config.forward(t, p, x)?;
                project(t, y)
            })?;
            Ok((err, m.image.params.num_scalars()))
        }
        Component::StructureFeatures => {
            let err = check_input(&item.image, opts, |t, v| {
                let f = structure_features_graph(t, v)?;
                let a = t.abs(f);
                Ok(t.sum(a))
            })?;
            Ok((err, item.image.len()))
        }
        Component::SemanticFeatures => {
            let err = check_input(&item.image, opts, |t, v| {
                let y = m.semantic.graph(t, v)?;
                project(t, y)
            })?;
            Ok((err, item.image.len()))
        }
        Component::Denoiser => {
            let err = check_params(&m.denoiser.params, opts, |t, p| {
                let x = t.constant(item.eps.clone());
                let s = t.constant(item.prior.clone());
                let e = t.constant(weights_for(m.text.config.embed_dim));
                let y = m.denoiser.config.forward(t, p, x, item.t, s, e)?;
                project(t, y)
            })?;
            Ok((err, m.denoiser.params.num_scalars()))
        }
        Component::ClipLoss => {
            let (joined, ends) = join(&[&m.text.params, &m.image.params]);
            let err = check_params(&joined, opts, |t, p| {
                contrastive_term(
                    t,
                    m,
                    &p[..ends[0]],
                    &p[ends[0]..],
                    &fx.items,
                    &fx.contrastive,
                )
            })?;
            Ok((err, joined.num_scalars()))
        }
        Component::TotalLoss => {
            let (joined, ends) = join(&[&m.text.params, &m.image.params, &m.denoiser.params]);
            let err = check_params(&joined, opts, |t, p| {
                let loss = batch_loss_graph(
                    t,
                    m,
                    &p[..ends[0]],
                    &p[ends[0]..ends[1]],
                    &p[ends[1]..],
                    &fx.sched,
                    &fx.items,
                    &fx.weights,
                    &fx.contrastive,
                )?;
                Ok(loss.total)
            })?;
            Ok((err, joined.num_scalars()))
        }
    }
}

/// Checks each component on the miniature model; a component passes when
/// its maximum relative error is below `tolerance`. Failures, including
/// checks that could not run, are report entries.
pub fn run_gradcheck(components: &[Component], tolerance: f64) -> GradcheckReport {
    let opts = GradcheckOptions::default();
    let fixture = MicroFixture::new();
    let num_params = fixture
        .as_ref()
        .map(|f| f.model.num_trainable())
        .unwrap_or(0);
    let results = components
        .iter()
        .map(|&component| {
            let outcome = fixture
                .as_ref()
                .map_err(|e| Error::Internal(e.to_string()))
                .and_then(|fx| check_component(fx, component, opts));
            match outcome {
                Ok((err, n)) => ComponentResult {
                    component,
                    max_rel_error: err,
                    scalars_checked: n,
                    passed: err < tolerance,
                    error: None,
                },
                Err(e) => ComponentResult {
                    component,
                    max_rel_error: f64::INFINITY,
                    scalars_checked: 0,
                    passed: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    GradcheckReport {
        tolerance,
        num_params,
        results,
    }
}

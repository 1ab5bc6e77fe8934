use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::config::{Optimizer, TrainConfig};
use super::graph::{contrastive_term, example_objective, example_terms, BatchItem};
use super::model::{Model, GROUP_DENOISER, GROUP_IMAGE, GROUP_TEXT};
use crate::autograd::Tape;
use crate::checkpoint::{Container, ParamGroup};
use crate::corpus::{Dataset, Split};
use crate::diffusion::sampler::gaussian;
use crate::diffusion::NoiseSchedule;
use crate::encoders::SemanticEncoder;
use crate::error::{Error, Result};
use crate::objectives::{total_loss, LossParts, LossReport, LOSS_CSV_HEADER};
use crate::params::{mix_seed, ParamSet};

pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CHECKPOINT_KIND: &str = "training";

/// Adam moment estimates for the text encoder, image encoder and
/// denoiser, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: [ParamSet; 3],
    pub second: [ParamSet; 3],
}

const MOMENT_GROUPS: [&str; 3] = [GROUP_TEXT, GROUP_IMAGE, GROUP_DENOISER];

impl Moments {
    fn zeros(model: &Model) -> Self {
        let z = |m: &Model| {
            [
                m.text.params.zeros_like(),
                m.image.params.zeros_like(),
                m.denoiser.params.zeros_like(),
            ]
        };
        Self {
            first: z(model),
            second: z(model),
        }
    }

    fn groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::with_capacity(6);
        for (prefix, sets) in [("adam_m", &self.first), ("adam_v", &self.second)] {
            for (name, p) in MOMENT_GROUPS.iter().zip(sets) {
                out.push(ParamGroup {
                    name: format!("{prefix}.{name}"),
                    params: p.clone(),
                });
            }
        }
        out
    }

    fn from_container(c: &Container, model: &Model) -> Result<Self> {
        let read = |prefix: &str, i: usize, like: &ParamSet| -> Result<ParamSet> {
            let p = &c.group(&format!("{prefix}.{}", MOMENT_GROUPS[i]))?.params;
            if p.specs() != like.specs() {
                return Err(Error::Format(format!(
                    "optimizer state {prefix}.{} does not match the model",
                    MOMENT_GROUPS[i]
                )));
            }
            Ok(p.clone())
        };
        let like = Self::zeros(model).first;
        let sets = |prefix: &str| -> Result<[ParamSet; 3]> {
            Ok([
                read(prefix, 0, &like[0])?,
                read(prefix, 1, &like[1])?,
                read(prefix, 2, &like[2])?,
            ])
        };
        Ok(Self {
            first: sets("adam_m")?,
            second: sets("adam_v")?,
        })
    }
}

/// Parameters, optimizer state and the number of completed steps. The
/// random stream of step `k` is derived from `(seed, k)`, so this is the
/// whole resumable state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub moments: Option<Moments>,
    pub step: usize,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, data: &Dataset, semantic: SemanticEncoder) -> Result<Self> {
        cfg.validate()?;
        let model = Model::init(cfg, data.canvas_size(), semantic, cfg.seed)?;
        let moments = match cfg.optimizer {
            Optimizer::Sgd => None,
            Optimizer::Adam { .. } => Some(Moments::zeros(&model)),
        };
        Ok(Self {
            model,
            moments,
            step: 0,
        })
    }

    pub fn to_container(&self, cfg: &TrainConfig) -> Container {
        let mut c = self.model.to_container(json!({
            "kind": CHECKPOINT_KIND,
            "config": cfg,
            "step": self.step,
            "rng": {"seed": cfg.seed, "next_step": self.step},
        }));
        if let Some(m) = &self.moments {
            c.groups.extend(m.groups());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<(Self, TrainConfig)> {
        if c.meta["kind"] != CHECKPOINT_KIND {
            return Err(Error::Format("not a training checkpoint".into()));
        }
        let cfg: TrainConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let step = c.meta["step"]
            .as_u64()
            .ok_or_else(|| Error::Format("checkpoint has no step counter".into()))?
            as usize;
        let model = Model::from_container(c)?;
        let moments = match cfg.optimizer {
            Optimizer::Sgd => None,
            Optimizer::Adam { .. } => Some(Moments::from_container(c, &model)?),
        };
        Ok((
            Self {
                model,
                moments,
                step,
            },
            cfg,
        ))
    }

    pub fn save(&self, cfg: &TrainConfig, path: &Path) -> Result<()> {
        self.to_container(cfg).write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, TrainConfig)> {
        Self::from_container(&Container::read(path)?)
    }
}

fn step_rng(cfg: &TrainConfig, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, step as u64))
}

/// Minibatch of step `step`: `batch_size` distinct items of `pool`, each
/// with a uniform timestep in `1..=T` and standard normal noise.
pub fn draw_batch(
    data: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    step: usize,
) -> Result<Vec<BatchItem>> {
    if pool.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training items",
            cfg.batch_size,
            pool.len()
        )));
    }
    let mut rng = step_rng(cfg, step);
    let picks = index::sample(&mut rng, pool.len(), cfg.batch_size).into_vec();
    let s = data.canvas_size();
    Ok(picks
        .into_iter()
        .map(|p| {
            let ex = &data.examples[pool[p]];
            let t = rng.random_range(1..=sched.timesteps());
            let eps = gaussian(&[3, s, s], &mut rng);
            BatchItem {
                image: ex.image.clone(),
                tokens: ex.caption.tokens().to_vec(),
                prior: ex.prior.edge_map().clone(),
                t,
                eps,
            }
        })
        .collect())
}

/// Gradients of one example: text encoder, denoiser and the loss values.
struct ExampleOutput {
    text: ParamSet,
    denoiser: ParamSet,
    values: [f64; 3],
}

/// One optimizer update of the trainable networks on `items`. The contrastive
/// term and every example are differentiated on separate tapes (examples
/// in parallel); gradients are summed in a fixed order, contrastive first
/// then examples by batch position, so the result does not depend on
/// thread scheduling.
pub fn apply_batch(
    state: &mut TrainState,
    items: &[BatchItem],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<LossReport> {
    let model = &mut state.model;
    if items.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let w = cfg.weights;
    let n = items.len();

    let mut tape = Tape::new();
    let tv = model.text.params.bind(&mut tape, true);
    let iv = model.image.params.bind(&mut tape, true);
    let clip = contrastive_term(&mut tape, model, &tv, &iv, items, &cfg.contrastive)?;
    let root = tape.scale(clip, w.lambda1 as f32);
    let grads = tape.backward(root)?;
    let mut text_grad = model.text.params.zeros_like();
    text_grad.accumulate(&grads, &tv);
    let mut image_grad = model.image.params.zeros_like();
    image_grad.accumulate(&grads, &iv);
    let l_clip = tape.item(clip) as f64;

    let shared: &Model = model;
    let outputs = items
        .par_iter()
        .map(|item| -> Result<ExampleOutput> {
            let mut tape = Tape::new();
            let tv = shared.text.params.bind(&mut tape, true);
            let dv = shared.denoiser.params.bind(&mut tape, true);
            let terms = example_terms(&mut tape, shared, &tv, &dv, sched, item)?;
            let root = example_objective(&mut tape, &terms, &w, n)?;
            let grads = tape.backward(root)?;
            let mut text = shared.text.params.zeros_like();
            text.accumulate(&grads, &tv);
            let mut denoiser = shared.denoiser.params.zeros_like();
            denoiser.accumulate(&grads, &dv);
            Ok(ExampleOutput {
                text,
                denoiser,
                values: [
                    tape.item(terms.denoise) as f64,
                    tape.item(terms.structure) as f64,
                    tape.item(terms.semantic) as f64,
                ],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut denoiser_grad = model.denoiser.params.zeros_like();
    let mut sums = [0.0f64; 3];
    for out in &outputs {
        text_grad.add_assign(&out.text);
        denoiser_grad.add_assign(&out.denoiser);
        for (s, v) in sums.iter_mut().zip(out.values) {
            *s += v;
        }
    }
    let parts = LossParts {
        l_clip,
        l_struct: sums[1] / n as f64,
        l_sem: sums[2] / n as f64,
        l_denoise: sums[0] / n as f64,
    };
    let report = total_loss(&parts, &w)?;
    for (name, g) in [
        ("text encoder gradient", &text_grad),
        ("image encoder gradient", &image_grad),
        ("denoiser gradient", &denoiser_grad),
    ] {
        if !g.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    let lr = cfg.learning_rate as f32;
    let params = [
        &mut model.text.params,
        &mut model.image.params,
        &mut model.denoiser.params,
    ];
    let grads = [&text_grad, &image_grad, &denoiser_grad];
    match (cfg.optimizer, &mut state.moments) {
        (Optimizer::Sgd, _) => {
            for (p, g) in params.into_iter().zip(grads) {
                p.sgd_step(g, lr)?;
            }
        }
        (Optimizer::Adam { beta1, beta2, eps }, Some(m)) => {
            let iter = state.step as u64 + 1;
            let moments = m.first.iter_mut().zip(m.second.iter_mut());
            for ((p, g), (m1, m2)) in params.into_iter().zip(grads).zip(moments) {
                p.adam_step(g, m1, m2, lr, (beta1, beta2, eps), iter)?;
            }
        }
        (Optimizer::Adam { .. }, None) => {
            return Err(Error::Config(
                "adam optimizer requires moment state; the checkpoint was trained with sgd".into(),
            ));
        }
    }
    Ok(report)
}

/// Draws the batch of `state.step`, applies it and advances the counter.
pub fn train_step(
    state: &mut TrainState,
    data: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<LossReport> {
    let batch = draw_batch(data, pool, cfg, sched, state.step)?;
    let report = apply_batch(state, &batch, cfg, sched).map_err(|e| match e {
        Error::NonFinite { term } => Error::NonFinite {
            term: format!("{term} at step {}", state.step),
        },
        other => other,
    })?;
    state.step += 1;
    Ok(report)
}

fn write_log(path: &Path, rows: &[String]) -> Result<()> {
    let mut text = String::from(LOSS_CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Log rows of an earlier run that precede `step`.
fn previous_rows(path: &Path, step: usize) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|s| s < step)
        })
        .map(str::to_string)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// `(step index, report)` for the steps run by this call.
    pub log: Vec<(usize, LossReport)>,
}

/// Runs steps `state.step .. cfg.steps` on the training split. With
/// `out_dir`, writes the loss log, periodic checkpoints and `model.ckpt`;
/// a resumed run keeps the earlier log rows of that directory.
pub fn train(
    data: &Dataset,
    mut state: TrainState,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    if state.model.canvas_size() != data.canvas_size() {
        return Err(Error::Dimension(format!(
            "model expects {}px images, corpus has {}px",
            state.model.canvas_size(),
            data.canvas_size()
        )));
    }
    let sched = cfg.schedule.build()?;
    let pool = data.indices(Split::Train);
    let mut rows = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            previous_rows(&dir.join(LOSS_LOG_FILE), state.step)?
        }
        None => Vec::new(),
    };
    let mut log = Vec::new();
    while state.step < cfg.steps {
        let step = state.step;
        let report = match train_step(&mut state, data, &pool, cfg, &sched) {
            Ok(r) => r,
            Err(e) => {
                if let Some(dir) = out_dir {
                    write_log(&dir.join(LOSS_LOG_FILE), &rows)?;
                }
                return Err(e);
            }
        };
        rows.push(report.csv_row(step));
        log.push((step, report));
        if let Some(dir) = out_dir {
            let done = state.step;
            if cfg.checkpoint_interval > 0
                && done.is_multiple_of(cfg.checkpoint_interval)
                && done < cfg.steps
            {
                write_log(&dir.join(LOSS_LOG_FILE), &rows)?;
                state.save(
                    cfg,
                    &dir.join(CHECKPOINT_DIR)
                        .join(format!("step_{done:06}.ckpt")),
                )?;
            }
        }
    }
    if let Some(dir) = out_dir {
        write_log(&dir.join(LOSS_LOG_FILE), &rows)?;
        state.save(cfg, &dir.join(MODEL_FILE))?;
    }
    Ok(TrainOutcome { state, log })
}

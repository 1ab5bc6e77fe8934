use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use contrastdiff::ablation::AblationAxis;
use contrastdiff::gradcheck::{run_gradcheck, Component};
use contrastdiff::pipeline::{self, PipelineConfig, Workdir};
use contrastdiff::sampling::PriorMode;
use contrastdiff::Error;

/// Structure- and text-conditioned diffusion on a procedural shapes corpus.
#[derive(Parser, Debug)]
#[command(name = "contrastdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Root that every relative path is resolved against.
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the scene corpus.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus directory [default: corpus].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing non-empty corpus directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Pretrain and freeze the semantic encoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path [default: semantic.ckpt].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the encoders and the denoiser.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Output directory [default: train].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate one image per scene of the configured split.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: samples].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trained model [default: train/model.ckpt].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Condition on an all-zero edge map instead of the scene's.
        #[arg(long)]
        blank_prior: bool,
        /// Sample at most this many scenes.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score generated images against their reference scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of generated images [default: samples].
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Trained model [default: train/model.ckpt].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report directory [default: eval].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Sweep one configuration axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// embed_dim, caption_len or struct_weight [default: from config].
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Base step count before the per-cell fraction is applied.
        #[arg(long)]
        steps: Option<usize>,
        /// CSV path [default: ablation/<axis>.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on a miniature model.
    Gradcheck {
        /// Maximum accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Components to check [default: all].
        #[arg(long = "component")]
        components: Vec<String>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

/// Raised when a check ran but did not pass.
#[derive(Debug)]
struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("gradient check failed")
    }
}

impl std::error::Error for CheckFailed {}

impl Common {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn pick(&self, given: &Option<PathBuf>, default: PathBuf) -> PathBuf {
        given.as_deref().map(|p| self.resolve(p)).unwrap_or(default)
    }

    fn load(&self) -> Result<(PipelineConfig, Workdir)> {
        let cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(&self.resolve(p))?,
            None => PipelineConfig::default(),
        };
        Ok((cfg, Workdir::new(&self.workdir)))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset {
            common,
            seed,
            out,
            overwrite,
        } => {
            let (mut cfg, wd) = common.load()?;
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            let out = common.pick(&out, wd.corpus());
            let m = pipeline::run_dataset(&cfg, &out, overwrite)?;
            println!("wrote {} scenes to {}", m.records.len(), out.display());
        }
        Command::Pretrain { common, seed, out } => {
            let (mut cfg, wd) = common.load()?;
            if let Some(s) = seed {
                cfg.pretrain.seed = s;
            }
            let out = common.pick(&out, wd.semantic());
            let r = pipeline::run_pretrain(&cfg, &wd.corpus(), &out)?;
            let held = r
                .held_out_accuracy
                .map_or("n/a".to_string(), |a| format!("{a:.4}"));
            println!(
                "semantic encoder: loss {:.4} -> {:.4}, held-out accuracy {held}; saved {}",
                r.initial_loss,
                r.epoch_losses.last().copied().unwrap_or(r.initial_loss),
                out.display()
            );
        }
        Command::Train {
            common,
            seed,
            steps,
            out,
            resume,
        } => {
            let (mut cfg, wd) = common.load()?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            cfg.train.validate()?;
            let out = common.pick(&out, wd.train());
            let resume = resume.map(|p| common.resolve(&p));
            let o =
                pipeline::run_train(&cfg, &wd.corpus(), &wd.semantic(), &out, resume.as_deref())?;
            match o.log.last() {
                Some((step, r)) => println!(
                    "step {step}: l_total {:.5}; saved {}",
                    r.l_total,
                    out.display()
                ),
                None => println!("no steps to run; saved {}", out.display()),
            }
        }
        Command::Sample {
            common,
            seed,
            out,
            model,
            blank_prior,
            limit,
        } => {
            let (mut cfg, wd) = common.load()?;
            if let Some(s) = seed {
                cfg.sample.seed = s;
            }
            if blank_prior {
                cfg.sample.prior = PriorMode::Blank;
            }
            if limit.is_some() {
                cfg.sample.limit = limit;
            }
            let out = common.pick(&out, wd.samples());
            let model = common.pick(&model, wd.model());
            let s = pipeline::run_sample(&cfg, &wd.corpus(), &model, &out)?;
            println!("wrote {} samples to {}", s.len(), out.display());
        }
        Command::Eval {
            common,
            samples,
            model,
            out,
            json,
        } => {
            let (_, wd) = common.load()?;
            let samples = common.pick(&samples, wd.samples());
            let model = common.pick(&model, wd.model());
            let out = common.pick(&out, wd.eval());
            let r = pipeline::run_eval(&wd.corpus(), &model, &samples, &out)?;
            if json {
                print!("{}", r.to_json());
            } else {
                println!(
                    "clip_score {:.5}  fid (internal feature space) {:.5}  ssim {:.5}  items {}",
                    r.clip_score, r.fid, r.ssim, r.n_items
                );
            }
        }
        Command::Ablate {
            common,
            axis,
            seed,
            steps,
            out,
        } => {
            let (mut cfg, wd) = common.load()?;
            let axis: AblationAxis = match axis {
                Some(a) => a.parse()?,
                None => cfg.ablation.axis,
            };
            if let Some(s) = seed {
                cfg.ablation.seed = s;
            }
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            let out = common.pick(&out, wd.ablation(axis));
            let rows = pipeline::run_ablate(&cfg, axis, &wd.corpus(), &wd.semantic(), &out)?;
            println!("{} cells written to {}", rows.len(), out.display());
        }
        Command::Gradcheck {
            tolerance,
            components,
            json,
        } => {
            let components = if components.is_empty() {
                Component::ALL.to_vec()
            } else {
                components
                    .iter()
                    .map(|c| c.parse())
                    .collect::<std::result::Result<Vec<Component>, _>>()?
            };
            let report = run_gradcheck(&components, tolerance);
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).context("serializing report")?
                );
            } else {
                for r in &report.results {
                    let status = if r.passed { "pass" } else { "FAIL" };
                    let note = r
                        .error
                        .as_deref()
                        .map(|e| format!("  ({e})"))
                        .unwrap_or_default();
                    println!(
                        "{status}  {:<20} max rel error {:.3e}  over {} scalars{note}",
                        r.component.name(),
                        r.max_rel_error,
                        r.scalars_checked
                    );
                }
            }
            if !report.passed() {
                return Err(CheckFailed.into());
            }
        }
    }
    Ok(())
}

/// 1 for a failed check, 2 for configuration problems, 3 for anything
/// that went wrong while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<CheckFailed>() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Json { .. }) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

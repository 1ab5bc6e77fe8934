//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! straight to stderr so the verdicts show up even when output is captured.
//! The two learning checks train the default configuration and take several
//! minutes.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use contrastdiff::ablation::{run_ablation, AblationAxis};
use contrastdiff::corpus::{Dataset, Split, StructurePrior};
use contrastdiff::diffusion::{
    forward_noise, predict_x0, reverse_step_with, sample_with, NoisePredictor, NoiseSchedule,
};
use contrastdiff::encoders::EmbeddingVector;
use contrastdiff::evaluation::evaluate_samples;
use contrastdiff::gradcheck::{run_gradcheck, Component};
use contrastdiff::metrics::{
    clip_score, clip_score_from_embeddings, frechet_distance, ssim, FeatureStats,
};
use contrastdiff::objectives::{
    clip_loss, clip_loss_from_similarities, sem_loss, struct_loss, total_loss, ContrastiveConfig,
    LossParts, LossWeights,
};
use contrastdiff::pipeline::{
    load_model, load_semantic, run_dataset, run_eval, run_pretrain, run_sample, run_train,
    PipelineConfig, Workdir,
};
use contrastdiff::sampling::{generate_samples, PriorMode};
use contrastdiff::training::{CHECKPOINT_DIR, LOSS_LOG_FILE, MODEL_FILE};
use contrastdiff::{Result, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn announce(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

/// Runs one criterion, turning panics into failures.
fn judge(id: u32, name: &str, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    announce(&format!(
        "criterion {id} ({name}): {} [{:.1}s] {}",
        if v.passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        v.detail
    ));
    v.passed
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn emb(v: Vec<f64>) -> EmbeddingVector<f64> {
    EmbeddingVector::new(v).unwrap()
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn contrastive_fidelity() -> Verdict {
    let start = Instant::now();
    let cfg = ContrastiveConfig {
        temperature: 0.07,
        symmetric: false,
    };
    let single = clip_loss(&[emb(vec![0.3, -1.0])], &[emb(vec![2.0, 0.1])], &cfg).unwrap();

    let mut uniform_err: f64 = 0.0;
    for n in 1..=8 {
        let sims = vec![vec![0.4; n]; n];
        let l = clip_loss_from_similarities(&sims, &cfg).unwrap();
        uniform_err = uniform_err.max((l - (n as f64).ln()).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut oracle_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(1..=16);
        let tau = rng.random_range(0.05..1.0);
        let v: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, d)).collect();
        let t: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, d)).collect();
        let want = (0..n)
            .map(|i| {
                let denom: f64 = (0..n).map(|j| (cos(&v[i], &t[j]) / tau).exp()).sum();
                -((cos(&v[i], &t[i]) / tau).exp() / denom).ln()
            })
            .sum::<f64>()
            / n as f64;
        let c = ContrastiveConfig {
            temperature: tau,
            symmetric: false,
        };
        let ve: Vec<_> = v.into_iter().map(emb).collect();
        let te: Vec<_> = t.into_iter().map(emb).collect();
        let got = clip_loss(&ve, &te, &c).unwrap();
        oracle_err = oracle_err.max((got - want).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        single == 0.0 && uniform_err < 1e-9 && oracle_err < 1e-6 && within(elapsed, 1.0),
        format!(
            "N=1 loss {single}, uniform |l - ln N| {uniform_err:.1e}, oracle error {oracle_err:.1e}"
        ),
    )
}

/// Predicts exactly the noise that separates `x_t` from a known target.
struct Oracle<'a> {
    target: &'a Tensor<f64>,
    sched: &'a NoiseSchedule,
}

impl NoisePredictor<f64> for Oracle<'_> {
    fn predict(&self, x_t: &Tensor<f64>, t: usize) -> Result<Tensor<f64>> {
        let ab = self.sched.alpha_bar(t);
        x_t.zip_map(self.target, |x, x0| {
            (x - ab.sqrt() * x0) / (1.0 - ab).sqrt()
        })
    }
}

fn reverse_step_fidelity() -> Verdict {
    let start = Instant::now();
    let scalar = |v: f64| Tensor::full(&[1, 1, 1], v);
    // (x, α, ᾱ, σ, ε, z)
    let cases: [(f64, f64, f64, f64, f64, f64); 4] = [
        (1.0, 0.99, 0.9, 0.0, 0.1f64.sqrt(), 0.0),
        (0.5, 0.9, 0.5, 0.3, -0.2, 1.5),
        (-1.2, 0.8, 0.2, 0.1, 0.7, -0.4),
        (0.0, 0.98, 0.6, 0.0, 1.0, 2.0),
    ];
    let mut hand_err: f64 = 0.0;
    for (x, a, ab, s, e, z) in cases {
        let want = (x - (1.0 - a) / (1.0 - ab).sqrt() * e) / a.sqrt() + s * z;
        let got = reverse_step_with(&scalar(x), a, ab, s, &scalar(e), &scalar(z)).unwrap();
        hand_err = hand_err.max((got.data()[0] - want).abs());
    }
    let worked = reverse_step_with(
        &scalar(1.0),
        0.99,
        0.9,
        0.0,
        &scalar(0.1f64.sqrt()),
        &scalar(0.0),
    )
    .unwrap()
    .data()[0];
    let worked_ok = (worked - 0.994987).abs() < 1e-6;

    let mut worst_mae: f64 = 0.0;
    for (t, b0, b1) in [(100, 1e-4, 0.02), (100, 1e-4, 0.2), (50, 1e-3, 0.05)] {
        let sched = NoiseSchedule::linear(t, b0, b1).unwrap();
        let target = Tensor::from_fn(&[3, 16, 16], |i| (i as f64 * 0.37).sin() * 0.9);
        let oracle = Oracle {
            target: &target,
            sched: &sched,
        };
        let x = sample_with(&oracle, &[3, 16, 16], &sched, 5).unwrap();
        let mae = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / x.len() as f64;
        worst_mae = worst_mae.max(mae);
    }
    let elapsed = start.elapsed();
    verdict(
        hand_err < 1e-6 && worked_ok && worst_mae < 0.05 && within(elapsed, 10.0),
        format!("hand error {hand_err:.1e}, worked example {worked:.6}, oracle sampling MAE {worst_mae:.2e}"),
    )
}

fn auxiliary_loss_fidelity() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    let edge = Tensor::<f32>::from_fn(&[1, 16, 16], |i| if i % 16 >= 8 { 1.0 } else { 0.0 });
    let prior = StructurePrior::new(edge.clone()).unwrap();
    let gray = Tensor::from_fn(&[3, 16, 16], |i| edge.data()[i % 256]);
    let flat = Tensor::full(&[3, 16, 16], 0.5f32);
    let zero_cases = [
        struct_loss(&gray, &prior).unwrap(),
        struct_loss(&flat, &StructurePrior::blank(16, 16)).unwrap(),
    ];
    ok &= zero_cases.iter().all(|l| l.abs() < 1e-6);
    notes.push(format!("struct zero cases {zero_cases:?}"));

    let u = emb(vec![0.2, -0.7, 1.1, 0.4]);
    let anchors = [
        sem_loss(&u, &u.scaled(3.0)).unwrap(),
        sem_loss(&emb(vec![1.0, 0.0]), &emb(vec![0.0, -2.0])).unwrap(),
        sem_loss(&u, &u.scaled(-0.5)).unwrap(),
    ];
    ok &= anchors
        .iter()
        .zip([0.0, 1.0, 2.0])
        .all(|(a, w)| (a - w).abs() < 1e-12);
    notes.push(format!("sem anchors {anchors:.3?}"));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = LossParts {
            l_clip: rng.random_range(0.0..5.0),
            l_struct: rng.random_range(0.0..5.0),
            l_sem: rng.random_range(0.0..2.0),
            l_denoise: rng.random_range(0.0..3.0),
        };
        let (a, b, c) = (
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
        );
        let r = total_loss(&p, &LossWeights::new(a, b, c).unwrap()).unwrap();
        let want = a * p.l_clip + b * p.l_struct + c * p.l_sem + p.l_denoise;
        worst = worst.max((r.l_total - want).abs());
    }
    ok &= worst < 1e-6;
    notes.push(format!("recomposition error {worst:.1e}"));
    verdict(ok, notes.join(", "))
}

fn diffusion_algebra() -> Verdict {
    let configs = [
        (100, 1e-4, 0.02),
        (100, 1e-4, 0.2),
        (50, 1e-3, 0.05),
        (10, 1e-2, 0.3),
        (2, 0.5, 0.5),
        (1000, 1e-4, 0.02),
    ];
    let mut invariants = true;
    for &(t, b0, b1) in &configs {
        let s = NoiseSchedule::linear(t, b0, b1).unwrap();
        invariants &= s.sigma(1) == 0.0;
        for i in 1..=t {
            let ab = s.alpha_bar(i);
            invariants &= ab > 0.0 && ab < 1.0;
            if i > 1 {
                invariants &= ab < s.alpha_bar(i - 1);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for &(t, b0, b1) in &configs[..4] {
        let sched = NoiseSchedule::linear(t, b0, b1).unwrap();
        for _ in 0..100 {
            let x0 = Tensor::<f64>::from_fn(&[3, 8, 8], |_| rng.random_range(-1.0..=1.0));
            let eps = Tensor::from_fn(&[3, 8, 8], |_| rng.sample(StandardNormal));
            for step in 1..=t {
                let x_t = forward_noise(&x0, step, &eps, &sched).unwrap();
                let back = predict_x0(&x_t, &eps, step, &sched).unwrap();
                for (a, b) in back.data().iter().zip(x0.data()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    verdict(
        invariants && worst < 1e-5,
        format!(
            "schedule invariants hold on {} configs: {invariants}, round-trip error {worst:.1e}",
            configs.len()
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let report = run_gradcheck(&Component::ALL, 1e-4);
    let elapsed = start.elapsed();
    let total = report
        .results
        .iter()
        .find(|r| r.component == Component::TotalLoss)
        .map(|r| r.max_rel_error)
        .unwrap_or(f64::INFINITY);
    let worst = report
        .results
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    verdict(
        report.passed() && total < 1e-4 && report.num_params <= 5000 && within(elapsed, 60.0),
        format!(
            "{} parameters, full objective error {total:.1e}, worst component {worst:.1e}",
            report.num_params
        ),
    )
}

fn metric_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut reflexive: f64 = 0.0;
    let mut symmetric: f64 = 0.0;
    for _ in 0..20 {
        let a = Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.0f32..1.0));
        let b = Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.0f32..1.0));
        reflexive = reflexive.max((ssim(&a, &a).unwrap() - 1.0).abs());
        symmetric = symmetric.max((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs());
    }

    let mut frechet_err: f64 = 0.0;
    for _ in 0..100 {
        let (m1, m2): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (s1, s2): (f64, f64) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let stats = |m: f64, s: f64| FeatureStats {
            mean: vec![m],
            cov: vec![s * s],
            count: 2,
        };
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        let got = frechet_distance(&stats(m1, s1), &stats(m2, s2)).unwrap();
        frechet_err = frechet_err.max((got - want).abs());
    }
    let features: Vec<Vec<f64>> = (0..12).map(|_| normal_vec(&mut rng, 5)).collect();
    let fs_stats = FeatureStats::from_features(&features).unwrap();
    let self_distance = frechet_distance(&fs_stats, &fs_stats).unwrap();

    let mut scale_err: f64 = 0.0;
    for _ in 0..20 {
        let v: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..8).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let t: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..8).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let k: f32 = rng.random_range(0.1..10.0);
        let scaled: Vec<Vec<f32>> = v
            .iter()
            .map(|r| r.iter().map(|x| x * k).collect())
            .collect();
        let a = clip_score_from_embeddings(&v, &t).unwrap();
        let b = clip_score_from_embeddings(&scaled, &t).unwrap();
        scale_err = scale_err.max((a - b).abs());
    }
    verdict(
        reflexive < 1e-10
            && symmetric < 1e-10
            && frechet_err < 1e-8
            && self_distance.abs() < 1e-8
            && scale_err < 1e-6,
        format!(
            "ssim |s(x,x) - 1| {reflexive:.1e}, asymmetry {symmetric:.1e}, 1-D Frechet error {frechet_err:.1e}, self distance {self_distance:.1e}, clip scale error {scale_err:.1e}"
        ),
    )
}

fn mean_window(log: &str, column: &str, from: usize, to: usize) -> f64 {
    let mut lines = log.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == column).unwrap();
    let vals: Vec<f64> = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|r| {
            let step: usize = r[0].parse().unwrap();
            (from..to).contains(&step)
        })
        .map(|r| r[col].parse().unwrap())
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Default-config corpus, semantic encoder and trained model, shared by the
/// learning and guidance checks.
struct Trained {
    dir: Workdir,
    cfg: PipelineConfig,
    elapsed: Duration,
}

fn train_default(root: &Path) -> Result<Trained> {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let dir = Workdir::new(root);
    run_dataset(&cfg, &dir.corpus(), false)?;
    run_pretrain(&cfg, &dir.corpus(), &dir.semantic())?;
    run_train(&cfg, &dir.corpus(), &dir.semantic(), &dir.train(), None)?;
    Ok(Trained {
        dir,
        cfg,
        elapsed: start.elapsed(),
    })
}

fn learning_smoke(trained: &Result<Trained>) -> Verdict {
    let tr = match trained {
        Ok(t) => t,
        Err(e) => return verdict(false, format!("default pipeline failed: {e}")),
    };
    let start = Instant::now();
    let t = &tr.cfg.train;
    let log = fs::read_to_string(tr.dir.train().join(LOSS_LOG_FILE)).unwrap();
    let steps = t.steps;
    let early = mean_window(&log, "l_total", 0, steps / 10);
    let late = mean_window(&log, "l_total", steps - steps / 10, steps);

    let data = Dataset::load(&tr.dir.corpus()).unwrap();
    let model = load_model(&tr.dir.model()).unwrap();
    let held_out = data.indices(Split::Eval);
    let images: Vec<_> = held_out
        .iter()
        .map(|&i| data.examples[i].image.clone())
        .collect();
    let captions: Vec<_> = held_out
        .iter()
        .map(|&i| data.examples[i].caption.clone())
        .collect();
    let mut shuffled = captions.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let paired = clip_score(&images, &captions, &model.image, &model.text).unwrap();
    let baseline = clip_score(&images, &shuffled, &model.image, &model.text).unwrap();
    let elapsed = tr.elapsed + start.elapsed();
    verdict(
        late < early && paired > baseline && within(elapsed, 900.0),
        format!(
            "{} scenes at {}px, d={}, T={}, {} steps: l_total {early:.4} -> {late:.4}; held-out clip paired {paired:.4} vs shuffled {baseline:.4}; pipeline {:.0}s",
            data.len(),
            data.canvas_size(),
            t.embed_dim,
            t.schedule.timesteps,
            steps,
            elapsed.as_secs_f64()
        ),
    )
}

fn guidance_efficacy(trained: &Result<Trained>) -> Verdict {
    let tr = match trained {
        Ok(t) => t,
        Err(e) => return verdict(false, format!("default pipeline failed: {e}")),
    };
    let data = Dataset::load(&tr.dir.corpus()).unwrap();
    let model = load_model(&tr.dir.model()).unwrap();
    let held_out = data.indices(Split::Eval);
    let sched = &tr.cfg.train.schedule;
    let seed = tr.cfg.sample.seed;
    let score = |prior| {
        let s = generate_samples(&model, &data, &held_out, sched, seed, prior).unwrap();
        evaluate_samples(&s, &data, &model).unwrap().ssim
    };
    let (edge, blank) = (score(PriorMode::Edge), score(PriorMode::Blank));

    let mut spec = tr.cfg.ablation_spec(AblationAxis::StructWeight);
    spec.values = vec![0.0, 1.0];
    let semantic = load_semantic(&tr.dir.semantic()).unwrap();
    let rows = run_ablation(&spec, &data, &semantic).unwrap();
    let (off, on) = (rows[0].final_l_struct, rows[1].final_l_struct);
    verdict(
        edge > blank && on < off,
        format!(
            "held-out ssim with edge priors {edge:.4} vs zero priors {blank:.4}; final l_struct at weight 1 {on:.4} vs weight 0 {off:.4}"
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

const REDUCED: &str = r#"{
  "corpus": {"count": 120, "seed": 4, "canvas_size": 16},
  "pretrain": {"epochs": 2, "batch_size": 16, "channels": [4, 8], "feature_dim": 8},
  "train": {
    "steps": 12, "batch_size": 8, "embed_dim": 8, "checkpoint_interval": 4,
    "image_channels": [4, 8], "hidden_channels": 8, "time_dim": 8,
    "schedule": {"timesteps": 20, "beta_start": 0.0001, "beta_end": 0.2}
  },
  "sample": {"limit": 8}
}"#;

fn full_pipeline(cfg: &PipelineConfig, dir: &Workdir) -> Result<()> {
    run_dataset(cfg, &dir.corpus(), false)?;
    run_pretrain(cfg, &dir.corpus(), &dir.semantic())?;
    run_train(cfg, &dir.corpus(), &dir.semantic(), &dir.train(), None)?;
    run_sample(cfg, &dir.corpus(), &dir.model(), &dir.samples())?;
    run_eval(&dir.corpus(), &dir.model(), &dir.samples(), &dir.eval())?;
    Ok(())
}

fn reproducibility() -> Verdict {
    let cfg = PipelineConfig::from_json(REDUCED).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (wa, wb) = (Workdir::new(a.path()), Workdir::new(b.path()));
    full_pipeline(&cfg, &wa).unwrap();
    full_pipeline(&cfg, &wb).unwrap();
    let files = files_under(a.path());
    let same_listing = files == files_under(b.path());
    let differing: Vec<_> = files
        .iter()
        .filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok())
        .collect();

    // Stop at the first intermediate checkpoint, then continue from it.
    let mut first = cfg.clone();
    first.train.steps = cfg.train.checkpoint_interval;
    let split = tempfile::tempdir().unwrap();
    let ws = Workdir::new(split.path());
    run_train(&first, &wa.corpus(), &wa.semantic(), &ws.train(), None).unwrap();
    run_train(
        &cfg,
        &wa.corpus(),
        &wa.semantic(),
        &ws.train(),
        Some(&ws.model()),
    )
    .unwrap();
    let mut compared = vec![MODEL_FILE.to_string(), LOSS_LOG_FILE.to_string()];
    let mut step = 2 * cfg.train.checkpoint_interval;
    while step < cfg.train.steps {
        compared.push(format!("{CHECKPOINT_DIR}/step_{step:06}.ckpt"));
        step += cfg.train.checkpoint_interval;
    }
    let resume_diff: Vec<_> = compared
        .iter()
        .filter(|f| fs::read(wa.train().join(f)).ok() != fs::read(ws.train().join(f)).ok())
        .collect();
    verdict(
        same_listing && differing.is_empty() && resume_diff.is_empty(),
        format!(
            "{} artifacts compared across two runs, differing {differing:?}; resumed training files differing {resume_diff:?} of {}",
            files.len(),
            compared.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut passed = vec![
        judge(1, "contrastive loss", contrastive_fidelity),
        judge(2, "reverse step and sampling", reverse_step_fidelity),
        judge(3, "auxiliary losses", auxiliary_loss_fidelity),
        judge(4, "diffusion algebra", diffusion_algebra),
        judge(5, "gradients", gradient_correctness),
        judge(6, "metrics", metric_correctness),
    ];
    let root = tempfile::tempdir().unwrap();
    let trained = train_default(root.path());
    passed.push(judge(7, "learning smoke", || learning_smoke(&trained)));
    passed.push(judge(8, "structure guidance", || {
        guidance_efficacy(&trained)
    }));
    passed.push(judge(9, "reproducibility", reproducibility));
    let failed: Vec<usize> = passed
        .iter()
        .enumerate()
        .filter(|(_, p)| !**p)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

use std::fs;

use contrastdiff::checkpoint::Container;
use contrastdiff::corpus::{CorpusConfig, Dataset, Split};
use contrastdiff::diffusion::ScheduleConfig;
use contrastdiff::encoders::{SemanticEncoder, SemanticEncoderConfig};
use contrastdiff::objectives::LossWeights;
use contrastdiff::training::{
    apply_batch, draw_batch, train, Optimizer, TrainConfig, TrainState, CHECKPOINT_DIR,
    LOSS_LOG_FILE, MODEL_FILE,
};
use contrastdiff::Error;

fn data() -> Dataset {
    Dataset::synthesize(&CorpusConfig {
        count: 40,
        seed: 3,
        canvas_size: 16,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn semantic() -> SemanticEncoder {
    let mut cfg = SemanticEncoderConfig::new(16);
    cfg.channels = [2, 4];
    cfg.feature_dim = 6;
    SemanticEncoder::new(cfg, 1).freeze()
}

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        learning_rate: 0.05,
        seed: 9,
        schedule: ScheduleConfig {
            timesteps: 20,
            beta_start: 1e-3,
            beta_end: 0.1,
        },
        embed_dim: 8,
        checkpoint_interval: 2,
        image_channels: [2, 4],
        hidden_channels: 4,
        time_dim: 4,
        ..TrainConfig::default()
    }
}

fn bytes(state: &TrainState, cfg: &TrainConfig) -> Vec<u8> {
    state.to_container(cfg).to_bytes()
}

#[test]
fn zero_learning_rate_keeps_parameters_bitwise() {
    let d = data();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..config(3)
    };
    let init = TrainState::init(&cfg, &d, semantic()).unwrap();
    let out = train(&d, init.clone(), &cfg, None).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.state.step, 3);
    let (a, b) = (
        init.model.to_container(Default::default()),
        out.state.model.to_container(Default::default()),
    );
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn denoise_only_loss_is_mean_square_of_the_noise() {
    let d = data();
    let cfg = TrainConfig {
        weights: LossWeights::new(0.0, 0.0, 0.0).unwrap(),
        ..config(1)
    };
    let sched = cfg.schedule.build().unwrap();
    let mut state = TrainState::init(&cfg, &d, semantic()).unwrap();
    let batch = draw_batch(&d, &d.indices(Split::Train), &cfg, &sched, 0).unwrap();
    let report = apply_batch(&mut state, &batch, &cfg, &sched).unwrap();
    let want = batch
        .iter()
        .map(|b| {
            b.eps
                .data()
                .iter()
                .map(|&e| (e as f64).powi(2))
                .sum::<f64>()
                / b.eps.len() as f64
        })
        .sum::<f64>()
        / batch.len() as f64;
    assert!(
        (report.l_denoise - want).abs() < 1e-5 * want,
        "{} vs {want}",
        report.l_denoise
    );
    assert_eq!(report.l_total, report.l_denoise);
}

#[test]
fn batches_are_distinct_training_items() {
    let d = data();
    let cfg = config(1);
    let sched = cfg.schedule.build().unwrap();
    let pool = d.indices(Split::Train);
    let a = draw_batch(&d, &pool, &cfg, &sched, 5).unwrap();
    let b = draw_batch(&d, &pool, &cfg, &sched, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|x| (1..=20).contains(&x.t)));
    assert_ne!(a, draw_batch(&d, &pool, &cfg, &sched, 6).unwrap());
    let big = TrainConfig {
        batch_size: pool.len() + 1,
        ..cfg.clone()
    };
    assert!(matches!(
        draw_batch(&d, &pool, &big, &sched, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn training_is_deterministic_and_logs_consistent_totals() {
    let d = data();
    let cfg = config(4);
    let run = || {
        train(
            &d,
            TrainState::init(&cfg, &d, semantic()).unwrap(),
            &cfg,
            None,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(bytes(&a.state, &cfg), bytes(&b.state, &cfg));
    for (step, r) in &a.log {
        let w = cfg.weights;
        let want =
            w.lambda1 * r.l_clip + w.lambda2 * r.l_struct + w.lambda3 * r.l_sem + r.l_denoise;
        assert!((r.l_total - want).abs() < 1e-6, "step {step}");
    }
    let steps: Vec<usize> = a.log.iter().map(|(s, _)| *s).collect();
    assert_eq!(steps, vec![0, 1, 2, 3]);
}

#[test]
fn zero_steps_returns_the_initialization() {
    let d = data();
    let cfg = config(0);
    let init = TrainState::init(&cfg, &d, semantic()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train(&d, init.clone(), &cfg, Some(dir.path())).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(bytes(&out.state, &cfg), bytes(&init, &cfg));
    let (loaded, _) = TrainState::load(&dir.path().join(MODEL_FILE)).unwrap();
    assert_eq!(loaded, init);
}

#[test]
fn semantic_encoder_is_untouched_by_training() {
    let d = data();
    let cfg = config(3);
    let sem = semantic();
    let probe = d.examples[0].image.clone();
    let before = sem.features(&probe).unwrap();
    let out = train(
        &d,
        TrainState::init(&cfg, &d, sem.clone()).unwrap(),
        &cfg,
        None,
    )
    .unwrap();
    assert_eq!(out.state.model.semantic.params(), sem.params());
    assert_eq!(out.state.model.semantic.features(&probe).unwrap(), before);
}

#[test]
fn unfrozen_semantic_encoder_is_refused() {
    let d = data();
    let loose = SemanticEncoder::new(SemanticEncoderConfig::new(16), 1);
    assert!(matches!(
        TrainState::init(&config(1), &d, loose),
        Err(Error::Frozen(_))
    ));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let d = data();
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let cfg = config(6);
    train(
        &d,
        TrainState::init(&cfg, &d, semantic()).unwrap(),
        &cfg,
        Some(full.path()),
    )
    .unwrap();

    let first = config(3);
    train(
        &d,
        TrainState::init(&first, &d, semantic()).unwrap(),
        &first,
        Some(split.path()),
    )
    .unwrap();
    let (state, _) = TrainState::load(&split.path().join(MODEL_FILE)).unwrap();
    assert_eq!(state.step, 3);
    train(&d, state, &cfg, Some(split.path())).unwrap();

    for name in [
        MODEL_FILE.to_string(),
        LOSS_LOG_FILE.to_string(),
        format!("{CHECKPOINT_DIR}/step_000004.ckpt"),
    ] {
        let a = fs::read(full.path().join(&name)).unwrap();
        let b = fs::read(split.path().join(&name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    // The first leg's own checkpoint records its shorter target in the
    // config; the parameters agree.
    let early = format!("{CHECKPOINT_DIR}/step_000002.ckpt");
    let a = Container::read(&full.path().join(&early)).unwrap();
    let b = Container::read(&split.path().join(&early)).unwrap();
    assert_eq!(a.groups, b.groups);
    let log = fs::read_to_string(full.path().join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn checkpoints_roundtrip_byte_for_byte() {
    let d = data();
    let cfg = config(2);
    let out = train(
        &d,
        TrainState::init(&cfg, &d, semantic()).unwrap(),
        &cfg,
        None,
    )
    .unwrap();
    let first = out.state.to_container(&cfg).to_bytes();
    let parsed = Container::from_bytes(&first).unwrap();
    let (state, back) = TrainState::from_container(&parsed).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(state, out.state);
    assert_eq!(state.to_container(&back).to_bytes(), first);
}

#[test]
fn diverging_runs_abort_with_a_named_term() {
    let d = data();
    let cfg = TrainConfig {
        learning_rate: 1e30,
        ..config(5)
    };
    match train(
        &d,
        TrainState::init(&cfg, &d, semantic()).unwrap(),
        &cfg,
        None,
    ) {
        Err(Error::NonFinite { term }) => assert!(term.contains("step"), "{term}"),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn config_files_reject_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    fs::write(&path, r#"{"steps": 3, "momentum": 0.9}"#).unwrap();
    assert!(TrainConfig::from_file(&path).is_err());
    fs::write(&path, r#"{"steps": 3, "batch_size": 0}"#).unwrap();
    let cfg = TrainConfig::from_file(&path);
    assert!(cfg.is_err() || cfg.unwrap().validate().is_err());
}

#[test]
fn adam_state_survives_checkpoint_resume() {
    let d = data();
    let adam = |steps| TrainConfig {
        optimizer: Optimizer::adam(),
        learning_rate: 1e-3,
        ..config(steps)
    };
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let cfg = adam(5);
    let a = train(
        &d,
        TrainState::init(&cfg, &d, semantic()).unwrap(),
        &cfg,
        Some(full.path()),
    )
    .unwrap();
    let first = adam(2);
    train(
        &d,
        TrainState::init(&first, &d, semantic()).unwrap(),
        &first,
        Some(split.path()),
    )
    .unwrap();
    let (state, _) = TrainState::load(&split.path().join(MODEL_FILE)).unwrap();
    assert!(state.moments.is_some());
    let b = train(&d, state, &cfg, Some(split.path())).unwrap();
    assert_eq!(a.state, b.state);
    for name in [MODEL_FILE, LOSS_LOG_FILE] {
        assert!(
            fs::read(full.path().join(name)).unwrap() == fs::read(split.path().join(name)).unwrap()
        );
    }
    // An Adam run cannot continue from a state without moments.
    let (mut fresh, _) = TrainState::load(&split.path().join(MODEL_FILE)).unwrap();
    fresh.moments = None;
    assert!(train(&d, fresh, &adam(6), None).is_err());
}

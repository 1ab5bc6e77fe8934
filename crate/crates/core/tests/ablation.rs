use contrastdiff::ablation::{
    rows_to_csv, run_ablation, AblationAxis, AblationSpec, ABLATION_CSV_HEADER,
};
use contrastdiff::corpus::{CorpusConfig, Dataset};
use contrastdiff::diffusion::ScheduleConfig;
use contrastdiff::encoders::{SemanticEncoder, SemanticEncoderConfig};
use contrastdiff::training::TrainConfig;

fn fixture() -> (Dataset, SemanticEncoder) {
    let data = Dataset::synthesize(&CorpusConfig {
        count: 40,
        seed: 8,
        canvas_size: 16,
        ..CorpusConfig::default()
    })
    .unwrap();
    let mut sc = SemanticEncoderConfig::new(16);
    sc.channels = [2, 4];
    sc.feature_dim = 5;
    (data, SemanticEncoder::new(sc, 2).freeze())
}

fn spec(axis: AblationAxis, values: Vec<f64>) -> AblationSpec {
    AblationSpec {
        axis,
        values,
        base: TrainConfig {
            steps: 8,
            batch_size: 4,
            embed_dim: 6,
            image_channels: [2, 4],
            hidden_channels: 4,
            time_dim: 4,
            schedule: ScheduleConfig {
                timesteps: 6,
                beta_start: 1e-3,
                beta_end: 0.2,
            },
            ..TrainConfig::default()
        },
        seed: 5,
        step_fraction: 0.25,
        eval_items: 3,
    }
}

#[test]
fn two_values_give_two_rows_and_reruns_match() {
    let (data, sem) = fixture();
    let s = spec(AblationAxis::StructWeight, vec![0.0, 1.0]);
    let rows = run_ablation(&s, &data, &sem).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].axis_value, 0.0);
    assert_eq!(rows[1].axis_value, 1.0);
    assert!(rows
        .iter()
        .all(|r| r.error.is_none() && r.final_l_struct.is_finite()));
    let csv = rows_to_csv(&rows);
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv.lines().next().unwrap(), ABLATION_CSV_HEADER);
    assert_eq!(csv, rows_to_csv(&run_ablation(&s, &data, &sem).unwrap()));
}

#[test]
fn every_axis_runs() {
    let (data, sem) = fixture();
    for (axis, values) in [
        (AblationAxis::EmbedDim, vec![4.0, 8.0]),
        (AblationAxis::CaptionLen, vec![3.0, 16.0]),
    ] {
        let rows = run_ablation(&spec(axis, values), &data, &sem).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_none()), "{axis:?}: {rows:?}");
    }
}

#[test]
fn cells_use_a_quarter_of_the_steps() {
    let s = spec(AblationAxis::EmbedDim, vec![16.0]);
    let cell = s.cell_config(16.0);
    assert_eq!(cell.steps, 2);
    assert_eq!(cell.embed_dim, 16);
    assert_eq!(cell.checkpoint_interval, 0);
    assert_eq!(s.cell_config(0.5).weights, s.base.weights);
}

#[test]
fn invalid_values_are_rejected() {
    let (data, sem) = fixture();
    for (axis, v) in [
        (AblationAxis::EmbedDim, 0.0),
        (AblationAxis::CaptionLen, 2.0),
        (AblationAxis::CaptionLen, 17.0),
        (AblationAxis::StructWeight, -1.0),
    ] {
        assert!(
            run_ablation(&spec(axis, vec![v]), &data, &sem).is_err(),
            "{axis:?} {v}"
        );
    }
    assert!("colour".parse::<AblationAxis>().is_err());
    assert_eq!(
        "caption_len".parse::<AblationAxis>().unwrap(),
        AblationAxis::CaptionLen
    );
}

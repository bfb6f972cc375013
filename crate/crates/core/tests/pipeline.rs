use vcformer::data::{read_csv, split_normalize, synth_lagged, write_csv, SplitRatios, SynthSpec};
use vcformer::model::{forward, score_maps, ModelConfig};
use vcformer::train::{evaluate, fit, TrainConfig};

fn spec() -> SynthSpec {
    SynthSpec { n_vars: 3, len: 240, lag: 2, coupling: 0.8, noise: 0.05, seed: 9 }
}

fn tiny() -> ModelConfig {
    ModelConfig {
        seq_len: 16,
        pred_len: 8,
        n_vars: 3,
        d_model: 8,
        koopman_dim: 6,
        segment_len: 4,
        blocks: 1,
        seed: 3,
        ..ModelConfig::default()
    }
}

#[test]
fn csv_round_trip_preserves_values() {
    let (raw, _) = synth_lagged(&spec()).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &raw.columns, &raw.values).unwrap();
    let back = read_csv(buf.as_slice(), false).unwrap();
    assert_eq!(back.columns, raw.columns);
    assert_eq!(back.values, raw.values);
    assert_eq!(back.dropped_rows, 0);
}

#[test]
fn training_improves_on_the_untrained_model() {
    let (raw, _) = synth_lagged(&spec()).unwrap();
    let split = split_normalize(&raw, SplitRatios::default()).unwrap();
    let model = tiny();
    let init = vcformer::model::ModelParams::init(&model).unwrap();
    let before = evaluate(&init, &model, &split.val, 1).unwrap().mse;
    let out = fit(&model, &TrainConfig { max_epochs: 4, lr: 3e-3, ..TrainConfig::default() }, &split).unwrap();
    let after = evaluate(&out.params, &model, &split.val, 1).unwrap().mse;
    assert!(after < before, "{after} !< {before}");
    assert!((after - out.report.best_val_mse).abs() < 1e-9);
}

#[test]
fn forecast_and_score_maps_have_contract_shapes() {
    let (raw, _) = synth_lagged(&spec()).unwrap();
    let model = tiny();
    let params = vcformer::model::ModelParams::init(&model).unwrap();
    let x = raw.values.slice_first(0, 16).unwrap();
    assert_eq!(forward(&x, &params).unwrap().shape(), [8, 3]);
    let maps = score_maps(&x, &params).unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].shape(), [3, 3]);
}

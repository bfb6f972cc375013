use std::path::Path;

use vcformer_cli::{run, CliError};

fn call(args: &[&str]) -> Result<String, CliError> {
    let mut out = Vec::new();
    run(args.iter().map(|s| s.to_string()).collect(), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_eval_forecast_corrmap() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    let ckpt = dir.path().join("m.ckpt");
    call(&["synth", "--n", "3", "--len", "300", "--lag", "2", "--out", p(&data)]).unwrap();
    assert!(data.with_extension("json").exists());

    call(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--quiet",
        "--model.seq_len=16",
        "--model.pred_len=8",
        "--model.n_vars=3",
        "--model.d_model=8",
        "--model.koopman_dim=6",
        "--model.segment_len=4",
        "--model.blocks=1",
        "--train.max_epochs=2",
    ])
    .unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.ckpt.report.json")).unwrap()).unwrap();
    let best = report["best_val_mse"].as_f64().unwrap();

    let line = call(&["eval", "--checkpoint", p(&ckpt), "--split", "val"]).unwrap();
    let eval: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!((eval["mse"].as_f64().unwrap() - best).abs() < 1e-9);

    let fc = dir.path().join("fc.csv");
    call(&["forecast", "--checkpoint", p(&ckpt), "--input", p(&data), "--denormalize", "--out", p(&fc)]).unwrap();
    assert_eq!(std::fs::read_to_string(&fc).unwrap().lines().count(), 9);

    let prefix = dir.path().join("cm");
    call(&["corrmap", "--checkpoint", p(&ckpt), "--input", p(&data), "--out-prefix", p(&prefix)]).unwrap();
    for suffix in ["scores", "pearson_input", "pearson_target"] {
        assert!(dir.path().join(format!("cm.{suffix}.csv")).exists(), "{suffix}");
    }
}

#[test]
fn config_overrides_and_errors() {
    let json = call(&["config", "--print-defaults"]).unwrap();
    assert!(json.contains("\"d_model\": 128"));
    let json = call(&["config", "--train.lr", "0.01"]).unwrap();
    assert!(json.contains("\"lr\": 0.01"));
    assert_eq!(call(&["config", "--train.nope=1"]).unwrap_err().exit_code(), 1);
    assert_eq!(call(&["eval", "--checkpoint", "/nonexistent.ckpt"]).unwrap_err().exit_code(), 2);
}

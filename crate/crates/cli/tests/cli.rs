//! End-to-end runs of the `voyagecast` binary.

use std::path::Path;
use std::process::{Command, Output};

use voyagecast_cli::commands::{
    evaluate_predictions, PredictionSample, Predictions, ReportFile, PREDICTIONS_SCHEMA,
};

const TOY: &str = r#"
seed = 5

[model]
preset = "toy"

[train]
max_epochs = 2
patience = 1

[synth]
vessels = 10
voyages_per_vessel = 2
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voyagecast"))
        .arg("--config")
        .arg(dir.join("toy.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env_remove("VOYAGECAST_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    dir
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let dir = setup();
    let d = dir.path();
    for stage in [
        "synth",
        "grid",
        "ingest",
        "fit-prob",
        "featurize",
        "train",
        "predict",
        "evaluate",
    ] {
        let line = ok(d, &[stage]);
        assert_eq!(line.lines().count(), 1, "{stage} printed {line:?}");
        assert!(line.starts_with(stage), "{line}");
    }
    let out = d.join("out");
    for f in [
        "messages.csv",
        "grid.geojson",
        "tracks.csv",
        "probstore.json",
        "windows-trigonometric-train.bin",
        "model-trigonometric-c1.ckpt",
        "train-log-trigonometric-c1.csv",
        "predictions-trigonometric-c1.geojson",
        "report-trigonometric-c1.md",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: ReportFile = serde_json::from_str(
        &std::fs::read_to_string(out.join("report-trigonometric-c1.json")).unwrap(),
    )
    .unwrap();
    assert!(report.samples > 0 && report.points == report.samples * 72);
    assert!(
        report.mean_km.is_finite()
            && report.p25_km <= report.p50_km
            && report.p50_km <= report.p75_km
    );

    let log = std::fs::read_to_string(out.join("train-log-trigonometric-c1.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,lr\n"));

    // the standard feature set and another ablation reuse upstream artifacts
    ok(
        d,
        &["--feature-set", "standard", "--ablation", "c5", "featurize"],
    );
    ok(
        d,
        &["--feature-set", "standard", "--ablation", "c5", "train"],
    );
    let line = ok(
        d,
        &["--feature-set", "standard", "--ablation", "c5", "predict"],
    );
    assert!(line.contains("predictions-standard-c5"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = setup();
    let d = dir.path();
    let bad_set = run(d, &["--feature-set", "polar", "grid"]);
    assert_eq!(bad_set.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_set.stderr).contains("polar"));
    assert_eq!(run(d, &["--ablation", "c9", "grid"]).status.code(), Some(2));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(2));

    std::fs::write(d.join("toy.toml"), "[grid]\ncell_size = -1.0\n").unwrap();
    assert_eq!(run(d, &["grid"]).status.code(), Some(2));
    std::fs::write(d.join("toy.toml"), "unknown_key = 1\n").unwrap();
    assert_eq!(run(d, &["grid"]).status.code(), Some(2));

    std::fs::write(d.join("toy.toml"), TOY).unwrap();
    let threads = Command::new(env!("CARGO_BIN_EXE_voyagecast"))
        .args(["--out", d.join("out").to_str().unwrap(), "grid"])
        .env("VOYAGECAST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn missing_and_stale_artifacts_are_reported() {
    let dir = setup();
    let d = dir.path();
    let missing = run(d, &["ingest"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing artifact"));

    ok(d, &["synth"]);
    ok(d, &["ingest"]);
    // a different seed changes what ingest would have produced
    let stale = run(d, &["--seed", "6", "fit-prob"]);
    assert_eq!(stale.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&stale.stderr).contains("stale"));
    ok(d, &["fit-prob"]);

    // so does editing an artifact by hand
    let tracks = d.join("out/tracks.csv");
    let mut text = std::fs::read_to_string(&tracks).unwrap();
    text.push('\n');
    std::fs::write(&tracks, text).unwrap();
    let edited = run(d, &["featurize"]);
    assert_eq!(edited.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&edited.stderr).contains("changed since"));
}

#[test]
fn identical_truth_and_prediction_score_zero_error() {
    let samples: Vec<PredictionSample> = (0..3)
        .map(|i| {
            let path: Vec<[f64; 2]> = (0..72)
                .map(|t| [47.0 + 0.01 * t as f64, -62.0 + 0.02 * (i + t) as f64])
                .collect();
            PredictionSample {
                track_id: i as u64,
                mmsi: 1,
                anchor_time: 0,
                input: path[..19].to_vec(),
                truth: path.clone(),
                prediction: path,
            }
        })
        .collect();
    let p = Predictions {
        schema: PREDICTIONS_SCHEMA.into(),
        feature_set: voyagecast::features::FeatureSet::Standard,
        ablation: voyagecast_nn::Ablation::C1,
        head_lat: (46.0, 50.0),
        head_lon: (-66.0, -58.0),
        samples,
    };
    let r = evaluate_predictions(&p).unwrap();
    assert_eq!(
        (r.mean_km, r.p75_km, r.mae, r.mse, r.r2),
        (0.0, 0.0, 0.0, 0.0, 1.0)
    );

    // and through the binary, on a predictions file outside the manifest
    let dir = setup();
    let d = dir.path();
    std::fs::create_dir_all(d.join("out")).unwrap();
    let file = d.join("perfect.json");
    std::fs::write(&file, serde_json::to_string(&p).unwrap()).unwrap();
    let line = ok(d, &["evaluate", "--predictions", file.to_str().unwrap()]);
    assert!(line.contains("mean error 0.000 km"), "{line}");
}

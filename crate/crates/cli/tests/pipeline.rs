//! End-to-end run of the whole command surface on a small synthetic dataset,
//! checking exit codes, output files, and manifest hash chaining.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tonelab_cli::manifest::{hash_file, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tonelab"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("spawn tonelab");
    assert!(
        out.status.success(),
        "tonelab {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_code(args: &[&str]) -> i32 {
    let out = bin().args(args).output().expect("spawn tonelab");
    out.status.code().unwrap_or(-1)
}

fn manifest(dir: &Path) -> RunManifest {
    let body = fs::read_to_string(dir.join("manifest.json")).expect("manifest.json");
    serde_json::from_str(&body).expect("manifest parses")
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn write_synth_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("synth.json");
    fs::write(
        &cfg,
        r#"{
            "n_words": 4,
            "tokens_per_word": 26,
            "n_speakers": 3,
            "samples_per_token": 12,
            "embedding_dim": 8,
            "seed": 11
        }"#,
    )
    .unwrap();
    cfg
}

#[test]
fn full_pipeline_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let synth_dir = root.path().join("synth");
    let ingest_dir = root.path().join("ingest");
    let fit_dir = root.path().join("fit");
    let cv_dir = root.path().join("cv");
    let vec_dir = root.path().join("vec");
    let dlm_dir = root.path().join("dlm");
    let plot_dir = root.path().join("plots");
    let cfg = write_synth_config(root.path());

    run_ok(&["synth", "--config", &p(&cfg), "--out", &p(&synth_dir)]);
    for f in ["tokens_meta.csv", "samples.csv", "embeddings.csv", "truth.json", "manifest.json"] {
        assert!(synth_dir.join(f).exists(), "synth did not write {f}");
    }

    let meta = synth_dir.join("tokens_meta.csv");
    let samples = synth_dir.join("samples.csv");
    run_ok(&[
        "ingest",
        "--meta",
        &p(&meta),
        "--samples",
        &p(&samples),
        "--out",
        &p(&ingest_dir),
    ]);
    // manifests chain: the hash ingest recorded for its input equals the
    // hash of the file synth produced
    let m = manifest(&ingest_dir);
    assert_eq!(m.command, "ingest");
    assert_eq!(m.input_hashes[&p(&meta)], hash_file(&meta).unwrap());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ingest_dir.join("filter_report.json")).unwrap())
            .unwrap();
    assert!(report["remaining"].as_u64().unwrap() > 0);

    let fmeta = ingest_dir.join("tokens_meta.csv");
    let fsamples = ingest_dir.join("samples.csv");
    run_ok(&[
        "fit",
        "--meta",
        &p(&fmeta),
        "--samples",
        &p(&fsamples),
        "--model",
        "word",
        "--out",
        &p(&fit_dir),
    ]);
    assert!(fit_dir.join("model.json").exists());
    assert!(fit_dir.join("model.bin").exists());
    assert!(fit_dir.join("edf.csv").exists());
    let m = manifest(&fit_dir);
    assert_eq!(m.input_hashes[&p(&fmeta)], hash_file(&fmeta).unwrap());

    let cv_cfg = root.path().join("cv.json");
    fs::write(&cv_cfg, r#"{"n_splits": 2}"#).unwrap();
    run_ok(&[
        "crossval",
        "--meta",
        &p(&fmeta),
        "--samples",
        &p(&fsamples),
        "--models",
        "word",
        "--config",
        &p(&cv_cfg),
        "--out",
        &p(&cv_dir),
    ]);
    let cv_csv = cv_dir.join("cv_results.csv");
    assert!(cv_csv.exists());
    assert!(cv_dir.join("cv_summary.json").exists());

    run_ok(&[
        "vectorize",
        "--meta",
        &p(&fmeta),
        "--samples",
        &p(&fsamples),
        "--model",
        &p(&fit_dir.join("model")),
        "--out",
        &p(&vec_dir),
    ]);
    let pitch = vec_dir.join("pitch_vectors.csv");
    assert!(pitch.exists());

    let dlm_cfg = root.path().join("dlm.json");
    fs::write(
        &dlm_cfg,
        r#"{
            "n_repeats": 2,
            "mappings": ["LDL"],
            "hyper": {
                "ridge_grid": [1e-6],
                "metric": "cosine",
                "net": {
                    "hidden": [8],
                    "learning_rate": 0.01,
                    "batch_size": 32,
                    "max_epochs": 5,
                    "patience": 60,
                    "seed": 0
                }
            }
        }"#,
    )
    .unwrap();
    run_ok(&[
        "dlm",
        "--pitch",
        &p(&pitch),
        "--embeddings",
        &p(&synth_dir.join("embeddings.csv")),
        "--meta",
        &p(&fmeta),
        "--config",
        &p(&dlm_cfg),
        "--out",
        &p(&dlm_dir),
    ]);
    let dlm_csv = dlm_dir.join("dlm_results.csv");
    assert!(dlm_csv.exists());
    assert!(dlm_dir.join("dlm_summary.json").exists());
    assert!(dlm_dir.join("centroid.csv").exists());
    assert!(dlm_dir.join("centroid_overlay.svg").exists());

    // plots: population + per-word contours from the fit, boxes and bars
    run_ok(&[
        "plot",
        "--kind",
        "population",
        "--model",
        &p(&fit_dir.join("model")),
        "--meta",
        &p(&fmeta),
        "--samples",
        &p(&fsamples),
        "--out",
        &p(&plot_dir),
    ]);
    run_ok(&[
        "plot",
        "--kind",
        "word",
        "--model",
        &p(&fit_dir.join("model")),
        "--meta",
        &p(&fmeta),
        "--samples",
        &p(&fsamples),
        "--out",
        &p(&plot_dir),
    ]);
    run_ok(&["plot", "--kind", "cv", "--data", &p(&cv_csv), "--out", &p(&plot_dir)]);
    run_ok(&["plot", "--kind", "accuracy", "--data", &p(&dlm_csv), "--out", &p(&plot_dir)]);
    for f in [
        "population_contour.svg",
        "population_contour.csv",
        "word_contours.svg",
        "word_contours.csv",
        "cv_boxes.svg",
        "cv_boxes.csv",
        "accuracy_bars.svg",
        "accuracy_bars.csv",
    ] {
        assert!(plot_dir.join(f).exists(), "plot did not write {f}");
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(root.path());
    let synth_dir = root.path().join("s");
    run_ok(&["synth", "--config", &p(&cfg), "--out", &p(&synth_dir)]);
    let meta = synth_dir.join("tokens_meta.csv");
    let samples = synth_dir.join("samples.csv");

    // unknown flag: usage error
    assert_eq!(run_code(&["fit", "--no-such-flag"]), 2);
    // malformed csv: usage error naming the problem
    let bad = root.path().join("bad.csv");
    fs::write(&bad, "definitely,not\nthe,schema\n").unwrap();
    let out = bin()
        .args(["ingest", "--meta", &p(&bad), "--samples", &p(&samples), "--out", &p(&root.path().join("x"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // invalid config field: usage error naming the field
    let badcfg = root.path().join("bad.json");
    fs::write(&badcfg, r#"{"bogus_field": true}"#).unwrap();
    let out = bin()
        .args([
            "crossval", "--meta", &p(&meta), "--samples", &p(&samples), "--models", "word",
            "--config", &p(&badcfg), "--out", &p(&root.path().join("y")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_field"));

    // model/runtime error: baseline model has no word term to plot
    let fit_dir = root.path().join("fitb");
    run_ok(&[
        "fit", "--meta", &p(&meta), "--samples", &p(&samples), "--model", "baseline", "--out",
        &p(&fit_dir),
    ]);
    let code = run_code(&[
        "plot", "--kind", "word", "--model", &p(&fit_dir.join("model")), "--meta", &p(&meta),
        "--samples", &p(&samples), "--out", &p(&root.path().join("z")),
    ]);
    assert_eq!(code, 1);

    // help and version are not errors
    assert_eq!(run_code(&["--help"]), 0);
    assert_eq!(run_code(&["--version"]), 0);
}

#[test]
fn out_dir_env_var_overrides_flag() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(root.path());
    let env_dir = root.path().join("from_env");
    let flag_dir = root.path().join("from_flag");
    let out = bin()
        .args(["synth", "--config", &p(&cfg), "--out", &p(&flag_dir)])
        .env("TONELAB_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("tokens_meta.csv").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn reruns_with_equal_inputs_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(root.path());
    let a = root.path().join("a");
    let b = root.path().join("b");
    run_ok(&["synth", "--config", &p(&cfg), "--out", &p(&a)]);
    run_ok(&["synth", "--config", &p(&cfg), "--out", &p(&b)]);
    for f in ["tokens_meta.csv", "samples.csv", "embeddings.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
    // --seed overrides the config seed and changes the data
    let c = root.path().join("c");
    run_ok(&["synth", "--config", &p(&cfg), "--seed", "999", "--out", &p(&c)]);
    assert_ne!(
        fs::read(a.join("samples.csv")).unwrap(),
        fs::read(c.join("samples.csv")).unwrap()
    );
    let m = manifest(&c);
    assert_eq!(m.seeds["synth"], 999);
}

//! The `mcdagg` binary: exit codes, diagnostics, file formats, manifests.

use std::path::Path;
use std::process::{Command, Output};

fn mcdagg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcdagg"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mcdagg(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(
        text.trim_end().lines().count(),
        1,
        "diagnostic spans several lines: {text}"
    );
    text
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap()
}

const SMALL: &[&str] = &["--n-stroke", "14", "--n-tia", "8", "--mc-runs", "12"];

fn gen(dir: &Path, out: &str, seed: &str) {
    let mut args = vec!["gen", "--seed", seed, "--out", out];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

#[test]
fn help_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen", "measure", "train", "predict", "eval", "cv", "rerun"] {
        let out = mcdagg(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn validation_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        vec!["gen", "--out", "x.csv", "--difficulty-mix", "1.5"],
        vec!["gen", "--out", "x.csv", "--mc-runs", "0"],
        vec!["gen", "--bogus"],
        vec!["train", "--variant", "zzz", "--train", "a", "--model-out", "m"],
        vec![
            "train",
            "--variant",
            "a",
            "--train",
            "a",
            "--model-out",
            "m",
            "--lr",
            "-1",
        ],
        vec!["cv", "--data", "a", "--out-dir", "o", "--grid", "0,1.2"],
        vec![],
    ] {
        let out = mcdagg(d, &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        stderr_line(&out);
    }
    // nothing was written by the rejected runs
    assert!(!d.join("x.csv").exists());
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcdagg(dir.path(), &["measure", "--data", "absent.csv", "--out", "m.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("absent.csv"));
}

#[test]
fn malformed_samples_exit_1_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "patient_id,patient_label,image_id,slice_index,image_label,run,p_stroke\nP,tia,I,0,no_stroke,0,1.3\n",
    )
    .unwrap();
    let out = mcdagg(dir.path(), &["measure", "--data", "bad.csv", "--out", "m.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_line(&out);
    assert!(
        msg.contains("line 2") && msg.contains("probability out of range"),
        "{msg}"
    );
}

#[test]
fn gen_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--seed",
            "7",
            "--out",
            "a.csv",
            "--n-stroke",
            "9",
            "--n-tia",
            "4",
            "--mc-runs",
            "5",
        ],
    );
    ok(
        d,
        &[
            "gen",
            "--seed",
            "7",
            "--out",
            "b.csv",
            "--n-stroke",
            "9",
            "--n-tia",
            "4",
            "--mc-runs",
            "5",
            "--threads",
            "3",
        ],
    );
    assert_eq!(read(d, "a.csv"), read(d, "b.csv"));
    ok(
        d,
        &[
            "gen",
            "--seed",
            "7",
            "--out",
            "a2.csv",
            "--n-stroke",
            "9",
            "--n-tia",
            "4",
            "--mc-runs",
            "5",
        ],
    );
    assert_eq!(read(d, "a.csv"), read(d, "a2.csv"));
    let manifest: serde_json::Value = serde_json::from_str(&read(d, "a.csv.manifest.json")).unwrap();
    assert_eq!(manifest["run"]["seed"], 7);
    assert_eq!(manifest["run"]["concentration"], 20.0);
    assert_eq!(manifest["generation"]["patient_seeds"].as_array().unwrap().len(), 13);
}

#[test]
fn measure_train_predict_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "c.csv", "3");
    ok(
        d,
        &["measure", "--data", "c.csv", "--out", "m.csv", "--hist-out", "h.csv"],
    );
    assert!(read(d, "m.csv").starts_with("patient_id,image_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_class\n"));
    let hist = read(d, "h.csv");
    assert!(hist.starts_with("patient_id,image_id,hist_bin_1,"));
    assert!(hist.lines().next().unwrap().ends_with(",hist_bin_100"));

    ok(
        d,
        &[
            "train",
            "--variant",
            "e",
            "--train",
            "c.csv",
            "--valid",
            "c.csv",
            "--epochs",
            "5",
            "--model-out",
            "m.json",
        ],
    );
    ok(
        d,
        &[
            "predict",
            "--model",
            "m.json",
            "--data",
            "c.csv",
            "--mc-runs",
            "20",
            "--out",
            "p.csv",
        ],
    );
    let preds = read(d, "p.csv");
    assert!(preds.starts_with("patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label\n"));
    assert_eq!(preds.lines().count(), 23);

    ok(
        d,
        &[
            "eval",
            "--predictions",
            "p.csv",
            "--out-dir",
            "ev",
            "--grid",
            "0,0.1,0.2",
        ],
    );
    let metrics: serde_json::Value = serde_json::from_str(&read(d, "ev/metrics.json")).unwrap();
    assert_eq!(metrics["n"], 22);
    for m in ["var", "vr", "pe", "mi", "epi", "alea"] {
        assert_eq!(read(d, &format!("ev/removal_{m}.csv")).lines().count(), 4);
    }
    assert!(read(d, "ev/calibration.csv").starts_with("interval,representative,count,observed\n"));

    // the Maximum rule leaves the uncertainty columns empty
    ok(
        d,
        &[
            "train",
            "--variant",
            "max",
            "--train",
            "c.csv",
            "--model-out",
            "max.json",
        ],
    );
    ok(
        d,
        &["predict", "--model", "max.json", "--data", "c.csv", "--out", "pm.csv"],
    );
    assert!(read(d, "pm.csv").lines().nth(1).unwrap().contains(",,,,,,"));
}

#[test]
fn eval_on_one_class_names_the_degenerate_roc() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("p.csv"),
        "patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label\n\
         A,0.2,,,,,,,tia,tia\nB,0.7,,,,,,,stroke,tia\n",
    )
    .unwrap();
    let out = mcdagg(dir.path(), &["eval", "--predictions", "p.csv", "--out-dir", "ev"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("roc_auc: degenerate input"));
}

#[test]
fn gen_then_cv_and_rerun_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--seed",
            "5",
            "--out",
            "c.csv",
            "--n-stroke",
            "28",
            "--n-tia",
            "12",
            "--mc-runs",
            "10",
        ],
    );
    let cv = [
        "cv",
        "--data",
        "c.csv",
        "--variants",
        "max,a,f",
        "--epochs",
        "20",
        "--mc-runs",
        "25",
        "--out-dir",
        "run",
    ];
    ok(d, &cv);
    let table = read(d, "run/table2.csv");
    assert_eq!(table.lines().count(), 4);
    assert!(table.contains("\nmax,max,p,"));
    for f in 1..=5 {
        assert!(d.join(format!("run/fold_{f}/fcnn-p/model.json")).exists());
        assert!(d
            .join(format!("run/fold_{f}/cnn1d-p-vr-pe-mi-var/predictions.csv"))
            .exists());
    }
    assert!(d.join("run/pooled/fcnn-p/metrics.json").exists());

    let before = read(d, "run/fold_3/cnn1d-p-vr-pe-mi-var/predictions.csv");
    std::fs::remove_file(d.join("run/fold_3/cnn1d-p-vr-pe-mi-var/predictions.csv")).unwrap();
    ok(d, &["rerun", "--manifest", "run/manifest.json"]);
    assert_eq!(read(d, "run/fold_3/cnn1d-p-vr-pe-mi-var/predictions.csv"), before);
    assert_eq!(read(d, "run/table2.csv"), table);
}

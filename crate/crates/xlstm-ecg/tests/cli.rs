use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlstm-ecg")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 8] = [
    "--override",
    "synth_records=30",
    "--override",
    "hidden_dim=4",
    "--override",
    "max_epochs=1",
    "--override",
    "batch_size=8",
];

fn synth(dir: &Path, classes: usize) {
    let classes = format!("synth_classes={classes}");
    let mut args = vec!["synth", "--out-dir", p(dir), "--override", &classes];
    args.extend_from_slice(&SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data-dir", p(data), "--out-dir", p(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn override_is_in_effect_and_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "n_layers = 2\nhidden_dim = 4\n").unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let out = tmp.path().join("run");
    let o = train(&data, &out, &["--config", p(&cfg), "--override", "n_layers=4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("  n_layers = 4\n"), "{}", stdout(&o));
    let snapshot = std::fs::read_to_string(out.join("config.cfg")).unwrap();
    assert!(snapshot.contains("n_layers = 4\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n_layers"], "4");
    assert_eq!(manifest["version"], "xlstm-ecg 0.1.0");
    assert!(out.join("model.xlec").exists());
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn class_count_mismatch_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (five, seven) = (tmp.path().join("five"), tmp.path().join("seven"));
    synth(&five, 5);
    synth(&seven, 7);
    let run_dir = tmp.path().join("run");
    let o = train(&five, &run_dir, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run_dir.join("model.xlec");
    let o = run(&[
        "evaluate",
        "--data-dir",
        p(&seven),
        "--checkpoint",
        p(&ckpt),
        "--out-dir",
        p(&tmp.path().join("eval")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("class-count mismatch"), "{}", stderr(&o));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let root = tmp.path().join(name);
        let data = root.join("data");
        synth(&data, 3);
        let o = train(&data, &root.join("run"), &["--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let eval = root.join("eval");
        let o = run(&[
            "evaluate",
            "--data-dir",
            p(&data),
            "--checkpoint",
            p(&root.join("run/model.xlec")),
            "--out-dir",
            p(&eval),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        for f in ["per_class.csv", "confusion.csv", "cooc_true_true.csv", "cooc_true_pred.csv"] {
            assert!(eval.join(f).exists(), "{f}");
        }
        reports.push(std::fs::read(eval.join("report.json")).unwrap());
        assert_eq!(
            std::fs::read(root.join("run/model.xlec")).unwrap(),
            std::fs::read(tmp.path().join("a/run/model.xlec")).unwrap()
        );
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn rerun_from_snapshot_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let first = tmp.path().join("first");
    assert!(train(&data, &first, &["--fusion", "sequential", "--seed", "9"]).status.success());
    let second = tmp.path().join("second");
    let o = run(&[
        "train",
        "--data-dir",
        p(&data),
        "--out-dir",
        p(&second),
        "--config",
        p(&first.join("config.cfg")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(first.join("model.xlec")).unwrap(),
        std::fs::read(second.join("model.xlec")).unwrap()
    );
}

#[test]
fn report_regenerates_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let run_dir = tmp.path().join("run");
    assert!(train(&data, &run_dir, &[]).status.success());
    let eval = tmp.path().join("eval");
    let o = run(&[
        "evaluate",
        "--data-dir",
        p(&data),
        "--checkpoint",
        p(&run_dir.join("model.xlec")),
        "--out-dir",
        p(&eval),
        "--split",
        "validation",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = tmp.path().join("again");
    let o = run(&["report", "--report", p(&eval.join("report.json")), "--out-dir", p(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("macro AUC"));
    for f in ["report.json", "per_class.csv", "confusion.csv", "cooc_true_true.csv", "cooc_true_pred.csv"] {
        assert_eq!(std::fs::read(eval.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn preprocess_fills_a_cache_that_training_reuses() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let cache = tmp.path().join("cache");
    let pre = tmp.path().join("pre");
    let mut args = vec![
        "preprocess",
        "--data-dir",
        p(&data),
        "--out-dir",
        p(&pre),
        "--cache-dir",
        p(&cache),
    ];
    args.extend_from_slice(&SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let cached = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(cached, 30);
    let with = tmp.path().join("with");
    let without = tmp.path().join("without");
    assert!(train(&data, &with, &["--cache-dir", p(&cache)]).status.success());
    assert!(train(&data, &without, &[]).status.success());
    assert_eq!(
        std::fs::read(with.join("model.xlec")).unwrap(),
        std::fs::read(without.join("model.xlec")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out-dir", out, "--override", "nope=1"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out-dir", out, "--fusion", "attention"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out-dir", out, "--config", p(&tmp.path().join("missing.cfg"))]).status.code(), Some(2));
    let o = run(&["train", "--data-dir", p(&tmp.path().join("absent")), "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert!(stdout(&run(&["--version"])).contains("0.1.0"));
}

#[test]
fn diverging_training_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let o = train(&data, &tmp.path().join("run"), &["--override", "lr=1e300"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn biasbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_prep_train_evaluate_mitigate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&biasbench(d, &["synth", "--n", "2000", "--out-dir", "syn"]));
    assert!(d.join("syn/corpus.csv").exists());
    assert!(d.join("syn/corpus.truth.json").exists());

    let out = biasbench(d, &["prep", "--data", "syn/corpus.csv", "--out-dir", "prep"]);
    ok(&out);
    for f in ["train.csv", "dev.csv", "test.csv", "labels.json", "gender_distribution.csv"] {
        assert!(d.join("prep").join(f).exists(), "missing {f}");
    }
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    // Splits written by prep load back unchanged as a pre-split corpus.
    ok(&biasbench(
        d,
        &["prep", "--data-splits", "prep/train.csv,prep/dev.csv,prep/test.csv", "--seed", "5", "--out-dir", "again"],
    ));
    for f in ["train.csv", "dev.csv", "test.csv"] {
        assert_eq!(fs::read(d.join("prep").join(f)).unwrap(), fs::read(d.join("again").join(f)).unwrap());
    }
    let out = biasbench(d, &["prep", "--data-splits", "prep/train.csv,prep/dev.csv", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(1));

    ok(&biasbench(
        d,
        &["train", "--data", "syn/corpus.csv", "--task", "profession", "--condition", "loss_weighting", "--out-dir", "m"],
    ));
    assert!(d.join("m/model.bin").exists());
    ok(&biasbench(d, &["evaluate", "--model-dir", "m"]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m/report.json")).unwrap()).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() > 0.5);

    ok(&biasbench(d, &["mitigate", "--scores", "m/scores.csv", "--out-dir", "mit"]));
    assert!(d.join("mit/policy.json").exists());
    assert!(d.join("mit/mitigated_predictions.csv").exists());

    ok(&biasbench(d, &["audit", "--scores", "m/scores.csv", "--no-mitigate", "--out-dir", "aud"]));
    assert!(d.join("aud/audit_report.json").exists());
    assert!(!d.join("aud/policy.json").exists());
}

#[test]
fn run_all_writes_tables_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("exp.toml"),
        "seed = 3\ntasks = [\"profession\"]\nconditions = [\"baseline\", \"oversampling\"]\nformat = \"csv\"\n[synth]\nn = 2000\n",
    )
    .unwrap();
    ok(&biasbench(d, &["run-all", "--config", "exp.toml", "--out-dir", "o"]));
    let csv = fs::read_to_string(d.join("o/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("Baseline,Profession,All,"));
    assert!(lines[2].starts_with("Oversampling,Profession,All,"));
    assert!(!d.join("o/results.json").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(biasbench(d, &["run-all", "--bogus"]).status.code(), Some(1));
    assert_eq!(biasbench(d, &["run-all"]).status.code(), Some(1));
    assert_eq!(biasbench(d, &["--help"]).status.code(), Some(0));

    fs::write(d.join("bad.csv"), "y_true,group,score_0,score_1\n0,0,0.9,0.3\n").unwrap();
    let out = biasbench(d, &["audit", "--scores", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(biasbench(d, &["prep", "--data", "missing.csv"]).status.code(), Some(2));

    fs::write(d.join("hot.toml"), "[train]\nlearning_rate = 1e300\n[synth]\nn = 1000\n").unwrap();
    let out = biasbench(d, &["train", "--config", "hot.toml", "--out-dir", "hot"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

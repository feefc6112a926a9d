use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn avqa(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_avqa"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let r = avqa(dir, args);
    assert_eq!(r.code, 0, "avqa {args:?} failed: {}", r.stderr);
    r.stdout
}

fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-fixture", "--out", "."]);
    dir
}

fn with_config<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--config", "config.toml"];
    v.extend_from_slice(args);
    v
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn report(dir: &Path, split: &str) -> BTreeMap<String, f64> {
    let text = fs::read_to_string(dir.join(format!("out/report_{split}.csv"))).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',');
    let values = lines.next().unwrap().split(',').map(|v| v.parse::<f64>().unwrap());
    header.map(str::to_string).zip(values).collect()
}

const QUICK: [&str; 2] = ["--set", "model.epochs=3"];

#[test]
fn every_command_reruns_byte_identically() {
    let fx = fixture();
    let dir = fx.path();
    let commands: [&[&str]; 8] = [
        &["process-scores"],
        &["siti"],
        &["hm-stats"],
        &["split"],
        &["extract-features"],
        &["train"],
        &["evaluate", "--split", "train"],
        &["predict", "--sequence", "seq02"],
    ];
    let mut stdout = Vec::new();
    for round in 0..2 {
        let mut printed = Vec::new();
        for c in commands {
            let mut args = with_config(&QUICK);
            args.extend_from_slice(c);
            printed.push(ok(dir, &args));
        }
        let files = snapshot(&dir.join("out"));
        if round == 0 {
            stdout.push((printed, files));
        } else {
            let (p0, f0) = &stdout[0];
            assert_eq!(p0, &printed);
            assert_eq!(f0.keys().collect::<Vec<_>>(), files.keys().collect::<Vec<_>>());
            for (k, v) in f0 {
                assert!(files[k] == *v, "{} changed between runs", k.display());
            }
        }
    }
    let (_, files) = &stdout[0];
    for name in [
        "mos.csv",
        "screening.csv",
        "siti.csv",
        "hm_stats.csv",
        "split.csv",
        "model.avqc",
        "train_log.csv",
        "predictions_train.csv",
        "report_train.csv",
        "features/seq00.avqf",
        "logs/train.log",
    ] {
        assert!(files.contains_key(Path::new(name)), "missing {name}");
    }
    let mos = String::from_utf8(files[Path::new("mos.csv")].clone()).unwrap();
    assert!(mos.lines().next().unwrap().contains("n_valid"));
    assert_eq!(mos.lines().count(), 9);
    let log = String::from_utf8(files[Path::new("logs/train.log")].clone()).unwrap();
    assert!(log.contains("override model.epochs=3"));
    let train_log = String::from_utf8(files[Path::new("train_log.csv")].clone()).unwrap();
    assert_eq!(train_log.lines().collect::<Vec<_>>().len(), 4);
    // inputs are untouched
    assert!(!dir.join("out").join("manifest.json").exists());
}

#[test]
fn overfit_fixture_end_to_end() {
    let fx = fixture();
    let dir = fx.path();
    let summary = ok(dir, &with_config(&["process-scores"]));
    assert!(summary.starts_with("rejected 0 of 20 subjects"));
    ok(dir, &with_config(&["split"]));
    ok(dir, &with_config(&["train"]));
    ok(dir, &with_config(&["evaluate", "--split", "train"]));
    let r = report(dir, "train");
    assert_eq!(r["n"], 7.0);
    assert!(r["srocc"] > 0.95, "{r:?}");
}

#[test]
fn untrained_checkpoint_evaluates_and_predicts_deterministically() {
    let fx = fixture();
    let dir = fx.path();
    ok(dir, &with_config(&["--set", "model.epochs=0", "train"]));
    ok(dir, &with_config(&["evaluate", "--split", "train"]));
    assert!(report(dir, "train").values().all(|v| v.is_finite()));
    let a = ok(dir, &with_config(&["predict", "--sequence", "seq05"]));
    let b = ok(dir, &with_config(&["predict", "--sequence", "seq05"]));
    assert_eq!(a, b);
    let score: f64 = a.trim().split(',').nth(1).unwrap().parse().unwrap();
    assert!(score > 0.0 && score < 100.0);
}

#[test]
fn all_flagged_scores_fail_explicitly() {
    let fx = fixture();
    let dir = fx.path();
    let text = fs::read_to_string(dir.join("scores.csv")).unwrap();
    let mut lines = text.lines();
    let mut flagged = format!("{}\n", lines.next().unwrap());
    for l in lines {
        let (rest, _) = l.rsplit_once(',').unwrap();
        flagged.push_str(&format!("{rest},true\n"));
    }
    fs::write(dir.join("scores.csv"), flagged).unwrap();
    let r = avqa(dir, &with_config(&["process-scores"]));
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("SSQ"), "{}", r.stderr);
    assert!(!dir.join("out/mos.csv").exists());
}

#[test]
fn split_leakage_is_fatal() {
    let fx = fixture();
    let dir = fx.path();
    ok(dir, &with_config(&["split"]));
    let mut split = fs::read_to_string(dir.join("out/split.csv")).unwrap();
    split.push_str("seq00,test\n");
    fs::write(dir.join("out/split.csv"), split).unwrap();
    let r = avqa(
        dir,
        &with_config(&QUICK).into_iter().chain(["train"]).collect::<Vec<_>>(),
    );
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("leakage"), "{}", r.stderr);
    assert!(!dir.join("out/model.avqc").exists());
}

#[test]
fn exit_codes() {
    let fx = fixture();
    let dir = fx.path();
    // validation
    assert_eq!(avqa(dir, &["split"]).code, 2);
    assert_eq!(avqa(dir, &["--config", "absent.toml", "split"]).code, 2);
    assert_eq!(avqa(dir, &with_config(&["--set", "split.ratio=1.0", "split"])).code, 2);
    assert_eq!(avqa(dir, &with_config(&["--set", "model.heads=3", "split"])).code, 2);
    assert_eq!(avqa(dir, &with_config(&["--set", "model.nonsense=1", "split"])).code, 2);
    assert_eq!(avqa(dir, &with_config(&["predict", "--sequence", "nope"])).code, 2);
    // data
    assert_eq!(avqa(dir, &with_config(&["evaluate"])).code, 3);
    fs::remove_file(dir.join("video/seq03.y4m")).unwrap();
    let r = avqa(dir, &with_config(&["siti"]));
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("seq03.y4m"), "{}", r.stderr);
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let fx = fixture();
    let dir = fx.path();
    let r = avqa(
        dir,
        &with_config(&["--set", "model.epochs=3", "--set", "model.lr=1e300", "train"]),
    );
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("non-finite"));
}

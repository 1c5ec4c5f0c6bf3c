use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use depthadapt_core::trainer::KEYS;

const SMALL_MODEL: [&str; 4] = [
    "model.height=32",
    "model.width=48",
    "model.depth=2",
    "model.base_channels=4",
];

fn depthadapt(args: &[&str], runs: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthadapt"))
        .args(args)
        .env("DEPTHADAPT_RUNS_DIR", runs)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn gen_data(out: &Path, runs: &Path) {
    let o = depthadapt(
        &[
            "gen-data",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "7",
            "--n-source",
            "4",
            "--n-target",
            "6",
            "--height",
            "32",
            "--width",
            "48",
        ],
        runs,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

fn error_line(o: &Output) -> serde_json::Value {
    let err = stderr(o);
    let line = err.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn help_lists_every_key_with_default_and_module() {
    let tmp = tempfile::tempdir().unwrap();
    let o = depthadapt(&["--help"], tmp.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for k in KEYS {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(k.key))
            .unwrap_or_else(|| panic!("{} missing from --help", k.key));
        assert!(
            line.contains(k.default) && line.contains(k.module),
            "{line}"
        );
    }
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_data(&a, tmp.path());
    gen_data(&b, tmp.path());
    let ta = tree(&a);
    assert!(ta.contains_key("source/manifest.txt"));
    assert_eq!(ta, tree(&b));
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let data = tmp.path().join("data");
    gen_data(&data, &runs);
    let (src, tgt, gt) = (
        data.join("source"),
        data.join("target"),
        data.join("target_gt"),
    );

    let mut args = vec!["pretrain", "--source", src.to_str().unwrap()];
    args.extend(SMALL_MODEL);
    args.extend([
        "train.name=pre",
        "train.pretrain_epochs=1",
        "train.pretrain_batch=2",
    ]);
    let o = depthadapt(&args, &runs);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = runs.join("pre").join("ckpt-1");
    assert!(ckpt.exists());
    assert!(runs.join("pre").join("config.txt").exists());

    let mut args = vec![
        "adapt",
        "--source",
        src.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
        "--init",
        ckpt.to_str().unwrap(),
    ];
    args.extend(SMALL_MODEL);
    args.extend([
        "train.name=ada",
        "train.adapt_epochs=1",
        "batch.N=12",
        "batch.r=2",
        "loss.streams=3",
    ]);
    let o = depthadapt(&args, &runs);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "forward_batch=42"));
    let log = std::fs::read_to_string(runs.join("ada").join("log.tsv")).unwrap();
    let mut lines = log.lines();
    let header: Vec<_> = lines.next().unwrap().split('\t').collect();
    let col = header.iter().position(|h| *h == "forward_batch").unwrap();
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].split('\t').nth(col), Some("42"));

    let adapted = runs.join("ada").join("ckpt-1");
    let o = depthadapt(
        &[
            "evaluate",
            "--checkpoint",
            adapted.to_str().unwrap(),
            "--data",
            gt.to_str().unwrap(),
            "--cap",
            "50",
            "--crop",
            "garg",
        ],
        &runs,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    let numbers: Vec<f64> = lines[0].split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(numbers.len(), 7);

    let o = depthadapt(
        &[
            "uncertainty",
            "--checkpoint",
            adapted.to_str().unwrap(),
            "--images",
            tgt.to_str().unwrap(),
        ],
        &runs,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let score: f64 = stdout(&o).lines().next().unwrap().parse().unwrap();
    assert!(score >= 0.0);

    let grid = tmp.path().join("grid");
    let o = depthadapt(
        &[
            "report",
            "pre",
            "ada",
            "--data",
            gt.to_str().unwrap(),
            "--grid",
            grid.to_str().unwrap(),
        ],
        &runs,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().next().unwrap().contains("abs_rel"));
    assert!(grid.join("ada.png").exists());
}

#[test]
fn unknown_key_is_a_config_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    let o = depthadapt(
        &["pretrain", "--source", "nowhere", "model.colour=blue"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "config");
}

#[test]
fn invalid_value_is_a_config_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    let o = depthadapt(
        &["pretrain", "--source", "nowhere", "model.height=60"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_fails_with_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let o = depthadapt(
        &[
            "evaluate",
            "--checkpoint",
            missing.to_str().unwrap(),
            "--data",
            missing.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1);
    let err = error_line(&o);
    assert!(err["error"].is_string() && err["message"].is_string());
}

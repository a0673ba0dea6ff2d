use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dyntta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyntta")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(out: &Path) -> Output {
    dyntta(&["gen-data", "--out", s(out), "--n-train", "30", "--n-test", "12"])
}

#[test]
fn malformed_command_lines_exit_64() {
    assert_eq!(dyntta(&["eval", "--no-such-flag"]).status.code(), Some(64));
    assert_eq!(dyntta(&["gen-data"]).status.code(), Some(64), "missing --out");
    assert_eq!(dyntta(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(dyntta(&["--help"]).status.code(), Some(0));
}

#[test]
fn occupied_output_requires_force() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("data");
    assert!(gen(&out).status.success());
    let again = gen(&out);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = dyntta(&[
        "--force",
        "gen-data",
        "--out",
        s(&out),
        "--n-train",
        "30",
        "--n-test",
        "12",
    ]);
    assert!(forced.status.success());
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn tampered_inputs_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    assert!(gen(&data).status.success());
    let clf = d.path().join("clf");
    let r = dyntta(&[
        "train-classifier",
        "--data",
        s(&data),
        "--out",
        s(&clf),
        "--epochs",
        "1",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let eval = |out: &str| {
        dyntta(&[
            "eval",
            "--data",
            s(&data),
            "--classifier",
            s(&clf.join("classifier.json")),
            "--out",
            s(&d.path().join(out)),
            "--kinds",
            "fog",
        ])
    };
    let ok = eval("e0");
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    for f in ["report.csv", "report.json", "accuracy.svg", "manifest.json"] {
        assert!(d.path().join("e0").join(f).is_file(), "{f}");
    }

    // Overwrite one test image with a copy of another.
    let test_dir = data.join("test");
    let mut pngs: Vec<_> = fs::read_dir(&test_dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).collect()
            } else {
                vec![p]
            }
        })
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    pngs.sort();
    fs::copy(&pngs[0], &pngs[1]).unwrap();
    let bad = eval("e1");
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("does not match"));
}

#[test]
fn grad_check_reports_and_writes_csv() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("g");
    let r = dyntta(&["grad-check", "--seeds", "1", "--filter", "softmax", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).contains("softmax"));
    let csv = fs::read_to_string(out.join("grad_check.csv")).unwrap();
    assert!(csv.starts_with("check,max_rel_err"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    let none = dyntta(&["grad-check", "--filter", "no-such-op"]);
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn bad_values_are_reported_not_panicked() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    assert!(gen(&data).status.success());
    let r = dyntta(&[
        "estimate",
        "--data",
        s(&data),
        "--dyntta",
        "/nonexistent.json",
        "--out",
        s(&d.path().join("e")),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let r = dyntta(&[
        "eval",
        "--data",
        s(&data),
        "--classifier",
        "/nonexistent.json",
        "--out",
        s(&d.path().join("e2")),
        "--severities",
        "7",
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&r.stderr).contains("panicked"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::{tempdir, TempDir};

const BIN: &str = env!("CARGO_BIN_EXE_bregconceal");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn pgm(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    for v in 0..height {
        for h in 0..width {
            bytes.push(f(h, v));
        }
    }
    bytes
}

/// Textured sequence sliding one pixel right per frame.
fn sequence(frames: usize) -> (TempDir, PathBuf) {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    for k in 0..frames {
        let data = pgm(48, 32, |h, v| {
            let x = h as f64 - k as f64;
            (128.0 + 50.0 * (x * 0.35).sin() + 40.0 * (v as f64 * 0.3).cos()) as u8
        });
        fs::write(input.join(format!("frame_{k:04}.pgm")), data).unwrap();
    }
    (tmp, input)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_prints_summary() {
    let (tmp, input) = sequence(4);
    let out = tmp.path().join("out");
    let o = run(&[
        "simulate",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--loss-rate",
        "0",
    ]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("0 of 18 macroblocks lost"), "{stdout}");
    assert!(out.join("masks").join("mask_0003.txt").exists());
}

#[test]
fn conceal_all_is_deterministic() {
    let (tmp, input) = sequence(4);
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = run(&[
            "conceal",
            "--input",
            s(&input),
            "--output",
            s(&out),
            "--method",
            "all",
            "--loss-rate",
            "0.25",
            "--seed",
            "3",
            "--mask-out",
            s(&out.join("masks")),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        trees.push(tree(&out));
    }
    assert_eq!(trees[0], trees[1]);
    let names: Vec<String> = trees[0]
        .iter()
        .map(|(p, _)| p.display().to_string())
        .collect();
    for dir in ["avgn", "bregman", "copy", "zero-fill"] {
        assert!(names.iter().any(|n| n.starts_with(dir)), "{dir} missing");
    }
    assert!(names.contains(&"report.csv".to_string()));
}

#[test]
fn evaluate_identical_sequences_hit_the_cap() {
    let (tmp, input) = sequence(3);
    let concealed = tmp.path().join("concealed");
    fs::create_dir(&concealed).unwrap();
    let copy = concealed.join("orig");
    fs::create_dir(&copy).unwrap();
    for e in fs::read_dir(&input).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, copy.join(p.file_name().unwrap())).unwrap();
    }
    let report = tmp.path().join("eval.csv");
    let o = run(&[
        "evaluate",
        "--input",
        s(&input),
        "--concealed",
        s(&concealed),
        "--report",
        s(&report),
        "--parallel-eval",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("frame,method,psnr_db"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(
        rows,
        ["0,orig,99.000000", "1,orig,99.000000", "2,orig,99.000000"]
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let (tmp, input) = sequence(3);
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "input = {:?}\noutput = {:?}\nloss_rate = 1.0\nmethod = \"copy\"\n",
            s(&input),
            s(&out)
        ),
    )
    .unwrap();

    let o = run(&["simulate", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("12 of 12"));

    let o = run(&["simulate", "--config", s(&cfg), "--loss-rate", "0"]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("0 of 12"));

    fs::write(&cfg, "lossrate = 0.1\n").unwrap();
    let o = run(&["simulate", "--config", s(&cfg), "--input", s(&input)]);
    assert!(!o.status.success());
}

#[test]
fn errors_are_one_line_with_nonzero_status() {
    let (tmp, input) = sequence(2);
    let masks = tmp.path().join("masks");
    fs::create_dir(&masks).unwrap();
    fs::write(masks.join("mask_0000.txt"), "16 3 2\n0\n").unwrap();
    fs::write(masks.join("mask_0001.txt"), "16 3 2\n").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec![
            "conceal".into(),
            "--input".into(),
            s(&tmp.path().join("missing")).into(),
        ],
        vec![
            "conceal".into(),
            "--input".into(),
            s(&input).into(),
            "--method".into(),
            "median".into(),
        ],
        vec![
            "conceal".into(),
            "--input".into(),
            s(&input).into(),
            "--raw".into(),
            "48by32".into(),
        ],
        vec![
            "simulate".into(),
            "--input".into(),
            s(&input).into(),
            "--loss-rate".into(),
            "1.5".into(),
        ],
        vec![
            "conceal".into(),
            "--input".into(),
            s(&input).into(),
            "--mask-in".into(),
            s(&masks).into(),
        ],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        let stderr = String::from_utf8(o.stderr).unwrap();
        assert_eq!(stderr.trim_end().lines().count(), 1, "{args:?}: {stderr}");
        assert!(stderr.starts_with("error: "), "{stderr}");
    }
}

#[test]
fn inputs_are_not_modified() {
    let (tmp, input) = sequence(3);
    let before = tree(&input);
    let out = tmp.path().join("out");
    let o = run(&[
        "conceal",
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--loss-rate",
        "0.5",
    ]);
    assert!(o.status.success());
    assert_eq!(before, tree(&input));
}

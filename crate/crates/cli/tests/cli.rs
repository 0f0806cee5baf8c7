use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
n_samples = 300
epochs = 2
batch_size = 64
hidden_dim = 16
depth = 2
time_embed_dim = 4
n_steps = 8
";

fn pif(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pif"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn pif")
}

fn ok(dir: &Path, args: &[&str]) -> PathBuf {
    let out = pif(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    dir.join(String::from_utf8(out.stdout).unwrap().trim())
}

/// Exit code and the category named in the one-line error report.
fn failure(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = pif(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap_or_default();
    let cat = line
        .strip_prefix("error[")
        .and_then(|s| s.split(']').next())
        .unwrap_or_else(|| panic!("unparsable error line {line:?}"));
    (out.status.code().unwrap(), cat.to_string())
}

fn setup(preset: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
    let data = ok(dir.path(), &["gen-data", "--preset", preset, "--config", "tiny.conf", "--seed", "3", "--out", "data"]);
    (dir, data)
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn gen_data_layout() {
    let dir = TempDir::new().unwrap();
    let path = ok(dir.path(), &["gen-data", "--preset", "swissroll", "--count", "1000", "--out", "."]);
    let text = read(&path);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("entity_id,point_id,x0,x1"));
    assert_eq!(lines.count(), 1000);
    assert!(read(&path.with_extension("norm")).starts_with("pif-normalization 1\n"));

    let poly = ok(dir.path(), &["gen-data", "--preset", "polygon5", "--count", "10", "--out", "."]);
    let text = read(&poly);
    assert_eq!(text.lines().next(), Some("entity_id,point_id,x0,x1,type"));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 50);
    assert!(rows[49].starts_with("9,4,"));
}

#[test]
fn every_command_is_byte_reproducible() {
    let run = || {
        let (dir, _) = setup("typed-mixture");
        let d = dir.path();
        let ck = ok(d, &["train", "data/typed_mixture.csv", "--preset", "typed-mixture", "--config", "tiny.conf", "--seed", "3", "--out", "run"]);
        let samples = ok(d, &["sample", "run/checkpoint.txt", "--count", "200", "--seed", "5", "--out", "run"]);
        let metrics = ok(d, &["eval", "run/samples.csv", "data/typed_mixture.csv", "--out", "run"]);
        let svg = ok(d, &["plot", "run/samples.csv", "--density", "--out", "run"]);
        let files = ["data/typed_mixture.csv", "data/typed_mixture.norm", "run/loss.csv"]
            .map(|f| d.join(f))
            .into_iter()
            .chain([ck, samples, metrics, svg])
            .map(|p| fs::read(p).unwrap())
            .collect::<Vec<_>>();
        (dir, files)
    };
    let (_a, first) = run();
    let (_b, second) = run();
    assert_eq!(first.len(), 7);
    for (i, (x, y)) in first.iter().zip(&second).enumerate() {
        assert!(x == y, "output {i} differs between runs");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (dir, _) = setup("swissroll");
    let d = dir.path();
    fs::write(d.join("first.conf"), format!("{TINY}epochs = 1\n")).unwrap();
    let train = |conf: &str, out: &str, resume: Option<&str>| {
        let mut args = vec!["train", "data/swissroll.csv", "--preset", "swissroll", "--config", conf, "--seed", "4", "--out", out];
        if let Some(r) = resume {
            args.extend(["--resume", r]);
        }
        ok(d, &args)
    };
    let full = train("tiny.conf", "full", None);
    train("first.conf", "half", None);
    let resumed = train("tiny.conf", "half", Some("half/checkpoint.txt"));
    let body = |p: &Path| read(p).lines().filter(|l| !l.starts_with("out = ")).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&full), body(&resumed));
}

#[test]
fn full_mask_returns_context() {
    let (dir, _) = setup("polygon5");
    let d = dir.path();
    ok(d, &["train", "data/polygon5.csv", "--preset", "polygon5", "--config", "tiny.conf", "--out", "run"]);
    let data = read(&d.join("data/polygon5.csv"));
    let mut mask = String::from("entity_id,point_id,fixed_position,fixed_type,x0,x1,type\n");
    for line in data.lines().skip(1).take(10) {
        let f: Vec<&str> = line.split(',').collect();
        mask.push_str(&format!("{},{},1,1,{},{},{}\n", f[0], f[1], f[2], f[3], f[4]));
    }
    fs::write(d.join("mask.csv"), mask).unwrap();
    let out = ok(d, &["sample", "run/checkpoint.txt", "--mask", "mask.csv", "--count", "4", "--out", "s"]);
    let got = read(&out);
    let expected: String = data.lines().skip(1).take(10).map(|l| format!("{l}\n")).collect();
    let rows: Vec<&str> = got.lines().skip(1).collect();
    for (j, chunk) in rows.chunks(5).enumerate() {
        for (row, want) in chunk.iter().zip(expected.lines().skip(5 * (j % 2))) {
            let strip = |s: &str| s.split_once(',').unwrap().1.to_string();
            assert_eq!(strip(row), strip(want));
        }
    }
}

#[test]
fn eval_of_reference_against_itself() {
    let (dir, data) = setup("typed-mixture");
    let m = ok(dir.path(), &["eval", data.to_str().unwrap(), data.to_str().unwrap(), "--out", "."]);
    let text = read(&m);
    let value = |name: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(&format!("{name},")))
            .and_then(|l| l.split(',').nth(1))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(value("jsd"), 0.0);
    assert_eq!(value("outlier_rate"), 0.0);
    assert_eq!(value("class_proportion_error"), 0.0);
}

#[test]
fn plot_draws_every_point() {
    let (dir, data) = setup("swissroll");
    let svg = read(&ok(dir.path(), &["plot", data.to_str().unwrap(), "--out", "."]));
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<circle").count(), 300);
}

#[test]
fn empty_input_fails_without_output() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.csv"), "entity_id,point_id,x0,x1\n").unwrap();
    assert_eq!(failure(dir.path(), &["plot", "empty.csv", "--out", "."]), (7, "schema".into()));
    assert!(!dir.path().join("empty.svg").exists());
}

#[test]
fn error_categories() {
    let (dir, data) = setup("swissroll");
    let d = dir.path();
    let data = data.to_str().unwrap();
    assert_eq!(failure(d, &["frobnicate"]).1, "usage");
    assert_eq!(failure(d, &["gen-data", "--preset", "nope"]), (3, "config".into()));
    fs::write(d.join("bad.conf"), "gamma = 2\n").unwrap();
    assert_eq!(failure(d, &["gen-data", "--config", "bad.conf"]).1, "config");
    fs::write(d.join("typo.conf"), "gama = 0.1\n").unwrap();
    assert_eq!(failure(d, &["gen-data", "--config", "typo.conf"]).1, "config");
    assert_eq!(failure(d, &["train", "missing.csv"]), (4, "io".into()));
    fs::write(d.join("junk.csv"), "entity_id,point_id,x0,x1\n0,0,abc,1\n").unwrap();
    assert_eq!(failure(d, &["plot", "junk.csv"]).1, "format");
    fs::write(d.join("cols.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(failure(d, &["plot", "cols.csv"]).1, "schema");
    assert_eq!(failure(d, &["train", data, "--preset", "polygon5"]).1, "schema");

    ok(d, &["train", data, "--preset", "swissroll", "--config", "tiny.conf", "--out", "run"]);
    assert_eq!(failure(d, &["sample", "run/checkpoint.txt", "--preset", "swissroll"]).1, "usage");
    let ck = read(&d.join("run/checkpoint.txt")).replacen("pif-checkpoint 1", "pif-checkpoint 9", 1);
    fs::write(d.join("future.txt"), ck).unwrap();
    assert_eq!(failure(d, &["sample", "future.txt"]), (6, "version".into()));
}

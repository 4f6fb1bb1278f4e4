use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lpg_depth::netpbm::{read_pfm, read_pgm};
use tempfile::TempDir;

const TINY: &str = "\
# small enough to train in well under a second
input_size = 16x16
base_width = 4
batch_size = 2
steps = 10
base_lr = 1e-3
samples = 6
";

fn lpgd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpgd"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn lpgd")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("tiny.cfg"), TINY).unwrap();
    ok(&lpgd(tmp.path(), &["--config", "tiny.cfg", "gen-data", "--out", "data"]));
    tmp
}

fn tsv_value(text: &str, column: &str) -> f64 {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let i = header.iter().position(|&c| c == column).unwrap();
    row[i].parse().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = setup();
    ok(&lpgd(tmp.path(), &["--config", "tiny.cfg", "gen-data", "--out", "again", "-n", "4"]));
    ok(&lpgd(tmp.path(), &["--config", "tiny.cfg", "gen-data", "--out", "twice", "-n", "4"]));
    let a = read_dir_bytes(&tmp.path().join("again"));
    assert_eq!(a.len(), 13);
    assert_eq!(a, read_dir_bytes(&tmp.path().join("twice")));
    let manifest = fs::read_to_string(tmp.path().join("again/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
}

#[test]
fn gen_data_reports_unwritable_path() {
    let tmp = setup();
    fs::write(tmp.path().join("blocker"), "").unwrap();
    let out = lpgd(tmp.path(), &["gen-data", "--out", "blocker/sub", "-n", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocker"));
}

#[test]
fn unknown_config_key_names_the_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.cfg"), "steps = 3\n\nstpes = 4\n").unwrap();
    let out = lpgd(tmp.path(), &["--config", "bad.cfg", "gen-data", "-n", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("stpes"), "{err}");
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let tmp = setup();
    ok(&lpgd(
        tmp.path(),
        &["--config", "tiny.cfg", "--set", "steps=0", "train", "--data", "data", "--out", "m.ckpt"],
    ));
    assert!(tmp.path().join("m.ckpt").exists());
    let log = fs::read_to_string(tmp.path().join("m.ckpt.log.tsv")).unwrap();
    let body: Vec<&str> = log.lines().skip(1).filter(|l| !l.starts_with('#')).collect();
    assert!(body.is_empty(), "{log}");
}

#[test]
fn training_is_deterministic() {
    let tmp = setup();
    for name in ["a", "b"] {
        ok(&lpgd(
            tmp.path(),
            &["--config", "tiny.cfg", "train", "--data", "data", "--out", &format!("{name}.ckpt")],
        ));
    }
    let read = |p: &str| fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.ckpt.log.tsv"), read("b.ckpt.log.tsv"));
    let log = String::from_utf8(read("a.ckpt.log.tsv")).unwrap();
    assert_eq!(log.lines().next(), Some("step\tlr\tloss"));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 11);
}

#[test]
fn eval_oracle_and_empty_cap() {
    let tmp = setup();
    let text = ok(&lpgd(tmp.path(), &["eval", "--oracle", "--data", "data", "--out", "r.tsv"]));
    assert_eq!(tsv_value(&text, "delta1"), 1.0);
    assert_eq!(tsv_value(&text, "abs_rel"), 0.0);
    assert_eq!(fs::read_to_string(tmp.path().join("r.tsv")).unwrap(), text);

    let out = lpgd(
        tmp.path(),
        &["eval", "--oracle", "--data", "data", "--cap-min", "100", "--cap-max", "200"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
}

#[test]
fn eval_rejects_mismatched_data() {
    let tmp = setup();
    ok(&lpgd(tmp.path(), &["--config", "tiny.cfg", "--set", "steps=0", "train", "--data", "data", "--out", "m.ckpt"]));
    ok(&lpgd(tmp.path(), &["--set", "input_size=24x24", "gen-data", "--out", "big", "-n", "1"]));
    let out = lpgd(tmp.path(), &["eval", "--checkpoint", "m.ckpt", "--data", "big"]);
    assert_eq!(out.status.code(), Some(1));
    let text = ok(&lpgd(tmp.path(), &["eval", "--checkpoint", "m.ckpt", "--data", "data"]));
    assert!(tsv_value(&text, "rmse") > 0.0);
}

#[test]
fn infer_and_inspect() {
    let tmp = setup();
    ok(&lpgd(tmp.path(), &["--config", "tiny.cfg", "train", "--data", "data", "--out", "m.ckpt"]));
    let image = "data/img_000000.pgm";
    assert!(tmp.path().join(image).exists());
    for prefix in ["p1", "p2"] {
        ok(&lpgd(tmp.path(), &["infer", "--checkpoint", "m.ckpt", "--image", image, "--out", prefix]));
    }
    let read = |p: &str| fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(read("p1.pfm"), read("p2.pfm"));
    assert_eq!(read("p1.pgm"), read("p2.pgm"));
    let depth = read_pfm(&tmp.path().join("p1.pfm")).unwrap();
    assert_eq!((depth.width, depth.height), (16, 16));
    assert!(depth.data.iter().all(|&d| d > 0.0 && d <= 10.0));

    ok(&lpgd(tmp.path(), &["inspect-lpg", "--checkpoint", "m.ckpt", "--image", image, "--out", "cues"]));
    for name in ["c8", "c4", "c2", "c1", "depth"] {
        let (img, _) = read_pgm(&tmp.path().join(format!("cues/{name}.pgm"))).unwrap();
        assert_eq!((img.width, img.height), (16, 16), "{name}");
    }

    ok(&lpgd(tmp.path(), &["--set", "input_size=24x24", "gen-data", "--out", "big", "-n", "1"]));
    let out = lpgd(tmp.path(), &["infer", "--checkpoint", "m.ckpt", "--image", "big/img_000000.pgm", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("16x16"));
}

#[test]
fn inspect_requires_guidance_variant() {
    let tmp = setup();
    ok(&lpgd(
        tmp.path(),
        &["--config", "tiny.cfg", "--set", "steps=0", "--set", "variant=baseline", "train", "--data", "data", "--out", "b.ckpt"],
    ));
    let out = lpgd(tmp.path(), &["inspect-lpg", "--checkpoint", "b.ckpt", "--image", "data/img_000000.pgm", "--out", "c"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_a_user_error() {
    let tmp = setup();
    fs::write(tmp.path().join("junk.ckpt"), b"LPGD\x01\x00").unwrap();
    let out = lpgd(tmp.path(), &["infer", "--checkpoint", "junk.ckpt", "--image", "data/img_000000.pgm", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.ckpt"));
}

#[test]
fn gradcheck_table() {
    let tmp = TempDir::new().unwrap();
    let text = ok(&lpgd(tmp.path(), &["gradcheck", "--points", "1"]));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() >= 10, "{text}");
    assert!(rows.iter().all(|r| r.ends_with("pass")));
    assert!(rows.iter().any(|r| r.starts_with("lpg_expand")));
    assert!(rows.iter().any(|r| r.starts_with("silog")));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let tmp = setup();
    ok(&lpgd(
        tmp.path(),
        &["--config", "tiny.cfg", "--set", "steps=2", "ablate", "--data", "data", "--out", "ab.tsv", "--logs", "logs"],
    ));
    let table = fs::read_to_string(tmp.path().join("ab.tsv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    let rmse: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| tsv_value(&format!("{}\n{l}", table.lines().next().unwrap()), "rmse"))
        .collect();
    assert!(rmse.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(fs::read_dir(tmp.path().join("logs")).unwrap().count(), 5);
}

#[test]
fn bad_usage_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(lpgd(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(lpgd(tmp.path(), &["--help"]).status.code(), Some(0));
}

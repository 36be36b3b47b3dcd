use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deep_bsde::cli::{Manifest, EXIT_CONFIG, EXIT_NC, EXIT_OK};
use deep_bsde::sde::read_path_dump;
use tempfile::TempDir;

const BASE: &str = r#"
[problem]
id = "ex1"
dim = 1
steps = 4

[scheme]
kind = "ladbsde"

[train]
batch = 16
seeds = [1, 2]

[train.policy]
max_steps = 60
period = 20
probe_every = 10
validation_size = 64

[evaluate]
test_size = 64
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deep-bsde"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn train_base(dir: &TempDir, text: &str, out: &str) -> (PathBuf, Output) {
    let cfg = write_config(dir.path(), &format!("{out}.toml"), text);
    let out = dir.path().join(out);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (out, o)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn train_writes_the_documented_layout() {
    let dir = TempDir::new().unwrap();
    let (out, o) = train_base(&dir, BASE, "run");
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "manifest.toml",
        "t0_errors.csv",
        "regression.csv",
        "loss.csv",
        "checkpoints/seed-1.ckpt",
        "checkpoints/seed-2.ckpt",
        "records/seed-1.csv",
        "records/seed-2.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.runs.len(), 2);
    assert!(!m.has_nc());
    let t0 = csv_rows(&out.join("t0_errors.csv"));
    assert_eq!(t0.len(), 1);
    assert_eq!(&t0[0][8], "ok");
    // step 0 plus 60 steps
    assert_eq!(csv_rows(&out.join("records/seed-1.csv")).len(), 61);
    assert_eq!(csv_rows(&out.join("regression.csv")).len(), 4);
    assert!(!out.join("t0_errors.csv.tmp").exists());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, _) = train_base(&dir, BASE, "a");
    let (b, _) = train_base(&dir, BASE, "b");
    for f in ["t0_errors.csv", "regression.csv", "loss.csv", "records/seed-2.csv", "checkpoints/seed-2.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_reloads_as_config_and_evaluate_reproduces_metrics() {
    let dir = TempDir::new().unwrap();
    let (out, o) = train_base(&dir, BASE, "run");
    assert_eq!(code(&o), EXIT_OK);
    let before = fs::read(out.join("t0_errors.csv")).unwrap();
    let manifest = out.join("manifest.toml");
    let o = run(&["evaluate", "--config", manifest.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("t0_errors.csv")).unwrap(), before);
    assert_eq!(Manifest::load(&out).unwrap().command, "evaluate");
}

#[test]
fn flags_override_the_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("run");
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--iters",
        "20",
    ]);
    assert_eq!(code(&o), EXIT_OK);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.runs[0].seed, 7);
    assert_eq!(m.runs[0].steps, 20);
}

#[test]
fn malformed_config_exits_with_the_config_code() {
    let dir = TempDir::new().unwrap();
    let (_, o) = train_base(&dir, &BASE.replace("steps = 4", "steps = -4"), "neg");
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("problem.steps"));

    let (_, o) = train_base(&dir, &BASE.replace("[scheme]", "[scheme]\nlayers = 3"), "unknown");
    assert_eq!(code(&o), EXIT_CONFIG);

    assert_eq!(code(&run(&["train", "--bogus"])), EXIT_CONFIG);
    assert_eq!(code(&run(&["train", "--problem", "ex9", "--steps", "4"])), EXIT_CONFIG);
}

#[test]
fn evaluate_rejects_checkpoints_of_another_model() {
    let dir = TempDir::new().unwrap();
    let (out, o) = train_base(&dir, BASE, "run");
    assert_eq!(code(&o), EXIT_OK);
    let manifest = out.join("manifest.toml");
    let o = run(&["evaluate", "--config", manifest.to_str().unwrap(), "--scheme", "ldbsde"]);
    assert_eq!(code(&o), EXIT_CONFIG, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scheme"));

    let o = run(&["evaluate", "--config", manifest.to_str().unwrap(), "--dim", "2"]);
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn problem_without_closed_form_reports_na() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace("id = \"ex1\"", "id = \"ex4\"").replace("dim = 1", "dim = 2");
    let (out, o) = train_base(&dir, &text, "ex4");
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let t0 = csv_rows(&out.join("t0_errors.csv"));
    assert_eq!(&t0[0][4], "NA");
    assert_eq!(&t0[0][6], "NA");
    let reg = csv_rows(&out.join("regression.csv"));
    assert!(reg.iter().all(|r| &r[3] == "NA"));
}

#[test]
fn diverging_runs_are_reported_as_nc() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace("max_steps = 60", "max_steps = 60\ngamma0 = 1e200\ngamma_min = 1e199");
    let (out, o) = train_base(&dir, &text, "nc");
    assert_eq!(code(&o), EXIT_NC, "{}", String::from_utf8_lossy(&o.stderr));
    let t0 = csv_rows(&out.join("t0_errors.csv"));
    assert_eq!(&t0[0][4], "NC");
    assert_eq!(&t0[0][8], "NC");
    assert!(Manifest::load(&out).unwrap().has_nc());
}

#[test]
fn sweep_covers_the_product_and_matches_train() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--schemes",
        "ldbsde,ladbsde",
        "--steps-list",
        "4,8",
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("sweep.csv"));
    let cells: Vec<(String, String)> = rows.iter().map(|r| (r[0].to_string(), r[3].to_string())).collect();
    assert_eq!(
        cells,
        [("ldbsde", "4"), ("ldbsde", "8"), ("ladbsde", "4"), ("ladbsde", "8")].map(|(a, b)| (a.into(), b.into()))
    );
    assert_eq!(Manifest::load(&out).unwrap().cells.len(), 4);

    let (single, o) = train_base(&dir, BASE, "single");
    assert_eq!(code(&o), EXIT_OK);
    let cell = out.join("cells/ladbsde-d1-N4");
    for f in ["t0_errors.csv", "regression.csv", "loss.csv"] {
        assert_eq!(fs::read(cell.join(f)).unwrap(), fs::read(single.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_dumps_the_first_batch() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("paths");
    let o = run(&[
        "simulate",
        "--problem",
        "ex3",
        "--dim",
        "2",
        "--steps",
        "5",
        "--batch",
        "8",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let mut f = fs::File::open(out.join("paths/seed-4.bin")).unwrap();
    let (h, x) = read_path_dump(&mut f).unwrap();
    assert_eq!((h.samples, h.steps, h.dim, h.seed), (8, 5, 2, 4));
    assert_eq!(h.problem, "ex3");
    assert_eq!(x.len(), 8 * 6 * 2);
    assert_eq!(&x[..2], &[1.0, 0.5]);
}

#[test]
fn check_subcommand_passes() {
    let o = run(&["check"]);
    assert_eq!(code(&o), EXIT_OK);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}

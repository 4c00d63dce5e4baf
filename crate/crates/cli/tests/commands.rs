//! End-to-end subcommand behaviour on a synthetic MNIST-shaped dataset.

mod common;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use common::{hali, mnist_config_with, write_mnist_like};
use hali_cli::grid::GUTTER;
use hali_cli::report::SemisupReport;
use hali_cli::{read_pnm, RunManifest};

/// A three-step run shared by the checkpoint consumers.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
    run: PathBuf,
    stdout: String,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("mnist");
        std::fs::create_dir(&data).unwrap();
        write_mnist_like(&data, 260, 60);
        let config = dir.path().join("small.cfg");
        let text = mnist_config_with(&[
            ("train.steps", "3"),
            ("train.batch", "4"),
            ("train.labeled_batch", "4"),
            ("train.labels_per_class", "2"),
            ("train.train_images", "200"),
            ("train.eval_images", "16"),
            ("train.eval_every", "3"),
            ("train.checkpoint_every", "2"),
            ("train.recon_samples", "2"),
        ]);
        std::fs::write(&config, text).unwrap();
        let run = dir.path().join("run");
        let o = hali(&["train", "--config", s(&config), "--out", s(&run), "--data", s(&data)]);
        assert_eq!(o.code, 0, "{}", o.err);
        Fixture { _dir: dir, data, config, run, stdout: o.out }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_the_run_directory() {
    let f = fixture();
    for name in ["config.cfg", "manifest.txt", "metrics.csv", "final.hali", "semisup.txt", "checkpoints/step-000002.hali"] {
        assert!(f.run.join(name).is_file(), "{name}");
    }
    let cfg = hali::Config::load(f.run.join("config.cfg")).unwrap();
    assert_eq!(cfg.train.steps, 3);
    assert!(RunManifest::load(f.run.join("manifest.txt")).unwrap().matches(&cfg));
    let rows = hali::trainer::parse_metrics_csv(&std::fs::read_to_string(f.run.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(rows[2].eval.is_some() && rows[2].l_sup.is_some());
    let report = SemisupReport::parse(&std::fs::read_to_string(f.run.join("semisup.txt")).unwrap()).unwrap();
    assert_eq!((report.labels, report.total), (20, 60));
    assert!(f.stdout.contains("test_errors"));
}

#[test]
fn resuming_in_a_new_directory_reproduces_the_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = f.run.join("checkpoints/step-000002.hali");
    let o = hali(&["train", "--config", s(&f.config), "--resume", s(&ckpt), "--out", s(dir.path()), "--data", s(&f.data)]);
    assert_eq!(o.code, 0, "{}", o.err);
    for name in ["metrics.csv", "final.hali", "semisup.txt", "config.cfg"] {
        assert_eq!(std::fs::read(f.run.join(name)).unwrap(), std::fs::read(dir.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn eval_semisup_reports_the_error_count() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let o = hali(&["eval-semisup", "--checkpoint", s(&f.run.join("final.hali")), "--data", s(&f.data), "--out", s(out.path())]);
    assert_eq!(o.code, 0, "{}", o.err);
    let report = SemisupReport::parse(&o.out).unwrap();
    assert!(report.errors <= 60);
    assert_eq!(std::fs::read_to_string(f.run.join("semisup.txt")).unwrap(), o.out);
}

fn grid_dims(path: &Path) -> (usize, usize) {
    let p = read_pnm(path).unwrap();
    (p.width, p.height)
}

fn extent(cells: usize) -> usize {
    cells * 28 + (cells - 1) * GUTTER
}

#[test]
fn latent_commands_write_grids() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let ck = f.run.join("final.hali");
    let common = ["--checkpoint", s(&ck), "--data", s(&f.data), "--out", s(out.path()), "--count", "3"];
    let run = |cmd: &str, extra: &[&str]| {
        let args: Vec<&str> = std::iter::once(cmd).chain(common).chain(extra.iter().copied()).collect();
        let o = hali(&args);
        assert_eq!(o.code, 0, "{cmd}: {}", o.err);
        o.out
    };
    let text = run("reconstruct", &[]);
    assert!(text.contains("level 1") && text.contains("level 2"));
    assert_eq!(grid_dims(&out.path().join("reconstruct.pgm")), (extent(3), extent(3)));
    run("sweep", &["--level", "1", "--coord", "5"]);
    assert_eq!(grid_dims(&out.path().join("sweep-l1-c5.pgm")), (extent(7), extent(3)));
    run("sweep", &["--prior", "--coord", "63", "--sample", "--seed", "4"]);
    assert!(out.path().join("sweep-l2-c63.pgm").is_file());
    run("innovate", &["--coord", "2", "--alpha", "-1.5"]);
    assert_eq!(grid_dims(&out.path().join("innovate-c2.pgm")), (extent(3), extent(3)));
    run("inpaint", &["--mask-rect", "10,10,8,8", "--iterations", "3"]);
    assert_eq!(grid_dims(&out.path().join("inpaint.pgm")), (extent(5), extent(3)));
}

#[test]
fn invocation_errors_exit_with_two() {
    let f = fixture();
    let ck = f.run.join("final.hali");
    let data = s(&f.data);
    assert_eq!(hali(&["train", "--config", "/definitely/missing.cfg"]).code, 2);
    assert_eq!(hali(&["train", "--bogus"]).code, 2);
    assert_eq!(hali(&["frobnicate"]).code, 2);
    assert_eq!(hali(&[]).code, 2);
    assert_eq!(hali(&["verify-theory", "--trials", "0"]).code, 2);
    assert_eq!(hali(&["sweep", "--checkpoint", s(&ck), "--data", data, "--coord", "64"]).code, 2);
    assert_eq!(hali(&["sweep", "--checkpoint", s(&ck), "--data", data, "--level", "1", "--coord", "16"]).code, 2);
    assert_eq!(hali(&["inpaint", "--checkpoint", s(&ck), "--data", data, "--mask-rect", "1,2,3"]).code, 2);
    assert_eq!(hali(&["inpaint", "--checkpoint", s(&ck), "--data", data, "--mask-rect", "20,0,9,1"]).code, 2);
    assert_eq!(hali(&["reconstruct", "--checkpoint", s(&ck), "--data", data, "--count", "0"]).code, 2);
    let resume_seed = hali(&["train", "--config", s(&f.config), "--resume", s(&ck), "--seed", "99", "--data", data]);
    assert_eq!(resume_seed.code, 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.hali");
    let mut bytes = std::fs::read(f.run.join("final.hali")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&bad, bytes).unwrap();
    let o = hali(&["eval-semisup", "--checkpoint", s(&bad), "--data", s(&f.data)]);
    assert_eq!(o.code, 1);
    assert!(o.err.contains("checksum"), "{}", o.err);
    let missing = hali(&["eval-semisup", "--checkpoint", s(&f.run.join("final.hali")), "--data", s(dir.path())]);
    assert_eq!(missing.code, 1);
}

#[test]
fn help_and_version_exit_cleanly() {
    let o = hali(&["--help"]);
    assert_eq!(o.code, 0);
    for cmd in ["gradcheck", "verify-theory", "train", "eval-semisup", "reconstruct", "sweep", "innovate", "inpaint"] {
        assert!(o.out.contains(cmd), "{cmd}");
    }
    assert_eq!(hali(&["--version"]).code, 0);
}

#[test]
fn verify_theory_passes_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = hali(&["verify-theory", "--trials", "1000", "--seed", "7", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.out);
    let text = std::fs::read_to_string(dir.path().join("theory_report.txt")).unwrap();
    assert_eq!(text, o.out);
    let lines = hali_cli::report::parse_theory_report(&text).unwrap();
    assert!(lines.iter().all(|l| l.passed()));
}

#[test]
fn gradcheck_passes() {
    let o = hali(&["gradcheck"]);
    assert_eq!(o.code, 0, "{}", o.out);
    assert!(o.out.lines().count() >= 24);
    assert!(o.out.lines().all(|l| l.ends_with("\tpass")));
}

#[test]
fn toy_config_trains_on_the_ring() {
    let dir = tempfile::tempdir().unwrap();
    let o = hali(&["train", "--config", s(&common::configs_dir().join("toy-2d.cfg")), "--steps", "4", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.err);
    assert!(dir.path().join("final.hali").is_file());
    assert!(!dir.path().join("semisup.txt").exists());
}

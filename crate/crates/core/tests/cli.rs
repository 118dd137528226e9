use std::path::Path;
use std::process::{Command, Output};

use lanediff::harness::{fresh_model, RunConfig, RunMeta};
use lanediff::net::load_checkpoint;

fn lanediff<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanediff")).args(args).output().expect("binary runs")
}

fn ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> String {
    let out = lanediff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> i32 {
    lanediff(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_meta(path: &Path) -> RunMeta {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["--seed", "1", "--data-dir", p(d), "--train-count", "10", "--val-count", "3", "gen-data"]);
    }
    let manifest = |d: &Path| std::fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    let m: serde_json::Value = serde_json::from_slice(&manifest(&a)).unwrap();
    assert_eq!(m["entries"].as_array().unwrap().len(), 13);
    // Recount: one scene and one observation file per manifest entry.
    assert_eq!(std::fs::read_dir(a.join("scenes")).unwrap().count(), 13);
    assert_eq!(std::fs::read_dir(a.join("obs")).unwrap().count(), 13);
    assert_eq!(read_meta(&a.join("run-gen-data.json")).command, "gen-data");

    let args = ["--data-dir", p(&a), "--train-count", "4", "--val-count", "0", "gen-data"];
    assert_eq!(code(&args), 2);
    assert_eq!(manifest(&a), manifest(&b));
    ok(&[&args[..], &["--force"]].concat());
    assert_eq!(std::fs::read_dir(a.join("scenes")).unwrap().count(), 4);
}

#[test]
fn empty_dataset_is_a_valid_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let out = ok(&["--data-dir", p(&d), "--train-count", "0", "--val-count", "0", "gen-data"]);
    assert!(out.contains("wrote 0 scenes"));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
    assert!(m["entries"].as_array().unwrap().is_empty());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    assert_eq!(code(&["--data-dir", p(&d), "--eta", "1.5", "gen-data"]), 2);
    assert_eq!(code(&["--data-dir", p(&d), "--set", "sampler.nope=1", "gen-data"]), 2);
    assert_eq!(code(&["--data-dir", p(&d), "--set", "sampler.k", "gen-data"]), 2);
    assert_eq!(code(&["--data-dir", p(&d), "--difficulty", "brutal", "gen-data"]), 2);
    assert_eq!(code(&["--config", p(&tmp.path().join("missing.toml")), "gen-data"]), 1);
    // Missing dataset is an I/O error.
    assert_eq!(code(&["--data-dir", p(&d), "--out-dir", p(&tmp.path().join("o")), "train"]), 1);
    assert_eq!(code(&["ablate", "--axis", "gamma"]), 2);
    // clap usage errors
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn config_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let o = tmp.path().join("o");
    ok(&["--data-dir", p(&d), "--train-count", "2", "--val-count", "0", "gen-data"]);
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 5\n[sampler]\neta = 0.2\n").unwrap();
    ok(&[
        "--data-dir", p(&d), "--out-dir", p(&o), "--epochs", "0", "--eta", "0.7", "--tau", "0.3",
        "--set", "train.lr=0.001", "--config", p(&cfg), "--seed", "11", "train",
    ]);
    let meta = read_meta(&o.join("run-train.json"));
    // The file beats flags, an explicit --seed beats the file, and flags
    // the file does not mention survive.
    assert_eq!(meta.config.sampler.eta, 0.2);
    assert_eq!(meta.seed, 11);
    assert_eq!(meta.config.sampler.tau, 0.3);
    assert_eq!(meta.config.train.lr, 0.001);
    assert_eq!(meta.config.train.epochs, 0);
    assert_eq!(meta.config_sha256, meta.config.hash());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let o = tmp.path().join("o");
    ok(&["--seed", "4", "--data-dir", p(&d), "--train-count", "3", "--val-count", "1", "gen-data"]);
    ok(&["--seed", "4", "--data-dir", p(&d), "--out-dir", p(&o), "--epochs", "0", "train"]);
    let (_, model) = load_checkpoint(&o.join("model.ckpt")).unwrap();
    let cfg = RunConfig {
        seed: 4,
        ..RunConfig::default()
    };
    assert_eq!(model.checksum(), fresh_model(&cfg).unwrap().checksum());
}

/// gen-data, train, sample, evaluate, ablate and report on 50 easy scenes.
#[test]
fn small_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    let o = tmp.path().join("run");
    let base = ["--seed", "3", "--data-dir", p(&d), "--out-dir", p(&o), "--difficulty", "easy"];
    let with = |extra: &[&'static str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let start = std::time::Instant::now();
    ok(&with(&["--train-count", "50", "--val-count", "6", "gen-data"]));
    ok(&with(&["--epochs", "2", "train"]));
    for f in ["model.ckpt", "train_log.csv", "run-train.json"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(o.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss_line,loss_cls,lr,val_mAP"));

    ok(&with(&["-n", "4", "sample"]));
    let samples = o.join("samples");
    let scenes: Vec<_> = std::fs::read_dir(&samples).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(scenes.len(), 6);
    for s in &scenes {
        assert_eq!(std::fs::read_dir(s).unwrap().count(), 4);
    }

    let summary = ok(&with(&["-n", "4", "evaluate"]));
    assert!(summary.contains("mAP:") && summary.contains("AUC n=1"));
    let eval = o.join("eval");
    for f in ["ap.csv", "roc_n1.csv", "roc_n4.csv", "auc.csv", "visibility.json", "eval.json", "summary.txt", "run-evaluate.json"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let ap = std::fs::read_to_string(eval.join("ap.csv")).unwrap();
    assert_eq!(ap.lines().next(), Some("threshold,AP_ped,AP_div,AP_bound,mAP"));
    assert_eq!(ap.lines().count(), 5);

    let csv = ok(&with(&["ablate", "--axis", "k", "--values", "1,2"]));
    assert!(csv.starts_with("k,AP_ped,AP_div,AP_bound,mAP,ms_per_sample\n"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(o.join("ablation_k.csv")).unwrap(), csv);

    ok(&with(&["report"]));
    let md = std::fs::read_to_string(o.join("report.md")).unwrap();
    assert!(md.contains("## Evaluation") && md.contains("## Ablation: k"));
    let fig = std::fs::read(o.join("figure.pgm")).unwrap();
    assert!(fig.starts_with(b"P5"));
    assert!(start.elapsed().as_secs() < 15 * 60);

    // A checkpoint trained on one schedule is refused under another.
    assert_eq!(code(&with(&["--set", "sampler.T=500", "sample"])), 2);
}

#[test]
fn sampling_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    ok(&["--seed", "8", "--data-dir", p(&d), "--train-count", "4", "--val-count", "3", "gen-data"]);
    let mut trees = Vec::new();
    for tag in ["a", "b"] {
        let o = tmp.path().join(tag);
        let args = ["--seed", "8", "--data-dir", p(&d), "--out-dir", p(&o), "--epochs", "1", "-n", "1", "--eta", "0"];
        ok(&[&args[..], &["train"]].concat());
        ok(&[&args[..], &["sample"]].concat());
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for s in std::fs::read_dir(o.join("samples")).unwrap() {
            let s = s.unwrap().path();
            for f in std::fs::read_dir(&s).unwrap() {
                let f = f.unwrap().path();
                let name = f.strip_prefix(o.join("samples")).unwrap().display().to_string();
                files.push((name, std::fs::read(&f).unwrap()));
            }
        }
        files.sort();
        trees.push(files);
    }
    assert_eq!(trees[0].len(), 3);
    assert_eq!(trees[0], trees[1]);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> String {
    repo().join("data").join(name).to_string_lossy().into_owned()
}

fn modp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modp"))
        .args(args)
        .env_remove("MODP_OUTPUT_DIR")
        .output()
        .expect("spawn modp")
}

fn ok(args: &[&str]) -> Output {
    let out = modp(args);
    assert!(
        out.status.success(),
        "modp {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> Option<i32> {
    modp(args).status.code()
}

const FAST: [&str; 6] = ["--mse-epochs", "3", "--zval-epochs", "3", "--batch-size", "64"];

/// schema, encode and train on the toy table into `dir`.
fn prepare(dir: &Path, seed: &str) -> String {
    let o = dir.to_str().unwrap();
    ok(&["schema", "--table", &data("toy.csv"), "--directives", &data("toy_directives.toml"), "-o", o]);
    let schema = dir.join("schema.toml");
    ok(&["encode", "--table", &data("toy.csv"), "--schema", schema.to_str().unwrap(), "-o", o]);
    let m = dir.join("data.modp").to_string_lossy().into_owned();
    let mut args = vec!["train", "--data", &m, "-o", o, "--seed", seed];
    args.extend(FAST);
    ok(&args);
    m
}

#[test]
fn toy_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let m = prepare(dir.path(), "1");
    let ckpt = dir.path().join("model.ckpt");
    ok(&[
        "synthesize",
        "--data",
        &m,
        "--model",
        ckpt.to_str().unwrap(),
        "-o",
        o,
        "--instances",
        "2",
        "--rr-p",
        "0.5",
        "--fix-structural-zeros",
    ]);
    let synth = dir.path().join("synthetic.modp");
    let s = synth.to_str().unwrap();
    ok(&["evaluate", "--data", &m, "--synth", s, "-o", o]);
    ok(&["privacy", "--data", &m, "--synth", s, "-o", o, "--sample", "50"]);
    ok(&["bootstrap", "--data", &m, "-o", o]);
    for f in [
        "schema.toml",
        "data.modp",
        "model.ckpt",
        "loss_history.csv",
        "synthetic.modp",
        "synthetic.sidecar.csv",
        "metrics.csv",
        "metrics_plots/counts_scatter.csv",
        "metrics_plots/deviation_scatter.csv",
        "metrics_plots/fm_histogram.csv",
        "metrics_plots/fm_heatmap.csv",
        "privacy.csv",
        "privacy_plots/entropy_histogram.csv",
        "privacy_plots/multiplicity_scatter.csv",
        "privacy_plots/effective_multiplicity_histogram.csv",
        "privacy_plots/causal_rank_cdf.csv",
        "bootstrap.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# modp evaluate seed=0\n"));
    assert!(metrics.contains("[summary]"));
    let privacy = fs::read_to_string(dir.path().join("privacy.csv")).unwrap();
    assert_eq!(privacy.lines().count(), 2 + 50);
    let history = fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    assert!(history.starts_with("# modp train seed=1\nstep,epoch,loss_kind,loss\n"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = dir.to_str().unwrap();
        let m = prepare(dir, "9");
        let ckpt = dir.join("model.ckpt");
        ok(&["synthesize", "--data", &m, "--model", ckpt.to_str().unwrap(), "-o", o, "--seed", "9", "--instances", "2"]);
        let s = dir.join("synthetic.modp");
        ok(&["evaluate", "--data", &m, "--synth", s.to_str().unwrap(), "-o", o]);
        ok(&["privacy", "--data", &m, "--synth", s.to_str().unwrap(), "-o", o, "--seed", "9"]);
    }
    for f in ["model.ckpt", "synthetic.modp", "synthetic.sidecar.csv", "metrics.csv", "privacy.csv", "loss_history.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn mismatched_blocks_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let m = prepare(dir.path(), "0");
    let other = tempfile::tempdir().unwrap();
    let oo = other.path().to_str().unwrap();
    ok(&["testbed", "--spec", &data("independent.toml"), "-o", oo]);
    let table = other.path().join("testbed.csv");
    let schema = other.path().join("testbed_schema.toml");
    ok(&["encode", "--table", table.to_str().unwrap(), "--schema", schema.to_str().unwrap(), "-o", oo]);
    let wrong = other.path().join("data.modp");
    assert_eq!(code(&["evaluate", "--data", &m, "--synth", wrong.to_str().unwrap(), "-o", o]), Some(2));
    let ckpt = dir.path().join("model.ckpt");
    assert_eq!(
        code(&["synthesize", "--data", wrong.to_str().unwrap(), "--model", ckpt.to_str().unwrap(), "-o", o]),
        Some(2)
    );
    // a schema file is not a matrix
    assert_eq!(code(&["bootstrap", "--data", schema.to_str().unwrap(), "-o", o]), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    assert_eq!(code(&["train", "--bogus"]), Some(1));
    assert_eq!(code(&[]), Some(1));
    assert_eq!(code(&["train", "-o", o]), Some(1));
    assert_eq!(code(&["train", "--data", "/no/such/matrix", "-o", o]), Some(1));
    let m = prepare(dir.path(), "0");
    assert_eq!(code(&["train", "--data", &m, "-o", o, "--batch-size", "0"]), Some(1));
    assert_eq!(code(&["train", "--data", &m, "-o", o, "--lr", "-1"]), Some(1));
    assert_eq!(code(&["synthesize", "--data", &m, "--model", &m, "-o", o, "--instances", "3"]), Some(1));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "learning_rate = 1\n").unwrap();
    assert_eq!(code(&["bootstrap", "--data", &m, "-o", o, "--config", bad.to_str().unwrap()]), Some(1));
    assert_eq!(code(&["--help"]), Some(0));
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let m = prepare(dir.path(), "0");
    let mut args = vec!["train", "--data", &m, "-o", o, "--lr", "1e308"];
    args.extend(FAST);
    assert_eq!(code(&args), Some(3));
}

#[test]
fn config_file_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let m = prepare(dir.path(), "0");
    let cfg = dir.path().join("run.toml");
    let env_dir = dir.path().join("from_env");
    let file_dir = dir.path().join("from_file");
    fs::write(
        &cfg,
        format!(
            "seed = 5\noutput_dir = \"{}\"\n[paths]\ndata = \"{m}\"\n[metrics]\npseudocount = 0.25\n",
            file_dir.display()
        ),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(&["bootstrap", "--config", c]);
    let text = fs::read_to_string(file_dir.join("bootstrap.csv")).unwrap();
    assert!(text.starts_with("# modp bootstrap seed=5\n"));
    assert!(text.contains("# c=0.25\n"), "{text}");

    let out = Command::new(env!("CARGO_BIN_EXE_modp"))
        .args(["bootstrap", "--config", c, "--seed", "6"])
        .env("MODP_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(env_dir.join("bootstrap.csv")).unwrap();
    assert!(text.starts_with("# modp bootstrap seed=6\n"));
}

#[test]
fn testbed_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    ok(&["testbed", "--spec", &data("testbed.toml"), "-o", o, "--seed", "2"]);
    let table = fs::read_to_string(dir.path().join("testbed.csv")).unwrap();
    assert_eq!(table.lines().count(), 50_001);
    assert!(table.starts_with("group,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11\n"));
    let truth = fs::read_to_string(dir.path().join("testbed_truth.csv")).unwrap();
    assert!(truth.starts_with("# modp testbed seed=2\n# rows=50000 subpopulations=3\n"));
    let schema = dir.path().join("testbed_schema.toml");
    ok(&["encode", "--table", dir.path().join("testbed.csv").to_str().unwrap(), "--schema", schema.to_str().unwrap(), "-o", o]);

    let cyclic = dir.path().join("cyclic.toml");
    fs::write(
        &cyclic,
        "rows = 10\n[[questions]]\nname = \"a\"\ncategories = 2\n[[questions]]\nname = \"b\"\ncategories = 2\n\
         [[subpopulations]]\nweight = 1\nparents = { a = \"b\", b = \"a\" }\n",
    )
    .unwrap();
    let out = modp(&["testbed", "--spec", cyclic.to_str().unwrap(), "-o", o]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cycle"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn pje(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pje"))
        .args(args)
        .env_remove("PJE_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().skip(1).filter(|l| !l.is_empty()).count()
}

fn write_config(dir: &TempDir, text: &str) -> std::path::PathBuf {
    let path = dir.path().join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

const TINY_SWEEP: &str = "
[solver]
cells_per_cube = 4
max_iters = 20
coarse_levels = 1
";

#[test]
fn build_density_writes_data_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = pje(&["build-density", "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["density.json", "density_samples.csv", "discrepancy.csv", "config.toml", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(data_rows(&out.join("discrepancy.csv")), 485);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "build-density");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn depth_zero_has_only_root_pairs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "[density]\ndepth = 0\n");
    let out = tmp.path().join("run");
    let o = pje(&["build-density", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert!(o.status.success());
    assert_eq!(data_rows(&out.join("discrepancy.csv")), 5);
}

#[test]
fn invalid_hierarchy_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "[hierarchy]\nd = 2\nK = 1\nM = 4\nk_max = 2\n");
    let o = pje(&["build-density", "--config", path_arg(&cfg), "--out", path_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("absent.toml");
    let o = pje(&["sweep", "--config", path_arg(&cfg), "--out", path_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_suites_pass_and_unknown_names_fail() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "[fields]\ntrials = 20\n");
    for suite in ["stokes", "discrepancy", "average-det"] {
        let out = tmp.path().join(suite);
        let o = pje(&["verify", "--suite", suite, "--config", path_arg(&cfg), "--out", path_arg(&out)]);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = out.join(format!("verify_{suite}.csv"));
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{suite}");
    }
    let o = pje(&["verify", "--suite", "nope", "--out", path_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

fn classification_statuses(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join("classification.csv")).unwrap();
    text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
}

#[test]
fn classify_identity_and_affine_embeddings() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("identity");
    assert!(pje(&["classify", "--out", path_arg(&out)]).status.success());
    let statuses = classification_statuses(&out);
    assert!(!statuses.is_empty());
    assert!(statuses.iter().all(|s| s == "property1"));

    let cfg = write_config(&tmp, "[dichotomy]\nembedding = \"affine\"\n");
    let out = tmp.path().join("affine");
    assert!(pje(&["classify", "--config", path_arg(&cfg), "--out", path_arg(&out)]).status.success());
    assert!(classification_statuses(&out).iter().all(|s| s != "property2" && s != "both"));
}

#[test]
fn classify_random_sum_persists_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "seed = 3\n[dichotomy]\nembedding = \"random-sum\"\ngrid_cells = 32\n");
    let out = tmp.path().join("rs");
    let o = pje(&["classify", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data_rows(&out.join("classification.csv")) > 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["extra"]["rectangles"].as_u64().unwrap() > 0);
}

#[test]
fn single_cell_sweep() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, &format!("{TINY_SWEEP}[sweep]\nbudgets = [1.0]\ndepths = [1]\n"));
    let out = tmp.path().join("sweep");
    let o = pje(&["sweep", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&out.join("sweep.csv")), 1);
}

#[test]
fn sweep_is_deterministic_and_indexable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, TINY_SWEEP);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(pje(&["sweep", "--config", path_arg(&cfg), "--out", path_arg(&a)]).status.success());
    assert!(pje(&["sweep", "--config", path_arg(&cfg), "--threads", "1", "--out", path_arg(&b)]).status.success());
    let first = fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(data_rows(&a.join("sweep.csv")), 12);

    let o = pje(&["report-data", "--out", path_arg(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let index: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report_index.json")).unwrap()).unwrap();
    assert_eq!(index["files"][0]["schema"], "sweep");
    assert_eq!(index["files"][0]["rows"], 12);
}

#[test]
fn report_data_rejects_a_bad_header() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("sweep.csv"), "k0,S\n0,1\n").unwrap();
    let o = pje(&["report-data", "--out", path_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn out_root_selects_a_directory_per_command() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "[density]\ndepth = 0\n");
    let o = Command::new(env!("CARGO_BIN_EXE_pje"))
        .args(["build-density", "--config", path_arg(&cfg)])
        .env("PJE_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("build-density").join("discrepancy.csv").exists());
}

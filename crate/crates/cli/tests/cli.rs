use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sofic-spectra"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const DIAGNOSTICS: &str = r#"{
  "name": "diag", "pipeline": "sofic-diagnostics",
  "group": {"kind": "lattice", "dim": 1},
  "sofic": {"family": "torus", "sizes": [8, 16, 32]},
  "radii": {"cylinder": 3}
}"#;

#[test]
fn torus_diagnostics_are_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "diag", DIAGNOSTICS);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("diagnostics.csv"));
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r[1], "3");
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
    }
    let m = manifest(&out);
    assert_eq!(m["invariants_passed"], true);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

const LAPLACIAN: &str = r#"{
  "name": "lap", "pipeline": "weak-convergence",
  "group": {"kind": "lattice", "dim": 1},
  "sofic": {"family": "torus", "sizes": [64, 256, 1024]},
  "operator": {"kind": "laplacian"},
  "beta_grid": {"lo": -4.5, "hi": 0.5, "points": 101},
  "weak_convergence": {"k_max": 4, "reference": "lattice", "power_check": true}
}"#;

#[test]
fn laplacian_moments_and_distances() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lap", LAPLACIAN);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("moments.csv"));
    let k2: Vec<_> = rows.iter().filter(|r| r[1] == "2").collect();
    assert_eq!(k2.len(), 3);
    for r in k2 {
        assert_eq!(r[2].parse::<f64>().unwrap(), 6.0);
        assert_eq!(r[4].parse::<f64>().unwrap(), 6.0);
        assert_eq!(r[6], "true");
    }
    let d: Vec<f64> = csv_rows(&out.join("kolmogorov.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    assert!(out.join("plot.gp").exists());
    for n in [64, 256, 1024] {
        assert!(out.join(format!("ids_n{n}.csv")).exists());
    }

    let report = bin()
        .args(["compare", "--json"])
        .arg(out.join("manifest.json"))
        .output()
        .unwrap();
    assert!(report.status.success());
    let report: Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(report["trends"][0]["distance_decreasing"], true);
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
      "name": "atoms", "pipeline": "luck-atoms",
      "group": {"kind": "lattice", "dim": 1},
      "sofic": {"family": "torus", "sizes": [50, 100]},
      "measure": {"kind": "iid", "weights": [0.7, 0.3]},
      "operator": {"kind": "diagonal", "potential": ["0", "1"]},
      "samples": 6, "seed": 42,
      "luck_atoms": {"alphas": ["0", "1", "1/2"]}
    }"#;
    let cfg = write_config(tmp.path(), "atoms", body);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&cfg, &a, &["--threads", "1"]).status.success());
    assert!(run(&a.join("manifest.json"), &b, &["--threads", "3"]).status.success());
    let ma = manifest(&a);
    let mb = manifest(&b);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    for f in ma["outputs"].as_array().unwrap() {
        let name = f["file"].as_str().unwrap();
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }

    let same = bin()
        .args(["compare", "--json"])
        .arg(a.join("manifest.json"))
        .arg(b.join("manifest.json"))
        .output()
        .unwrap();
    assert!(same.status.success());
    let report: Value = serde_json::from_slice(&same.stdout).unwrap();
    let pairs = report["pair_distances"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert!(pairs.iter().all(|p| p["distance"] == 0.0));
}

#[test]
fn bernoulli_atoms_match_weights() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
      "name": "bern", "pipeline": "luck-atoms",
      "group": {"kind": "lattice", "dim": 1},
      "sofic": {"family": "torus", "sizes": [400]},
      "measure": {"kind": "iid", "weights": [0.7, 0.3]},
      "operator": {"kind": "diagonal", "potential": ["0", "1"]},
      "samples": 30, "seed": 9,
      "luck_atoms": {"alphas": ["0", "1"]}
    }"#;
    let cfg = write_config(tmp.path(), "bern", body);
    let out = tmp.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let sd = (0.21f64 / (400.0 * 30.0)).sqrt();
    for r in csv_rows(&out.join("atoms.csv")) {
        let p = if r[1] == "0" { 0.7 } else { 0.3 };
        let m: f64 = r[2].parse().unwrap();
        assert!((m - p).abs() <= 4.0 * sd, "alpha {} mass {m}", r[1]);
    }
}

#[test]
fn invalid_config_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad", &DIAGNOSTICS.replace("[8, 16, 32]", "[]"));
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("size schedule is empty"));
}

#[test]
fn failed_invariant_sets_exit_code() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
      "name": "strict", "pipeline": "weak-convergence",
      "group": {"kind": "lattice", "dim": 1},
      "sofic": {"family": "torus", "sizes": [64]},
      "measure": {"kind": "iid", "weights": [0.5, 0.5]},
      "operator": {"kind": "schrodinger", "potential": ["0", "3"]},
      "samples": 4,
      "weak_convergence": {"k_max": 2, "sigma_tolerance": 0.0}
    }"#;
    let cfg = write_config(tmp.path(), "strict", body);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["invariants_passed"], false);
}

#[test]
fn compare_rejects_different_models() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c1 = write_config(tmp.path(), "one", DIAGNOSTICS);
    let c2 = write_config(
        tmp.path(),
        "two",
        &DIAGNOSTICS.replace("\"radii\"", "\"operator\": {\"kind\": \"adjacency\"}, \"radii\""),
    );
    assert!(run(&c1, &a, &[]).status.success());
    assert!(run(&c2, &b, &[]).status.success());
    let o = bin()
        .arg("compare")
        .arg(a.join("manifest.json"))
        .arg(b.join("manifest.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model hash mismatch"));
}

#[test]
fn shipped_examples_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            sofic_spectra::experiment::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}

#[test]
fn monotone_rejects_vanishing_diagonal() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
      "name": "adj", "pipeline": "monotone",
      "group": {"kind": "lattice", "dim": 1},
      "sofic": {"family": "torus", "sizes": [16]},
      "operator": {"kind": "adjacency"},
      "beta_grid": {"lo": -3, "hi": 3, "points": 11}
    }"#;
    let cfg = write_config(tmp.path(), "adj", body);
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diagonal vanishes"));
}

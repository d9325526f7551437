use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const POTENTIALS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/potentials");

fn metastable(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metastable"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("METASTABLE_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pot(name: &str) -> PathBuf {
    Path::new(POTENTIALS).join(format!("{name}.pot"))
}

#[test]
fn missing_potential_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = metastable(dir.path(), &["--potential", "nowhere/absent.pot", "-n", "10", "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/absent.pot"), "{}", stderr(&o));
}

#[test]
fn overlapping_sets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = metastable(dir.path(), &["--builtin", "double_well", "-n", "20", "capacity", "--a", "0", "--b", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sets must be disjoint"), "{}", stderr(&o));
}

#[test]
fn small_lattice_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = metastable(dir.path(), &["--builtin", "double_well", "-n", "3", "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 4"), "{}", stderr(&o));
}

#[test]
fn verify_on_a_builtin_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = metastable(dir.path(), &["--builtin", "double_well", "verify", "--criteria", "1,8,9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains(" PASS ")).count(), 3, "{stdout}");
    assert!(dir.path().join("verify.json").is_file());
}

#[test]
fn analyze_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = pot("double_well");
    let o = metastable(dir.path(), &["--potential", p.to_str().unwrap(), "-n", "20,40", "analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("analyze.json")).unwrap()).unwrap();
    assert_eq!(v["lattices"].as_array().unwrap().len(), 2);
    assert_eq!(v["lattices"][0]["wells"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("analyze.meta.json").is_file());
}

#[test]
fn analyze_accepts_a_potential_without_saddles() {
    let dir = tempfile::tempdir().unwrap();
    let o = metastable(dir.path(), &["--builtin", "quadratic_well", "-n", "10", "analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("analyze.json")).unwrap()).unwrap();
    assert!(v["hierarchy"].is_null());
}

#[test]
fn capacity_csv_has_one_row_per_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let o = metastable(dir.path(), &["--builtin", "double_well", "-n", "16,24,32", "capacity"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("capacity.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("n,kappa_exact"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn simulation_repeats_for_a_fixed_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--builtin", "walled_four_well", "-n", "12", "simulate", "--delta", "0.3", "--replicas", "120", "--seed", "3",
        "--records",
    ];
    for d in [&a, &b] {
        let o = metastable(d.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "simulate.json"), read(&b, "simulate.json"));
    assert_eq!(read(&a, "simulate_N12.csv"), read(&b, "simulate_N12.csv"));
    let csv = String::from_utf8(read(&a, "simulate_N12.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"potential": "{}", "n": [10, 20], "capacity": {{"a": [0]}}}}"#, pot("double_well").display()),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = metastable(&out, &["--config", cfg.to_str().unwrap(), "-n", "30", "capacity"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("capacity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("30,"));
}

#[test]
fn config_potential_resolves_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(pot("double_well"), dir.path().join("dw.pot")).unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"potential": "dw.pot", "n": [12]}"#).unwrap();
    let o = metastable(&dir.path().join("out"), &["--config", cfg.to_str().unwrap(), "analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"builtin": "double_well", "n": [10], "sovler": "cg"}"#).unwrap();
    let o = metastable(dir.path(), &["--config", cfg.to_str().unwrap(), "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sovler"), "{}", stderr(&o));
}

#[test]
fn hypothesis_violation_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("inverted.pot");
    std::fs::write(&p, "dim = 1\ndomain = [-1,1]\nF = -(x1^2 - 0.25)^2\n").unwrap();
    let o = metastable(&dir.path().join("out"), &["--potential", p.to_str().unwrap(), "-n", "20", "reduce"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

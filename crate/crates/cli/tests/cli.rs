use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn advsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let file = dir.join("scenario.json");
    std::fs::write(&file, body).unwrap();
    file
}

fn desk_cube(dir: &Path, steps: usize, iterations: usize) -> PathBuf {
    let mesh = scenarios().join("desk_cube.mesh");
    write_scenario(
        dir,
        &format!(
            r#"{{ "mesh": {mesh:?}, "translation": [0, 0, 0.08], "velocity": [0.5, 0, -1],
                "half_spaces": [[0.2, 0, 1, 0]], "steps": {steps},
                "materials": {{ "young": 1e10, "poisson": 0.3, "density": 2500 }},
                "attack": {{ "iterations": {iterations} }} }}"#
        ),
    )
}

#[test]
fn free_fall_writes_every_state() {
    let out = TempDir::new().unwrap();
    let config = scenarios().join("free_fall.json");
    let run = advsim(&["forward", "--config", path(&config), "--output", path(out.path())]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    // header plus (10 steps + initial state) x 4 vertices
    assert_eq!(csv.lines().count(), 1 + 11 * 4);
    assert!(out.path().join("final_state.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "forward");
    assert_eq!(manifest["resolved_config"]["h"], 0.01);
    assert_eq!(manifest["inputs"]["mesh"].as_str().unwrap().len(), 64);
}

#[test]
fn penetrating_start_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mesh = scenarios().join("single_tet.mesh");
    let config = write_scenario(
        dir.path(),
        &format!(
            r#"{{ "mesh": {mesh:?}, "translation": [0, 0, -0.5], "half_spaces": [[0, 0, 1, 0]], "steps": 2,
                "materials": {{ "young": 1e10, "poisson": 0.3, "density": 1000 }} }}"#
        ),
    );
    let run = advsim(&[
        "forward",
        "--config",
        path(&config),
        "--output",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(run.status.code(), Some(1));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("vertex 0") && err.contains("half-space 0"), "{err}");
}

#[test]
fn forward_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = desk_cube(dir.path(), 8, 0);
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1")] {
        let out = dir.path().join(name);
        let run = advsim(&[
            "forward",
            "--config",
            path(&config),
            "--output",
            path(&out),
            "--threads",
            threads,
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        outputs.push(std::fs::read(out.join("trajectory.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

fn moments_row(args: &[&str]) -> Vec<f64> {
    let run = advsim(args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let row = stdout.lines().nth(1).unwrap();
    row.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect()
}

#[test]
fn moments_of_a_uniform_cube() {
    let dir = TempDir::new().unwrap();
    let mesh = scenarios().join("desk_cube.mesh");
    let single = dir.path().join("single.json");
    let double = dir.path().join("double.json");
    std::fs::write(&single, r#"{ "young": 1e10, "poisson": 0.3, "density": 2000 }"#).unwrap();
    std::fs::write(&double, r#"{ "young": 1e10, "poisson": 0.3, "density": 4000 }"#).unwrap();
    let out = dir.path().join("out");
    let a = moments_row(&[
        "moments",
        "--mesh",
        path(&mesh),
        "--materials",
        path(&single),
        "--output",
        path(&out),
    ]);
    let b = moments_row(&["moments", "--mesh", path(&mesh), "--materials", path(&double)]);
    assert_eq!(a.len(), 10);
    // 0.1 m cube centered at the origin
    assert!((a[0] - 2.0).abs() < 1e-3);
    for m1 in &a[1..4] {
        assert!(m1.abs() < 1e-12 * a[0]);
    }
    for (x, y) in a.iter().zip(&b) {
        // the table keeps four significant digits; round-off entries stay round-off
        assert!((y - 2.0 * x).abs() <= 1e-3 * x.abs() + 1e-12 * a[0], "{x} {y}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("moments.json")).unwrap()).unwrap();
    assert_eq!(json["formatted"]["m0"], "2.000e+00");
}

#[test]
fn attack_then_compare() {
    let dir = TempDir::new().unwrap();
    let config = desk_cube(dir.path(), 6, 0);
    let attack_dir = dir.path().join("attack");
    let run = advsim(&[
        "attack",
        "--config",
        path(&config),
        "--output",
        path(&attack_dir),
        "--seed",
        "4",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let history = std::fs::read_to_string(attack_dir.join("cost_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let manifest = std::fs::read_to_string(attack_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4"));

    // the untouched reference is indistinguishable from itself
    let same = advsim(&[
        "compare",
        "--config",
        path(&config),
        "--attack-dir",
        path(&attack_dir),
        "--output",
        path(&dir.path().join("same")),
    ]);
    assert!(same.status.success(), "{}", String::from_utf8_lossy(&same.stderr));
    assert!(String::from_utf8_lossy(&same.stdout).contains("PASS"));
    assert!(dir.path().join("same/com_divergence.csv").exists());
    assert!(dir.path().join("same/rigid_adversarial.csv").exists());

    let heavy = dir.path().join("heavy.json");
    std::fs::write(&heavy, r#"{ "young": 1e10, "poisson": 0.3, "density": 5000 }"#).unwrap();
    let differ = advsim(&[
        "compare",
        "--config",
        path(&config),
        "--attack-dir",
        path(&attack_dir),
        "--adversarial-materials",
        path(&heavy),
        "--output",
        path(&dir.path().join("differ")),
    ]);
    assert_eq!(differ.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&differ.stdout).contains("FAIL"));
}

#[test]
fn compare_rejects_mismatched_trajectories() {
    let dir = TempDir::new().unwrap();
    let config = desk_cube(dir.path(), 3, 0);
    let free_fall = dir.path().join("ff");
    let run = advsim(&[
        "forward",
        "--config",
        path(&scenarios().join("free_fall.json")),
        "--output",
        path(&free_fall),
    ]);
    assert!(run.status.success());
    let traj = free_fall.join("trajectory.csv");
    let materials = dir.path().join("m.json");
    std::fs::write(&materials, r#"{ "young": 1e10, "poisson": 0.3, "density": 2500 }"#).unwrap();
    let run = advsim(&[
        "compare",
        "--config",
        path(&config),
        "--reference",
        path(&traj),
        "--adversarial",
        path(&traj),
        "--reference-materials",
        path(&materials),
        "--adversarial-materials",
        path(&materials),
        "--output",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("vertices"));
}

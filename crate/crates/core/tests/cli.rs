use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"experiment = "example1"
seed = 9

[physics]
potentials = ["E1"]
epsilons = [0.0256]

[sampling]
samples = [30, 120]
repetitions = 3
reference_samples = 3000
"#;

fn fgs(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fgs")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_a_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("bundle");
    let o = fgs(&["run", s(&cfg), "--out", s(&out), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.copy", "manifest.json", "sampling_error_ES.csv", "slopes.csv", "timing.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let field = fgs::field_io::load_field(&out.join("fields/reference_E1_eps0.0256.fgsf")).unwrap();
    assert!((field.l2_norm() - 1.0).abs() < 0.1);
    let csv = fs::read_to_string(out.join("sampling_error_ES.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("sampling_error_ES,E1,0.0256,30,1,3,"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["threads"], 2);
}

#[test]
fn seed_flag_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let table = |args: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut all = vec!["run", s(&cfg), "--out", s(&out)];
        all.extend_from_slice(args);
        assert!(fgs(&all).status.success());
        fs::read(out.join("sampling_error_ES.csv")).unwrap()
    };
    let a = table(&["--threads", "1"], "a");
    let b = table(&["--threads", "3"], "b");
    let c = table(&["--seed", "10"], "c");
    let d = table(&["--seed", "9"], "d");
    assert_eq!(a, b);
    assert_eq!(a, d);
    assert_ne!(a, c);
}

#[test]
fn malformed_config_fails_without_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "experiment = \"example1\"\n[sampling]\nsamples = [10, \"x\"]\n").unwrap();
    let out = dir.path().join("bundle");
    let o = fgs(&["run", s(&cfg), "--out", s(&out)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);

    let missing = fgs(&["run", s(&dir.path().join("nope.toml")), "--out", s(&out)]);
    assert!(!missing.status.success());
    assert!(!out.exists());
}

#[test]
fn stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, CONFIG).unwrap();
    for (stage, file) in [
        ("sample", "samples.csv"),
        ("propagate", "trajectories.csv"),
        ("reconstruct", "field.fgsf"),
        ("observe", "observables.csv"),
    ] {
        let out = dir.path().join(stage);
        let o = fgs(&[stage, s(&cfg), "--out", s(&out), "--seed", "3"]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).is_file(), "{stage}");
        assert!(out.join("manifest.json").is_file());
    }
    let samples = fs::read_to_string(dir.path().join("sample/samples.csv")).unwrap();
    let traj = fs::read_to_string(dir.path().join("propagate/trajectories.csv")).unwrap();
    assert_eq!(samples.lines().count(), 31);
    assert_eq!(traj.lines().count(), 31);
    assert!(traj.lines().nth(1).unwrap().starts_with("0,0.5,"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ksgs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksgs")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn steady_writes_profile_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = ksgs(dir.path(), &["steady", "--m", "2", "--mass", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("steady_m2_M1.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("r,theta,rho"));
    let side = json(&dir.path().join("steady_m2_M1.json"));
    let r = side["R"].as_f64().unwrap();
    assert!((r - 3.400937).abs() < 1e-5, "R = {r}");
    assert!(side["residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn support_radius_doubles_for_cubic_exponent() {
    let dir = tempfile::tempdir().unwrap();
    for mass in ["1", "16"] {
        assert_eq!(ksgs(dir.path(), &["steady", "--m", "3", "--mass", mass]).status.code(), Some(0));
    }
    let r1 = json(&dir.path().join("steady_m3_M1.json"))["R"].as_f64().unwrap();
    let r16 = json(&dir.path().join("steady_m3_M16.json"))["R"].as_f64().unwrap();
    assert!((r16 / r1 - 2.0).abs() < 1e-4, "ratio {}", r16 / r1);
}

#[test]
fn bad_arguments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ksgs(dir.path(), &["steady", "--m", "1", "--mass", "1"]).status.code(), Some(1));
    assert_eq!(ksgs(dir.path(), &["steady", "--m", "0.5", "--mass", "1"]).status.code(), Some(1));
    assert_eq!(ksgs(dir.path(), &["steady", "--m", "2", "--mass", "-1"]).status.code(), Some(1));
    assert_eq!(ksgs(dir.path(), &["verify", "--suite", "nonsense"]).status.code(), Some(1));
    assert_eq!(ksgs(dir.path(), &["evolve", "--init", "sideways", "--m", "2"]).status.code(), Some(1));
    assert_eq!(ksgs(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(ksgs(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_profiles_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, "r,value\n0,1\nzero,2\n").unwrap();
    for f in [&empty, &garbled, &dir.path().join("missing.csv")] {
        let out = ksgs(dir.path(), &["energy", "--profile", f.to_str().unwrap(), "--m", "2"]);
        assert_eq!(out.status.code(), Some(1), "{}", f.display());
    }
}

#[test]
fn energy_of_a_uniform_disk() {
    let dir = tempfile::tempdir().unwrap();
    // rho = 1/pi on the unit disk, zero outside
    let n = 4096;
    let r_max = 2.0;
    let mut text = String::from("r,value\n");
    for i in 0..=n {
        let r = r_max * i as f64 / n as f64;
        let v = if r <= 1.0 { 1.0 / std::f64::consts::PI } else { 0.0 };
        text.push_str(&format!("{r},{v}\n"));
    }
    let path = dir.path().join("disk.csv");
    fs::write(&path, text).unwrap();
    let out = ksgs(dir.path(), &["energy", "--profile", path.to_str().unwrap(), "--m", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("disk_energy.json"));
    let pi = std::f64::consts::PI;
    // H = int rho^2 = 1/pi; the mean of log|x - y| over the unit disk is -1/4,
    // so W = -1/(16 pi)
    let h = report["H"].as_f64().unwrap();
    let w = report["W"].as_f64().unwrap();
    assert!((h - 1.0 / pi).abs() < 2e-3 / pi, "H = {h}");
    assert!((w + 1.0 / (16.0 * pi)).abs() < 2e-3 / (16.0 * pi), "W = {w}");
}

#[test]
fn energy_reproduces_the_steady_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ksgs(dir.path(), &["steady", "--m", "2", "--mass", "1"]).status.code(), Some(0));
    let profile = dir.path().join("steady_m2_M1.csv");
    let out = ksgs(dir.path(), &["energy", "--profile", profile.to_str().unwrap(), "--m", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("steady_m2_M1_energy.json"));
    assert_eq!(report["multiplier_check"], "PASS");
    assert!(report["residual"]["inner"].as_f64().unwrap() < 1e-6);
}

#[test]
fn verify_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = ksgs(dir.path(), &["verify", "--suite", "rearrangement", "--seed", "11"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let name = "verify_rearrangement_seed11.json";
    let first = fs::read(a.path().join(name)).unwrap();
    assert_eq!(first, fs::read(b.path().join(name)).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["seed"], 11);
}

#[test]
fn short_evolution_from_a_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = ksgs(
        dir.path(),
        &["evolve", "--init", "disk:1", "--m", "2", "--T", "2", "--checkpoints", "4", "--nodes", "301"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for k in 0..4 {
        let csv = fs::read_to_string(dir.path().join(format!("checkpoint_{k:03}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("r,M,rho"));
    }
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["checkpoints"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["init"], "disk:1");
    assert!(manifest["comparison"].is_null());
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ksgs"))
        .env("KSGS_OUT_DIR", dir.path())
        .args(["steady", "--m", "2", "--mass", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("steady_m2_M2.csv").exists());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn planar() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/planar2d.toml")
}

fn mrtherm(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrtherm"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn variant(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(planar()).unwrap();
    assert!(text.contains(from));
    let path = dir.join("variant.toml");
    fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = mrtherm(&["run", "--methods", "maxvar,rectilinear", "--lines", "0,6"], &planar(), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.csv",
        "timings.csv",
        "summary.toml",
        "truth_temperature.f64",
        "truth_temperature.toml",
        "measured_kspace.f64",
        "ensemble.csv",
        "variance_map.f64",
        "patterns/maxvar_6.csv",
        "posteriors/rectilinear_6.csv",
        "recon/maxvar_6.f64",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("method,lines,seed,"));
    assert!(!report.contains("wall"));
    // 2 methods x 2 counts x 3 seeds
    assert_eq!(report.lines().count(), 1 + 12);

    let r = Command::new(env!("CARGO_BIN_EXE_mrtherm"))
        .args(["report", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(r.status.success());
    assert!(out.join("summary.txt").exists());
    assert!(String::from_utf8_lossy(&r.stdout).contains("rectilinear"));
}

#[test]
fn master_seed_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(mrtherm(&["sweep", "--lines", "5", "--seed", "1"], &planar(), &a).status.success());
    assert!(mrtherm(&["sweep", "--lines", "5", "--seed", "2"], &planar(), &b).status.success());
    let ra = fs::read_to_string(a.join("report.csv")).unwrap();
    let rb = fs::read_to_string(b.join("report.csv")).unwrap();
    assert_ne!(ra, rb);
}

#[test]
fn pattern_and_forward_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = mrtherm(&["pattern", "--lines", "8"], &planar(), &out);
    assert!(o.status.success());
    for m in ["maxvar", "rectilinear", "poisson"] {
        let csv = fs::read_to_string(out.join(format!("pattern_{m}_8.csv"))).unwrap();
        let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 1 + 8, "{m}");
    }
    let f = mrtherm(&["forward", "--mu", "200"], &planar(), &dir.path().join("f"));
    assert!(f.status.success());
    assert!(String::from_utf8_lossy(&f.stdout).contains("peak temperature"));
    assert!(dir.path().join("f/kspace_noisy.f64").exists());
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");

    let missing = mrtherm(&["run"], &dir.path().join("nope.toml"), &out);
    assert_eq!(missing.status.code(), Some(1));

    let bad_method = mrtherm(&["sweep", "--methods", "spiral"], &planar(), &out);
    assert_eq!(bad_method.status.code(), Some(2));

    let too_many = mrtherm(&["sweep", "--lines", "65"], &planar(), &out);
    assert_eq!(too_many.status.code(), Some(2));

    let unstable = variant(dir.path(), "dt = 0.25", "dt = 50.0");
    assert_eq!(mrtherm(&["forward"], &unstable, &out).status.code(), Some(2));

    let hot = variant(dir.path(), "power = [[0.0, 11.85]]", "power = [[0.0, 1.0e9]]");
    let o = mrtherm(&["forward"], &hot, &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn randhyp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_randhyp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn lists_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = randhyp(&["--list-scenarios"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "calibration",
        "ogawa",
        "additive-noise-wave",
        "geometric-wave",
        "random-speed-wave",
    ] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(randhyp(&[], dir.path()).status.code(), Some(2));
    assert_eq!(randhyp(&["nope.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "c.toml",
        "seed = 3\n[scenario]\nkind = \"ogawa\"\nepsilonn = 0.1\n",
    );
    let out = randhyp(&[&f], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilonn"));
    assert!(!dir.path().join("randhyp-out").exists());
}

#[test]
fn empty_domain_is_runtime_error_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "c.toml",
        "seed = 3\noutput_dir = \"out\"\n[scenario]\nkind = \"custom\"\nlambda = [2.0]\nkappa = 1.0\nhorizon = 1.0\n",
    );
    let out = randhyp(&[&f], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let report = fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["error"].as_str().unwrap().contains("empty domain"), "{report}");
    assert_eq!(v["passed"], false);
    assert!(fs::read_to_string(dir.path().join("out/verdict.txt"))
        .unwrap()
        .contains("ERROR"));
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "c.toml",
        "seed = 3\n[scenario]\nkind = \"calibration\"\nnx = 101\nnt = 51\nwave_tol = 1e-12\n",
    );
    let out = randhyp(&[&f, "--output-dir", "elsewhere", "--verbosity", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] wave_sin_0"));
    assert!(dir.path().join("elsewhere/errors.csv").exists());
    assert!(!dir.path().join("randhyp-out").exists());
}

const CLASSIFIER: &str = "seed = 11\njobs = 1\n[scenario]\nkind = \"classifier\"\nroughness_eps = [0.2, 0.1, 0.05, 0.025, 0.0125]\nroughness_samples = 8\n";

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.toml", CLASSIFIER);
    for d in ["a", "b"] {
        assert_eq!(randhyp(&[&f, "--output-dir", d], dir.path()).status.code(), Some(0));
    }
    for csv in ["verdicts.csv", "roughness.csv", "interchange.csv"] {
        let a = fs::read(dir.path().join("a").join(csv)).unwrap();
        let b = fs::read(dir.path().join("b").join(csv)).unwrap();
        assert_eq!(a, b, "{csv}");
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("a/config.toml")).unwrap(),
        CLASSIFIER,
        "config copy is verbatim"
    );
    // the seed override changes sampled values
    assert_eq!(
        randhyp(&[&f, "--output-dir", "c", "--seed", "12"], dir.path())
            .status
            .code(),
        Some(0)
    );
    let a = fs::read(dir.path().join("a/roughness.csv")).unwrap();
    let c = fs::read(dir.path().join("c/roughness.csv")).unwrap();
    assert_ne!(a, c);
    let resolved = fs::read_to_string(dir.path().join("c/config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 12"), "{resolved}");
}

#[test]
fn csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.toml", "seed = 1\n[scenario]\nkind = \"mollifier\"\n");
    assert_eq!(randhyp(&[&f], dir.path()).status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("randhyp-out/mollifier.csv")).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "order,mass_error,max_moment,commute_error,cutoff_difference,polynomial_error"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r.split(',').count(), 6);
        for cell in r.split(',') {
            cell.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn ogawa_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.toml", "seed = 2024\n[scenario]\nkind = \"ogawa\"\n");
    let out = randhyp(&[&f], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let sigma = fs::read_to_string(dir.path().join("randhyp-out/sigma.csv")).unwrap();
    assert!(sigma.starts_with("t,sigma2_quadrature"));
    assert_eq!(sigma.lines().count(), 6);
}

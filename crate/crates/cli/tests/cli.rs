use std::path::Path;
use std::process::{Command, Output};

fn condwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condwalk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const LAW: &str = r#"{
  "dim": 2,
  "matrices": [[2, 0, 0, 0.5], [0.5, 0, 0, 2], [1, 1, 0, 1], [1, 0, 1, 1]],
  "probs": [0.25, 0.25, 0.25, 0.25],
  "log_shift": 0.0
}
"#;

#[test]
fn simulate_writes_all_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let law = dir.path().join("law.json");
    std::fs::write(&law, LAW).unwrap();
    let out = dir.path().join("sub/sim.csv");
    let o = condwalk(&[
        "simulate",
        "--law",
        path(&law),
        "--x",
        "1,0",
        "--t",
        "1",
        "--n",
        "20",
        "--paths",
        "2000",
        "--seed",
        "5",
        "--sign",
        "minus",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "estimator,value,stderr,n_samples,n,t,seed");
    let names: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, ["V", "persistence", "exit_local", "local_prob"]);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(&f[3..], ["2000", "20", "1", "5"]);
        let v: f64 = f[1].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    // Same seed, same file.
    let again = dir.path().join("again.csv");
    let args = [
        "simulate",
        "--law",
        path(&law),
        "--t",
        "1",
        "--n",
        "20",
        "--paths",
        "2000",
        "--seed",
        "5",
    ];
    let o = condwalk(
        &[
            &args[..],
            &["--sign", "minus", "--workers", "3", "--out", path(&again)],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), csv);
}

#[test]
fn bad_law_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let law = dir.path().join("law.json");
    std::fs::write(
        &law,
        LAW.replace("0.25, 0.25, 0.25, 0.25", "0.25, 0.25, 0.25, -0.25"),
    )
    .unwrap();
    let out = dir.path().join("x.csv");
    let o = condwalk(&[
        "simulate",
        "--law",
        path(&law),
        "--t",
        "1",
        "--n",
        "5",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4") && err.contains("probs[3]"), "{err}");
    assert!(!out.exists());

    let o = condwalk(&[
        "simulate",
        "--law",
        "missing.json",
        "--t",
        "1",
        "--n",
        "5",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn reversal_check_sides_agree_when_enumerated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rev.csv");
    let o = condwalk(&[
        "reversal-check",
        "--law",
        "builtin:l0",
        "--n",
        "4",
        "--mode",
        "enumerate",
        "--h",
        "0:1:1,1:2:-0.5",
        "--psi",
        "0:2:1",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "enumerate");
    let gap: f64 = row[4].parse().unwrap();
    assert!(gap.abs() < 1e-12, "{csv}");
    assert_eq!(row[8], "256");

    let o = condwalk(&[
        "reversal-check",
        "--law",
        "builtin:l0",
        "--n",
        "4",
        "--mode",
        "mc",
        "--paths",
        "4000",
        "--h",
        "0:1:1",
        "--psi",
        "0:2:1",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let (gap, se): (f64, f64) = (row[4].parse().unwrap(), row[7].parse().unwrap());
    assert!(gap.abs() <= 4.0 * se + 1e-12, "{csv}");

    let o = condwalk(&[
        "reversal-check",
        "--law",
        "builtin:l0",
        "--n",
        "4",
        "--h",
        "0:1",
        "--psi",
        "0:2:1",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn spectral_emits_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("spec.json");
    let o = condwalk(&[
        "spectral",
        "--law",
        "builtin:l0",
        "--grid",
        "256",
        "--h",
        "1e-3",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let lambda = v["lambda_mu"].as_f64().unwrap();
    assert!((lambda - 0.336).abs() < 5e-3, "{lambda}");
    assert!(v["upsilon_sq"].as_f64().unwrap() > 0.3);
    let w = v["nu_weights"].as_array().unwrap();
    assert_eq!(w.len(), 256);
    let total: f64 = w.iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(v["diagnostics"]["grid_n"], 256);

    let o = condwalk(&[
        "spectral",
        "--law",
        "builtin:l0",
        "--grid",
        "4",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("report");

    // Empty check list: a valid empty report.
    std::fs::write(&cfg, r#"{"checks": [], "centering_grid": 256}"#).unwrap();
    let o = condwalk(&["verify", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(
        csv,
        "check,name,n,empirical,stderr,reference,ratio,tolerance,pass\n"
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["pass"], true);
    assert_eq!(json["environment"]["centering_grid"], 256);

    // Exact checks pass.
    std::fs::write(&cfg, r#"{"checks": ["identities", "reversal"], "centering_grid": 256, "identities": {"instances": 100}}"#)
        .unwrap();
    let o = condwalk(&["verify", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));

    // A check that cannot run: exit 1 and the report is still written.
    std::fs::remove_dir_all(&out).unwrap();
    std::fs::write(
        &cfg,
        r#"{"checks": ["cclt"], "centering_grid": 256, "cclt": {"n": 2000, "paths": 1000}}"#,
    )
    .unwrap();
    let o = condwalk(&["verify", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert_eq!(code(&o), 1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["pass"], false);
    assert!(json["error"].as_str().unwrap().contains("survivors"));

    // Configuration errors.
    for bad in [
        "{\n  \"checks\": [],\n  \"seed\": \"one\"\n}",
        r#"{"checks": [], "unknown": 1}"#,
        r#"{"checks": [], "cllt": {"schedule": [512, 256]}}"#,
        r#"{"checks": [], "law": "no-such-law.json"}"#,
    ] {
        std::fs::write(&cfg, bad).unwrap();
        let o = condwalk(&["verify", "--config", path(&cfg), "--out-dir", path(&out)]);
        assert_eq!(code(&o), 2, "{bad}");
    }
    std::fs::write(&cfg, "{\n  \"checks\": [],\n  \"seed\": \"one\"\n}").unwrap();
    let o = condwalk(&["verify", "--config", path(&cfg), "--out-dir", path(&out)]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    let o = condwalk(&[
        "verify",
        "--config",
        path(&dir.path().join("absent.json")),
        "--out-dir",
        path(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_reads_out_dir_from_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("from-config");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"checks": [], "centering_grid": 256, "out_dir": "{}"}}"#,
            path(&out)
        ),
    )
    .unwrap();
    let o = condwalk(&["verify", "--config", path(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.csv").exists());

    std::fs::write(&cfg, r#"{"checks": []}"#).unwrap();
    let o = condwalk(&["verify", "--config", path(&cfg)]);
    assert_eq!(code(&o), 2);
}

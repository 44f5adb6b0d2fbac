use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use deposim::cli::RunManifest;
use deposim::estimators::ExperimentConfig;

fn deposim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deposim")).args(args).env_remove("DEPOSIM_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const HEADER: &str = "check,param_json,estimate,ci95,target,zscore,pass\n";

#[test]
fn empty_check_list_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"family":"SE","rho":0.3,"L":16}"#);
    let out = dir.path().join("out");
    let o = deposim(&["run", &cfg, "--out-dir", out.to_str().unwrap(), "--plotdata"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap(), HEADER);
    assert!(out.join("manifest.json").exists());
    for f in ["variance_vs_V.csv", "q_convergence.csv", "ks_curves.csv"] {
        assert!(!out.join(f).exists());
    }
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\"family\": \"SE\",\n  \"L\": 16,,\n}");
    let o = deposim(&["run", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let unknown = write(dir.path(), "u.json", r#"{"family":"SE","L":16,"thetta":0}"#);
    assert_eq!(deposim(&["run", &unknown, "--out-dir", d]).status.code(), Some(2));
    let wrap = write(dir.path(), "w.json", r#"{"family":"SE","L":16,"t":[10],"V":[1]}"#);
    assert_eq!(deposim(&["run", &wrap, "--out-dir", d]).status.code(), Some(2));
    let params = write(dir.path(), "p.json", r#"{"family":"PA","c":0.8,"a":1,"L":16}"#);
    assert_eq!(deposim(&["run", &params, "--out-dir", d]).status.code(), Some(2));
    let check = write(dir.path(), "k.json", r#"{"family":"SE","L":16,"checks":["nope"]}"#);
    assert_eq!(deposim(&["run", &check, "--out-dir", d]).status.code(), Some(2));
    assert_eq!(deposim(&["run", "/no/such/file.json", "--out-dir", d]).status.code(), Some(2));
    assert_eq!(deposim(&["run", "preset-missing", "--out-dir", d]).status.code(), Some(2));
}

#[test]
fn runs_are_byte_identical_and_manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"family":"SE","rho":0.3,"L":64,"t":[5,10],"V":[0,0.4],"replicas":200,"seed":9,"checks":["lln","variance","clt","qspeed"]}"#;
    let cfg = write(dir.path(), "c.json", text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for out in [&a, &b] {
        let o = deposim(&["run", &cfg, "--out-dir", out.to_str().unwrap(), "--plotdata"]);
        assert_eq!(o.status.code(), Some(0));
    }
    // single thread against the default pool
    let o = Command::new(env!("CARGO_BIN_EXE_deposim"))
        .args(["run", &cfg, "--out-dir", c.to_str().unwrap(), "--plotdata"])
        .env("DEPOSIM_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    for f in ["report.csv", "variance_vs_V.csv", "q_convergence.csv", "ks_curves.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, fs::read(c.join(f)).unwrap(), "{f}");
    }
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 9);
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    let original = ExperimentConfig::from_json_str(text).unwrap();
    assert_eq!(ExperimentConfig::from_value(manifest.config.clone()).unwrap(), original);
    // a manifest can be fed back to `run`
    let d = dir.path().join("d");
    let o = deposim(&["run", a.join("manifest.json").to_str().unwrap(), "--out-dir", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(a.join("report.csv")).unwrap(), fs::read(d.join("report.csv")).unwrap());
}

#[test]
fn strict_gates_statistical_failures() {
    let dir = tempfile::tempdir().unwrap();
    // t = 2 is far from the limit: the variance rows miss their targets
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"family":"SE","rho":0.3,"L":64,"t":[2],"replicas":4000,"seed":1,"checks":["variance"]}"#,
    );
    let d = dir.path().to_str().unwrap();
    assert_eq!(deposim(&["run", &cfg, "--out-dir", d]).status.code(), Some(0));
    assert_eq!(deposim(&["run", &cfg, "--out-dir", d, "--strict"]).status.code(), Some(1));
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().ends_with(",false"), "{report}");
}

#[test]
fn wedge_minimum_sits_at_characteristic_speed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"family":"SE","rho":0.3,"L":256,"t":[60],"V":[-0.4,-0.2,0,0.2,0.4,0.6,0.8,1.0],"replicas":1500,"seed":4,"checks":["variance"]}"#,
    );
    let out = dir.path().join("o");
    assert_eq!(deposim(&["run", &cfg, "--out-dir", out.to_str().unwrap(), "--plotdata"]).status.code(), Some(0));
    let text = fs::read_to_string(out.join("variance_vs_V.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,V,estimate,ci95,target"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut sorted = vs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(vs, sorted);
    let argmin = rows.iter().min_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap().0;
    assert!((argmin - 0.4).abs() <= 0.2 + 1e-12, "minimum at V = {argmin}");
}

#[test]
fn estimate_subcommand_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"family":"SE","rho":0.5,"L":32,"t":[0,1],"n":[0,1],"n_max":2,"replicas":300,"seed":2}"#);
    let out = dir.path().join("r.csv");
    let o = deposim(&["estimate", "--check", "corr,lln", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(HEADER));
    assert_eq!(text.lines().filter(|l| l.starts_with("corr,")).count(), 4);
    assert_eq!(text.lines().filter(|l| l.starts_with("lln,")).count(), 1);
    let o = deposim(&["estimate", "--check", "bogus", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_validate_table_couple_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let pa = write(dir.path(), "pa.json", r#"{"family":"PA","c":0.3,"a":1,"theta":0,"L":6}"#);
    let o = deposim(&["oracle", "--config", &pa]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["residual"].as_f64().unwrap() < 1e-10);

    let bl = write(dir.path(), "bl.json", r#"{"family":"BL","beta":0.5,"theta":0,"theta1":0,"theta2":0.5,"L":32}"#);
    let o = deposim(&["validate", "--config", &bl]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("pass")).count(), 4);

    let o = deposim(&["table", "--config", &bl, "--theta-min", "-1", "--theta-max", "1", "--points", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.starts_with("theta,rho,var,m3,er,speed_closed,speed_static,certificate\n"));
    assert_eq!(text.lines().count(), 6);

    let o = deposim(&["couple", "--config", &bl, "--events", "20000"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["events"], 20000);

    let se = write(dir.path(), "se.json", r#"{"family":"SE","rho":0.3,"L":32,"t":[1,2],"V":[0,0.5],"replicas":3}"#);
    let out = dir.path().join("j.csv");
    assert_eq!(deposim(&["simulate", "--config", &se, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.starts_with("replica,t,V,J\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 2);
}

#[test]
fn nonmonotone_custom_model_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"family":"Custom","omega_min":0,"omega_max":1,"rate_table":[[0,0],[1,2]],"L":8}"#,
    );
    let o = deposim(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL monotonicity"));
}

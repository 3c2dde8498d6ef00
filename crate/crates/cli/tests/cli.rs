use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn poqk(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poqk"))
        .args(args)
        .env("POQK_OUTPUT_DIR", out_dir)
        .output()
        .expect("spawn poqk")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("poqk-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn json(out: &[u8]) -> serde_json::Value {
    serde_json::from_slice(out).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(out)))
}

fn strip_timestamp(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with("# timestamp:")).collect::<Vec<_>>().join("\n")
}

#[test]
fn completeness_run_is_deterministic_and_replays() {
    let dir = scratch("run");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"scenario":"wiesner","experiment":"completeness","lambda":3,"trials":100,"seed":11}"#).unwrap();
    let cfg = cfg.to_str().unwrap();

    let (da, db) = (dir.join("a"), dir.join("b"));
    let a = poqk(&["experiment", "run", cfg], &da);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = poqk(&["experiment", "run", cfg], &db);
    assert_eq!(b.status.code(), Some(0));
    let stem = "completeness-wiesner-l3-s11";
    let ca = fs::read_to_string(da.join(format!("{stem}.csv"))).unwrap();
    let cb = fs::read_to_string(db.join(format!("{stem}.csv"))).unwrap();
    assert_eq!(strip_timestamp(&ca), strip_timestamp(&cb));
    assert!(ca.contains("# timestamp:"));
    assert!(ca.contains("# config: "));
    let header = ca.lines().find(|l| !l.starts_with('#')).unwrap();
    let row = ca.lines().filter(|l| !l.starts_with('#')).nth(1).unwrap();
    let i = header.split(',').position(|c| c == "p_hat").unwrap();
    assert_eq!(row.split(',').nth(i), Some("1.000000"));

    let report = da.join(format!("{stem}.json"));
    let r = poqk(&["experiment", "replay", report.to_str().unwrap()], &dir);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(json(&r.stdout)["status"], "match");

    let r = poqk(&["experiment", "replay", report.to_str().unwrap(), "--seed", "12"], &dir);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(json(&r.stdout)["status"], "non-replay");

    let mut tampered = json(fs::read(&report).unwrap().as_slice());
    tampered["summary"]["p_hat"] = "0.990000".into();
    let t = dir.join("tampered.json");
    fs::write(&t, tampered.to_string()).unwrap();
    let r = poqk(&["experiment", "replay", t.to_str().unwrap()], &dir);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(json(&r.stdout)["status"], "mismatch");
}

#[test]
fn flag_overrides_apply() {
    let dir = scratch("override");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"scenario":"wiesner","experiment":"completeness","lambda":3,"trials":100}"#).unwrap();
    let o = poqk(
        &["experiment", "run", cfg.to_str().unwrap(), "--lambda", "1", "--trials", "7", "--prover", r#"{"kind":"fixed-answer","beta":"0"}"#],
        &dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&fs::read(dir.join("completeness-wiesner-l1-s0.json")).unwrap());
    assert_eq!(rep["config"]["lambda"], 1);
    assert_eq!(rep["config"]["trials"], 7);
    assert_eq!(rep["config"]["prover"]["kind"], "fixed-answer");
}

#[test]
fn invalid_configs_exit_2_with_json_error() {
    let dir = scratch("bad");
    for (name, body) in [
        ("zero-trials", r#"{"scenario":"wiesner","experiment":"completeness","lambda":2,"trials":0}"#),
        ("odd-subspace", r#"{"scenario":"subspace","experiment":"completeness","lambda":3,"trials":5}"#),
        ("too-big", r#"{"scenario":"wiesner","experiment":"extraction-sweep","lambda":5,"trials":5,"prover":{"kind":"depolarizing","q":0}}"#),
        ("not-json", "lambda = 3"),
    ] {
        let p = dir.join(format!("{name}.json"));
        fs::write(&p, body).unwrap();
        let o = poqk(&["experiment", "run", p.to_str().unwrap()], &dir);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert_eq!(json(&o.stderr)["error"], "config", "{name}");
    }
    let o = poqk(&["experiment", "run", dir.join("missing.json").to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn demos() {
    let dir = scratch("demo");
    let o = poqk(&["mint-demo", "--lambda", "3", "--seed", "4"], &dir);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o.stdout);
    assert!((v["ver_acceptance"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["secret"]["v"].as_str().unwrap().len(), 3);

    let o = poqk(&["mint-demo", "--scenario", "subspace", "--lambda", "2"], &dir);
    assert_eq!(o.status.code(), Some(0));
    assert!((json(&o.stdout)["ver_acceptance"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let o = poqk(&["verify-demo", "--lambda", "2", "--seed", "1"], &dir);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o.stdout);
    assert_eq!(v["agree"], true);
    assert_eq!(v["prove"], true);

    let o = poqk(&["mint-demo", "--scenario", "subspace", "--lambda", "3"], &dir);
    assert_eq!(o.status.code(), Some(2));
}

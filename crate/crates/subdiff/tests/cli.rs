use std::path::Path;
use std::process::{Command, Output};

fn subdiff(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_subdiff"));
    cmd.args(args).env_remove("SUBDIFF_SEED");
    if let Some(s) = env_seed {
        cmd.env("SUBDIFF_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_EX1: &str = r#"{
    "schema": 1,
    "sde": "ex1",
    "subordinator": {"family": "stable", "beta": 0.8},
    "scheme": {"kind": "em"},
    "delta_ref": 0.001953125,
    "deltas": [0.00390625, 0.0078125, 0.015625, 0.03125],
    "n_paths": 30,
    "seed": 4
}"#;

#[test]
fn rate_lookup_prints_guarantee() {
    let o = subdiff(&["rate", "--scheme", "em", "--beta", "0.8", "--q", "0.5", "--theta", "1"], None);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("order 0.5"), "{s}");
    assert!(s.contains("valid range (0.6666666666666666, 1)"), "{s}");
    assert!(s.trim_end().ends_with("VALID"));

    let o = subdiff(&["rate", "--scheme", "em", "--beta", "0.6", "--q", "0.5"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("INVALID"));

    let o = subdiff(&["rate", "--scheme", "milstein", "--beta", "0.8", "--sde", "ex1"], None);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = subdiff(&["rate", "--scheme", "em", "--beta", "0.8", "--sde", "ex2"], None);
    assert!(stdout(&o).contains("regime em-additive, order 1"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(subdiff(&["rate", "--bogus"], None).status.code(), Some(1));
    assert_eq!(subdiff(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(subdiff(&["simulate", "--sde", "nope"], None).status.code(), Some(1));
    assert_eq!(subdiff(&["--help"], None).status.code(), Some(0));
    let o = subdiff(&["simulate"], Some("not-a-number"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn moments_classifies() {
    let o = subdiff(&["moments", "--beta", "0.3", "--p", "2", "--t", "1", "--samples", "2000"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["classifier_verdict"], "INFINITE");
    assert!(v["probe_hint"].is_string());
    assert!(v["running_means"].as_array().unwrap().len() >= 1);

    let o = subdiff(&["moments", "--beta", "0.8", "--p", "2", "--samples", "0"], None);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["classifier_verdict"], "FINITE");
    assert!(v["probe_hint"].is_null());

    let o = subdiff(&["moments", "--function", "inverse-power", "--p", "1", "--samples", "0"], None);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["classifier_verdict"], "INFINITE");
}

#[test]
fn convergence_formats_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_EX1);
    let run = |format: &str, threads: &str| {
        let out = dir.path().join(format!("report-{threads}.{format}"));
        let o = subdiff(
            &[
                "convergence",
                "--config",
                &cfg,
                "--format",
                format,
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
            ],
            None,
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let csv1 = run("csv", "1");
    let csv4 = run("csv", "4");
    assert_eq!(csv1, csv4);
    assert_eq!(csv1.lines().count(), 5);
    assert!(csv1.starts_with("delta,log2_delta,error,log2_error,excluded"));
    let json: serde_json::Value = serde_json::from_str(&run("json", "2")).unwrap();
    assert!(json["slope"].is_f64() && json["r_squared"].is_f64());
    let svg = run("svg", "2");
    assert_eq!(svg.matches("<circle").count(), 4);
    assert_eq!(svg.matches("<line").count(), 1);
    assert_eq!(svg, run("svg", "3"));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = SMALL_EX1.replace(",\n    \"seed\": 4", "");
    let cfg = write_config(dir.path(), &no_seed);
    let go = |extra: &[&str], env: Option<&str>| {
        let mut args = vec!["convergence", "--config", cfg.as_str()];
        args.extend_from_slice(extra);
        stdout(&subdiff(&args, env))
    };
    let env4 = go(&[], Some("4"));
    let flag4 = go(&["--seed", "4"], Some("9"));
    let env9 = go(&[], Some("9"));
    assert_eq!(env4, flag4);
    assert_ne!(env4, env9);

    let cfg = write_config(dir.path(), SMALL_EX1);
    let file4 = stdout(&subdiff(&["convergence", "--config", &cfg], Some("9")));
    assert_eq!(file4, env4);
}

#[test]
fn bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_EX1.replace("\"seed\": 4", "\"seed\": 4, \"extra\": true"));
    assert_eq!(subdiff(&["convergence", "--config", &cfg], None).status.code(), Some(1));
    let cfg = write_config(dir.path(), &SMALL_EX1.replace("0.00390625", "0.003"));
    assert_eq!(subdiff(&["convergence", "--config", &cfg], None).status.code(), Some(1));
    let cfg = write_config(
        dir.path(),
        &SMALL_EX1.replace("{\"kind\": \"em\"}", "{\"kind\": \"milstein\"}"),
    );
    assert_eq!(subdiff(&["convergence", "--config", &cfg], None).status.code(), Some(2));
    assert_eq!(subdiff(&["convergence", "--config", "/nonexistent.json"], None).status.code(), Some(1));
}

#[test]
fn simulate_writes_path_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("tc.bin");
    let o = subdiff(
        &["simulate", "--seed", "2", "--delta", "0.00390625", "--dump-time-change", bin.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    let tc = subdiff::dump::read_time_change(&bin).unwrap();
    assert_eq!(csv.lines().count(), tc.stop_index() + 2);
    assert_eq!(csv, stdout(&subdiff(&["simulate", "--delta", "0.00390625"], Some("2"))));
}

#[test]
fn overflow_exits_three() {
    let o = subdiff(&["simulate", "--sde", "ex1", "--x0", "1.7976931348623157e308"], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_bracket_reports() {
    let o = subdiff(&["exit-bracket", "--samples", "2000", "--delta", "0.00390625"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let b = &v["bracket"];
    assert!(b["lower"].as_f64().unwrap() <= b["upper"].as_f64().unwrap());
    assert_eq!(b["holds_within_3_se"], true);
}

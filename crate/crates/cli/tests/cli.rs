use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn matchtrial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchtrial")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"
replications = 40
[[scenario]]
name = "small"
n_controls = 300
n1 = 20
theta = [0.0, 0.85]
"#;

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn header(path: &Path) -> csv::StringRecord {
    csv::Reader::from_path(path).unwrap().headers().unwrap().clone()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let k = header(path).iter().position(|h| h == name).unwrap();
    records(path).iter().map(|r| r[k].to_string()).collect()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let mut outputs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let dir = tmp.path().join(run);
        let o = matchtrial(&[
            "simulate",
            "--config",
            &cfg,
            "--replications",
            "1",
            "--base-seed",
            "7",
            "--threads",
            threads,
            "--output-dir",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(std::fs::read(dir.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn results_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let out = tmp.path().join("out");
    let o = matchtrial(&["simulate", "--config", &cfg, "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = out.join("results.csv");
    assert_eq!(records(&results).len(), 2);
    assert_eq!(header(&results).iter().next(), Some("scenario"));
    for r in column(&results, "reject_rate") {
        let r: f64 = r.parse().unwrap();
        assert!((0.0..=1.0).contains(&r));
    }
    assert!(column(&results, "n_fixed").iter().all(String::is_empty));

    let manifest: toml::Table = toml::from_str(&std::fs::read_to_string(out.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["command"].as_str(), Some("simulate"));
    assert_eq!(manifest["replications"].as_integer(), Some(40));
    let scenarios = manifest["scenario"].as_array().unwrap();
    assert_eq!(scenarios.len(), 2);
    // the echoed scenario re-parses as a complete configuration
    let echoed: matchtrial::ScenarioConfig = scenarios[1].clone().try_into().unwrap();
    assert_eq!(echoed.model.theta, 0.85);
    assert_eq!(echoed.n_controls, 300);
}

#[test]
fn invalid_weights_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &format!("{SMALL}design = {{ w1 = 0.9 }}\n"));
    let o = matchtrial(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("w2"), "{}", stderr(&o));
}

#[test]
fn parse_errors_point_at_the_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "replications = 5\n[[scenario]]\nname = \"x\"\nn_control = 300\n");
    let o = matchtrial(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("n_control") && err.contains("line 4"), "{err}");
}

#[test]
fn usage_errors_and_unknown_presets_are_validation_failures() {
    assert_eq!(matchtrial(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(matchtrial(&["simulate", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(matchtrial(&["simulate"]).status.code(), Some(1));
    assert_eq!(matchtrial(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let blocker = write(tmp.path(), "file", "");
    let o = matchtrial(&["simulate", "--config", &cfg, "--replications", "1", "--output-dir", &blocker]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn plan_reference_point() {
    let o = matchtrial(&[
        "plan",
        "--n-eff",
        "19.724",
        "--m",
        "4.93",
        "--theta",
        "0.8472978603872037",
        "--theta-stop",
        "0.26236426446749106",
        "--pi-t",
        "0.5",
        "--pi-c",
        "0.3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.split("\n\n").next().unwrap().as_bytes());
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let p: f64 = rows[0][8].parse().unwrap();
    assert!((p - 0.8781).abs() < 5e-4, "{p}");
}

#[test]
fn plan_at_the_threshold_is_one_half() {
    let o = matchtrial(&["plan", "--n-eff", "30", "--m", "3", "--theta", "0.3", "--theta-stop", "0.3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let line = text.lines().nth(1).unwrap();
    assert!(line.ends_with(",5.0000000000000000e-1"), "{line}");
}

#[test]
fn plan_preset_writes_both_tables() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("plan");
    let o = matchtrial(&["plan", "--preset", "futility-curves", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(records(&out.join("results.csv")).len(), 10 * 6 * 2);
    let cp = records(&out.join("cp_table.csv"));
    assert!(!cp.is_empty());
    for r in &cp {
        let c: f64 = r[2].parse().unwrap();
        assert!(c > 0.8 && c <= 0.99);
    }
    assert!(out.join("manifest.toml").exists());
    let bad = matchtrial(&["plan", "--m", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn estimator_preset_has_one_row_per_effect() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("est");
    let o = matchtrial(&["estimators", "--preset", "estimators", "--replications", "10", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let thetas = column(&out.join("results.csv"), "theta");
    assert_eq!(thetas.len(), 22);
    assert!((thetas[0].parse::<f64>().unwrap() + 0.1).abs() < 1e-12);
    assert!((thetas[21].parse::<f64>().unwrap() - 2.0).abs() < 1e-12);

    let cfg = write(tmp.path(), "e.toml", &format!("{SMALL}[estimators]\nthetas = []\n"));
    assert_eq!(matchtrial(&["estimators", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn standard_designs_preset() {
    let o = matchtrial(&["simulate", "--preset", "standard-designs", "--replications", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<_> = csv::Reader::from_reader(text.as_bytes()).records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().any(|r| &r[1] == "single-arm"));
    assert!(rows.iter().any(|r| &r[1] == "rct-adjusted-logistic"));
}

#[test]
fn presets_are_listed() {
    let o = matchtrial(&["presets"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["null", "power", "matching", "standard-designs", "futility-curves", "estimators"] {
        assert!(text.lines().any(|l| l == name), "{name}");
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use ultrakfp::SolutionField;

const KOLMOGOROV: &str = r#""model":{"N":2,"m":[1,1],"B":[[0,1],[0,0]]}"#;

fn run(dir: &Path, command: &str, config: &str, extra: &[&str]) -> (Output, Value) {
    let cfg = dir.join(format!("{command}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out-{command}"));
    let output = Command::new(env!("CARGO_BIN_EXE_ultrakfp"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .env("ULTRAKFP_THREADS", "1")
        .output()
        .unwrap();
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    (output, report)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_minimal_config() {
    let dir = TempDir::new().unwrap();
    let (o, report) = run(dir.path(), "validate", &format!("{{{KOLMOGOROV}}}"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report["status"], "ok");
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out-validate/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["Q"], 4);
}

#[test]
fn config_errors_exit_2_and_still_report() {
    let dir = TempDir::new().unwrap();
    let (o, report) = run(dir.path(), "validate", &format!("{{{KOLMOGOROV},\"foo\":1}}"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report["error"]["kind"], "config");
    assert!(report["error"]["message"].as_str().unwrap().contains("foo"));

    let (o, _) = run(dir.path(), "norm", r#"{"model":{"N":2,"m":[1,2],"B":[[0,1],[0,0]]}}"#, &[]);
    assert_eq!(o.status.code(), Some(2));

    let (o, report) = run(dir.path(), "kernel", &format!("{{{KOLMOGOROV},\"kernel\":{{\"pole\":{{\"x\":[0],\"t\":0}}}}}}"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(report["error"]["message"].as_str().unwrap().contains("kernel.pole"));
}

#[test]
fn structure_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let (o, report) = run(dir.path(), "validate", r#"{"model":{"N":2,"m":[1,1],"B":[[0,0],[0,0]]}}"#, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(report["error"]["kind"], "structure");
}

#[test]
fn failed_checks_exit_4_and_runtime_errors_exit_5() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{{{KOLMOGOROV},\"mc\":{{\"paths\":10000,\"steps\":50,\"z_max\":0.0}}}}");
    let (o, report) = run(dir.path(), "mc-oracle", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(report["status"], "check_failed");
    assert!(stdout(&o).contains("FAIL moments_within_stderr"));

    let cfg = format!("{{{KOLMOGOROV},\"solve\":{{\"dt\":0.5,\"T\":1.0}}}}");
    let (o, report) = run(dir.path(), "solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(5));
    assert!(report["error"]["message"].as_str().unwrap().contains("transport"));
}

#[test]
fn kernel_prints_point_value() {
    let dir = TempDir::new().unwrap();
    let (o, report) = run(dir.path(), "kernel", &format!("{{{KOLMOGOROV}}}"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("= 0.275664"), "{}", stdout(&o));
    assert_eq!(report["checks"][0]["passed"], true);
}

#[test]
fn lemma21_on_kolmogorov() {
    let dir = TempDir::new().unwrap();
    let (o, _) = run(dir.path(), "verify-lemma21", &format!("{{{KOLMOGOROV}}}"), &[]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out-verify-lemma21/lemma21.json")).unwrap()).unwrap();
    assert!(r["C_T"].as_f64().unwrap() <= 1e-6);
    assert!(r["C'_T"].as_f64().unwrap().is_finite());
}

#[test]
fn outputs_are_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = format!("{{{KOLMOGOROV},\"seed\":3,\"mc\":{{\"paths\":10000,\"steps\":100}}}}");
    run(a.path(), "mc-oracle", &cfg, &[]);
    run(b.path(), "mc-oracle", &cfg, &["--threads", "2"]);
    for f in ["mc.csv", "mc.json"] {
        let x = fs::read(a.path().join("out-mc-oracle").join(f)).unwrap();
        let y = fs::read(b.path().join("out-mc-oracle").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let (_, ra) = run(a.path(), "covariance", &format!("{{{KOLMOGOROV}}}"), &[]);
    let (_, rb) = run(b.path(), "covariance", &format!("{{{KOLMOGOROV}}}"), &[]);
    assert_eq!(ra["config_hash"], rb["config_hash"]);
    assert_eq!(ra["checks"], rb["checks"]);
    assert_eq!(
        fs::read(a.path().join("out-covariance/covariance.csv")).unwrap(),
        fs::read(b.path().join("out-covariance/covariance.csv")).unwrap()
    );
}

#[test]
fn solve_checkpoints_load_back() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        "{{{KOLMOGOROV},\"solve\":{{\"space\":[{{\"min\":-4,\"max\":4,\"steps\":40}},{{\"min\":-2,\"max\":2,\"steps\":40}}],\"dt\":0.02,\"T\":0.2}}}}"
    );
    let (o, report) = run(dir.path(), "solve", &cfg, &["--checkpoint-every", "5"]);
    assert_eq!(o.status.code(), Some(0), "{report}");
    let field = SolutionField::<f64>::load(dir.path().join("out-solve/solution")).unwrap();
    assert_eq!(field.len(), 3);
    assert!((field.times()[2] - 0.2).abs() < 1e-12);
    let csv = fs::read_to_string(dir.path().join("out-solve/solve.csv")).unwrap();
    assert!(csv.starts_with("t,min,max,mass\n"));
}

#[test]
fn holder_default_decays() {
    let dir = TempDir::new().unwrap();
    let (o, report) = run(dir.path(), "holder", &format!("{{{KOLMOGOROV}}}"), &[]);
    assert_eq!(o.status.code(), Some(0), "{report}");
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out-holder/holder.json")).unwrap()).unwrap();
    for run in s.as_array().unwrap() {
        assert!(run["rho"].as_f64().unwrap() < 1.0);
    }
    let csv = fs::read_to_string(dir.path().join("out-holder/holder.csv")).unwrap();
    assert!(csv.starts_with("run,seed,level,r,osc,ratio\n"));
    assert!(fs::read_to_string(dir.path().join("out-holder/holder.svg")).unwrap().starts_with("<svg"));
}

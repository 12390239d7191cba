use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use logitfe::differencing::WeightVector;
use logitfe::estimation::EstimateReport;
use logitfe::moments::VerifyRow;
use logitfe::sufficiency::PairCertificate;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_logitfe"));
    c.env_remove("LOGITFE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const PANEL_FE2: &str = r#"{"family": "static", "T": 2, "dx": 1, "dw": 1, "W": [1, 1]}"#;

#[test]
fn table1_golden() {
    let o = run(&["table1", "--max-p", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let want = "# logitfe table1 schema_version=1\n\
                p,T,w_perp\n\
                0,2,1 -1\n\
                1,4,1 -1 -1 1\n\
                2,7,1 -1 -1 0 1 1 -1\n\
                3,12,1 -1 -1 0 1 0 0 1 0 -1 -1 1\n";
    assert_eq!(stdout(&o), want);
    assert_eq!(stdout(&run(&["table1", "--max-p", "3"])), want);
}

#[test]
fn resolved_config_goes_to_stderr() {
    let o = run(&["table1", "--max-p", "0"]);
    let err = String::from_utf8(o.stderr).unwrap();
    let line = err.lines().find(|l| l.contains("resolved-config")).expect("header");
    let json: serde_json::Value = serde_json::from_str(line.split("resolved-config ").nth(1).unwrap()).unwrap();
    assert_eq!(json["args"]["max_p"], 0);
}

#[test]
fn empty_wperp_exits_3() {
    let o = run(&["wperp", "--design", "poly", "--p", "1", "--T", "3"]);
    assert_eq!(o.status.code(), Some(3));
    let v: Vec<WeightVector> = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.is_empty());
}

#[test]
fn wperp_round_trips() {
    let o = run(&["wperp", "--design", "panel-fe", "--T", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Vec<WeightVector> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|w| w.0.iter().map(|&x| x as i32).sum::<i32>() == 0));
    let csv = run(&["wperp", "--design", "panel-fe", "--T", "3", "--format", "csv"]);
    assert_eq!(stdout(&csv).lines().count(), 2 + 3);
}

#[test]
fn moments_bound_for_ar1_t3() {
    let o = run(&["moments", "--design", "ar", "--p", "1", "--T", "3", "--theta", "0.5", "--oracle"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["bound"], 2);
    assert_eq!(v["nullspace_dimension"], 2);
    assert_eq!(v["oracle"]["dimension"], 2);
    assert!(v["oracle"]["residual"].as_f64().unwrap() < 1e-7);
    assert!(v["verification"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() < 1e-10));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["wperp", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["moments", "--design", "ar", "--p", "1", "--T", "3"]).status.code(), Some(2));
    assert_eq!(run(&["moments", "--design", "ar", "--T", "3", "--theta", "0.5"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--moment", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["table1", "--threads", "0"]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--design", "panel-fe", "--T", "2", "--data", "/nonexistent", "--method", "cmle"]).status.code(), Some(2));
}

#[test]
fn verify_closed_forms() {
    for m in ["ar2_t3", "quarterly_t6", "network_transition"] {
        let o = run(&["verify", "--moment", m, "--draws", "10", "--format", "json"]);
        assert_eq!(o.status.code(), Some(0));
        let rows: Vec<VerifyRow> = serde_json::from_str(&stdout(&o)).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.residual < 1e-8), "{m}");
    }
    let csv = stdout(&run(&["verify", "--moment", "ar2_t3", "--draws", "4"]));
    assert!(csv.starts_with("# logitfe verify schema_version=1\ndraw,moment,y0,residual\n"));
}

#[test]
fn pairs_for_ar1() {
    let o = run(&["pairs", "--design", "ar", "--p", "1", "--T", "4", "--y0", "0", "--gap"]);
    assert_eq!(o.status.code(), Some(0));
    let certs: Vec<PairCertificate> = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!certs.is_empty());
    assert!(certs.iter().all(|c| c.passes() && c.transition_gap != Some(0)));
}

#[test]
fn netcond_n3() {
    let o = run(&[
        "netcond", "--design", "network", "--n", "3", "--periods", "3", "--y0", "011", "--path", "100010111",
        "--gamma", "0.5", "--delta", "0.2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let l = v["likelihood"].as_f64().unwrap();
    assert!(l > 0.0 && l <= 1.0);
    assert!(v["size"].as_u64().unwrap() >= 2);
}

#[test]
fn simulate_is_deterministic_and_estimate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("panel_fe2.json");
    let cfg = cfg.to_str().unwrap();
    let a = run(&["simulate", "--config", cfg, "--n", "2000"]);
    let b = run(&["simulate", "--config", cfg, "--n", "2000"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let data = write(dir.path(), "s.csv", &stdout(&a));
    let model = write(dir.path(), "m.json", PANEL_FE2);

    // the echoed configuration is accepted back
    let err = String::from_utf8(a.stderr).unwrap();
    let dgp = err.lines().find_map(|l| l.strip_prefix("# dgp ")).unwrap();
    let cfg2 = write(dir.path(), "dgp.json", dgp);
    assert_eq!(run(&["simulate", "--config", &cfg2]).stdout, a.stdout);

    let o = run(&["estimate", "--model", &model, "--data", &data, "--method", "pairwise"]);
    assert_eq!(o.status.code(), Some(0));
    let r: EstimateReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.method, "cmle_pairwise");
    assert!((r.theta_hat[0] - 1.0).abs() < 4.0 * r.std_errors[0].unwrap());
    let o2 = run(&["estimate", "--model", &model, "--data", &data, "--method", "cmle", "--threads", "1"]);
    let r2: EstimateReport = serde_json::from_str(&stdout(&o2)).unwrap();
    assert_eq!(r.theta_hat, r2.theta_hat);
}

#[test]
fn uninformative_sample_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", PANEL_FE2);
    let data = write(dir.path(), "s.csv", "unit,t,y,x1\n0,1,1,0.5\n0,2,1,0.1\n1,1,0,0.2\n1,2,0,0.3\n");
    let o = run(&["estimate", "--model", &model, "--data", &data, "--method", "cmle"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mc_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("mc_pairwise.json");
    let out = dir.path().join("mc.csv");
    let o = run(&["mc", "--config", cfg.to_str().unwrap(), "--replications", "5", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "# logitfe mc schema_version=1");
    assert_eq!(rows.iter().filter(|l| l.starts_with("rep,")).count(), 5);
    assert!(rows.iter().any(|l| l.starts_with("coverage,")));
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = configs().join("ar1_t3.json");
    let cfg = cfg.to_str().unwrap();
    let one = run(&["simulate", "--config", cfg, "--n", "500", "--threads", "1"]);
    let two = run(&["simulate", "--config", cfg, "--n", "500", "--threads", "2"]);
    assert_eq!(one.stdout, two.stdout);
}

use std::path::Path;
use std::process::{Command, Output};

fn tpjm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpjm")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_posthoc_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = tpjm(&["simulate", "--scenario", "1", "--replicates", "2", "--seed", "5", "--out", s(&sim)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let again = dir.path().join("again");
    assert!(tpjm(&["simulate", "--scenario", "1", "--replicates", "2", "--seed", "5", "--out", s(&again)]).status.success());
    for f in ["rep_0001/longitudinal.csv", "rep_0001/survival.csv", "manifest.json"] {
        assert_eq!(std::fs::read(sim.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[inla]\nstrategy = \"eb\"\n").unwrap();
    let fit = dir.path().join("fit");
    let o = tpjm(&["fit", "--engine", "inla", "--data", s(&sim.join("rep_0000")), "--config", s(&cfg), "--out", s(&fit)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("phi_b0") && table.contains("rho_a_b0"));
    assert!(fit.join("fit.txt").exists());

    let model = fit.join("fit.json");
    let o = tpjm(&["posthoc", "--model", s(&model), "--component", "b0", "--threshold-sd", "1", "--draws", "20000", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["probability"].as_f64().unwrap() - 0.158_655_253_931_457).abs() < 1e-9);
    let hr = &v["hazard_ratio"];
    assert!(hr["lower"].as_f64().unwrap() < hr["estimate"].as_f64().unwrap());
    let o2 = tpjm(&["posthoc", "--model", s(&model), "--component", "b0", "--threshold-sd", "1", "--draws", "20000", "--seed", "3"]);
    assert_eq!(o.stdout, o2.stdout);
}

fn error_of(o: &Output) -> (i32, String) {
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    (o.status.code().unwrap(), v["error"]["category"].as_str().unwrap().to_string())
}

#[test]
fn failures_carry_category_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = tpjm(&["fit", "--engine", "mle", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(error_of(&o), (3, "io".into()));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[mle]\nn_points = 7\n").unwrap();
    let o = tpjm(&["study", "--scenario", "1", "--replicates", "1", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(error_of(&o), (5, "config".into()));

    let data = dir.path().join("d");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("longitudinal.csv"), "id,time,value\n1,0,x\n").unwrap();
    std::fs::write(data.join("survival.csv"), "id,surv_time,event\n1,1,1\n").unwrap();
    let o = tpjm(&["fit", "--engine", "inla", "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(error_of(&o), (4, "parse".into()));

    let garbage = dir.path().join("g.json");
    std::fs::write(&garbage, "{}").unwrap();
    let o = tpjm(&["posthoc", "--model", s(&garbage), "--component", "b1", "--threshold-sd", "1"]);
    assert_eq!(error_of(&o).1, "format");
}

#[test]
fn study_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[inla]\nstrategy = \"eb\"\n[mle]\nn_points = 20\nmax_iter = 2\n").unwrap();
    let o = tpjm(&["study", "--scenario", "1", "--engine", "both", "--replicates", "2", "--workers", "2", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report_inla.csv", "report_mle.csv", "raw_inla.csv", "survival_inla.csv", "comparison.csv", "comparison.txt", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cmp = std::fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + 15 + 2);
    assert!(cmp.contains("convergence"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BOTH: &str = r#"{"model":"model1","bilayer":{"sigma_a":10,"sigma_b":190,"gamma_a":2e6,"gamma_b":1.4e6,"phi":0.3},"h":0.02,"v_m":0.005}"#;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("tmdiff-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn tmdiff(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmdiff")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn empty_argv_prints_usage_and_exits_1() {
    let d = scratch("empty");
    let o = tmdiff(&[], &d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert!(stderr(&o).contains("code=usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let d = scratch("unknown");
    let o = tmdiff(&["frobnicate"], &d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("code=usage"));
}

#[test]
fn config_errors_have_distinct_codes() {
    let d = scratch("bad");
    fs::write(d.join("broken.json"), "{\"model\": ").unwrap();
    fs::write(d.join("schema.json"), r#"{"model":"model2","bilayer":{"sigma_a":1,"sigma_b":2,"gamma_a":1,"gamma_b":2,"phi":0.5},"h":0.1,"v_m":0}"#).unwrap();
    fs::write(d.join("typo.json"), r#"{"model":"model1","bilayer":{"sigma_a":1,"sigma_b":2,"gamma_a":1,"gamma_b":2,"phi":0.5},"h":0.1,"vm":0}"#).unwrap();
    for (file, code) in [("broken.json", "code=config-json"), ("schema.json", "code=config-schema"), ("typo.json", "code=config-schema"), ("missing.json", "code=config-read")] {
        let o = tmdiff(&["homogenize", "--config", file], &d);
        assert_eq!(o.status.code(), Some(1), "{file}");
        assert!(stderr(&o).starts_with(code), "{file}: {}", stderr(&o));
    }
}

#[test]
fn homogenize_reports_harmonic_conductivity() {
    let d = scratch("homog");
    fs::write(d.join("both.json"), BOTH).unwrap();
    let o = tmdiff(&["homogenize", "--config", "both.json", "--out", "res"], &d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(d.join("res/homogenize.json")).unwrap()).unwrap();
    let sigma0 = doc["dimensional"]["sigma0"].as_f64().unwrap();
    assert!((sigma0 - 29.7).abs() <= 0.1);
    assert!(doc["identities"].as_array().unwrap().iter().all(|r| r["pass"] == true));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("res/homogenize.meta.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"correctors.csv") && outputs.contains(&"homogenize.json"));
    assert!(fs::read_to_string(d.join("res/correctors.csv")).unwrap().starts_with("y,P,Q,"));
}

#[test]
fn exact_dispersion_is_deterministic() {
    let d = scratch("exact");
    fs::write(d.join("both.json"), BOTH).unwrap();
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        let o = tmdiff(&["dispersion", "exact", "--config", "both.json", "--kappa-points", "20", "--out", out], &d);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        runs.push(fs::read(d.join(out).join("dispersion_exact.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs.remove(0)).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("branch,kappa,re_omega,im_omega,residual,frame"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[5], "fixed");
    // 17 significant digits
    assert_eq!(first[1].split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    assert!(text.lines().filter(|l| l.ends_with(",moving")).count() == 20);
}

#[test]
fn effective_dispersion_has_order_column() {
    let d = scratch("eff");
    let o = tmdiff(&["dispersion", "effective", "--order", "0", "--kappa-points", "4"], &d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(d.join("out/dispersion_effective.csv")).unwrap();
    assert!(text.starts_with("branch,kappa,re_omega,im_omega,residual,frame,order\n"));
    assert_eq!(text.lines().count(), 1 + 8);
    let o = tmdiff(&["dispersion", "effective", "--order", "3"], &d);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sigma_only_figure_emits_exact_and_two_orders() {
    let d = scratch("fig");
    let o = tmdiff(&["figures", "dd-sigma-only", "--kappa-points", "30"], &d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.join("out/dd-sigma-only_exact.csv").exists());
    let eff = fs::read_to_string(d.join("out/dd-sigma-only_effective.csv")).unwrap();
    let orders: std::collections::BTreeSet<&str> = eff.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(orders.into_iter().collect::<Vec<_>>(), vec!["0", "2"]);
}

#[test]
fn simulate_writes_snapshots_diagnostics_and_audit() {
    let d = scratch("sim");
    fs::write(
        d.join("sim.json"),
        r#"{"model":"model1","bilayer":{"sigma_a":500,"sigma_b":1e5,"gamma_a":2e6,"gamma_b":2e6,"phi":0.2},"h":0.1,"v_m":0.05,
            "simulation":{"domain_length":40,"n_points":256,"dt":0.5,"t_end":20,"snapshot_times":[0,10,20],"ic":{"x0":3,"nu":1}}}"#,
    )
    .unwrap();
    let o = tmdiff(&["simulate", "--config", "sim.json"], &d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let snaps = fs::read_to_string(d.join("out/snapshots.csv")).unwrap();
    assert!(snaps.starts_with("time,x,theta\n"));
    assert_eq!(snaps.lines().count(), 1 + 3 * 256);
    assert!(fs::read_to_string(d.join("out/diagnostics.csv")).unwrap().starts_with("time,mass,energy,centroid,skewness\n"));
    let audit: serde_json::Value = serde_json::from_slice(&fs::read(d.join("out/audit.json")).unwrap()).unwrap();
    assert_eq!(audit["pass"], true);
}

#[test]
fn simulate_without_block_is_a_schema_error() {
    let d = scratch("nosim");
    fs::write(d.join("both.json"), BOTH).unwrap();
    let o = tmdiff(&["simulate", "--config", "both.json"], &d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("code=config-schema"));
}

#[test]
fn validate_passes_and_summarizes() {
    let d = scratch("val");
    let o = tmdiff(&["validate"], &d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("0 failed"), "{stdout}");
    let reports: serde_json::Value = serde_json::from_slice(&fs::read(d.join("out/validate.json")).unwrap()).unwrap();
    assert!(reports.as_array().unwrap().len() > 50);
}

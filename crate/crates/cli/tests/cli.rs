use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn regbid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regbid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_of(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

/// Writes a variant of the inelastic example config with textual replacements.
fn variant(dir: &Path, edits: &[(&str, &str)]) -> String {
    let mut text = std::fs::read_to_string(configs().join("inelastic.json")).unwrap();
    for (a, b) in edits {
        assert!(text.contains(a), "{a}");
        text = text.replace(a, b);
    }
    let p = dir.join("variant.json");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn solve_reports_are_versioned_and_deterministic() {
    let a = regbid(&["solve", "--config", &cfg("inelastic.json")]);
    let b = regbid(&["solve", "--config", &cfg("inelastic.json")]);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(a.stdout, b.stdout);
    let v = json_of(&a);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["status"], "ok");
    let s = &v["solution"];
    assert!(s["xr_kw"].as_f64().unwrap() > 0.0);
    assert!(s["xr_kw"].as_f64().unwrap() <= s["xr_max_kw"].as_f64().unwrap());
}

#[test]
fn infeasible_problem_exits_three_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = variant(
        dir.path(),
        &[
            (
                "\"soc0_kwh\": 52.0",
                "\"soc0_kwh\": 0.0, \"soc_target_kwh\": 100.0",
            ),
            ("\"charge_cap_kw\": 1000.0", "\"charge_cap_kw\": 1.0"),
        ],
    );
    let out = dir.path().join("report.json");
    let o = regbid(&["solve", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["status"], "infeasible");
    assert!(v["reason"].as_str().unwrap().contains("g(0)"));
}

#[test]
fn invalid_config_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let c = variant(dir.path(), &[("\"budget_h\": 4.8", "\"budget_h\": 40")]);
    let o = regbid(&["solve", "--config", &c]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("contract.budget_h"));

    let c = variant(dir.path(), &[("\"eta_minus\": 0.92", "\"eta_minus\": 0.3")]);
    let o = regbid(&["solve", "--config", &c]);
    assert_eq!(o.status.code(), Some(2));

    let c = variant(dir.path(), &[("\"horizon_h\"", "\"horizon_hours\"")]);
    let o = regbid(&["solve", "--config", &c]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_names_the_file() {
    let o = regbid(&["solve", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/config.json"));
}

#[test]
fn sweep_m_csv() {
    let args = ["sweep-m", "--eta-grid", "0.35:1.0:0.05", "--mad", "0.0816"];
    let a = regbid(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, regbid(&args).stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("roundtrip,m,m_lower,m_upper"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 14);
    for r in &rows {
        assert!(r[2] <= r[1] + 1e-12 && r[1] <= r[3] + 1e-12, "{r:?}");
    }
    assert_eq!(
        regbid(&["sweep-m", "--eta-grid", "1:0:0.1", "--mad", "0.08"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn solve_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("solve.json");
    let o = regbid(&[
        "solve",
        "--config",
        &cfg("inelastic.json"),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let xr = s["solution"]["xr_kw"].as_f64().unwrap().to_string();
    let xb = s["solution"]["xb_kw"].as_f64().unwrap().to_string();

    let o = regbid(&[
        "verify",
        "--config",
        &cfg("inelastic.json"),
        "--xr",
        &xr,
        "--xb",
        &xb,
        "--paths",
        "400",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let v = json_of(&o);
    assert_eq!(v["pass"], true);
    assert_eq!(v["robust"]["closed_form_feasible"], true);

    // beyond the feasible segment the worst case breaks a limit
    let big = (s["solution"]["xr_max_kw"].as_f64().unwrap() * 1.05).to_string();
    let o = regbid(&[
        "verify",
        "--config",
        &cfg("inelastic.json"),
        "--xr",
        &big,
        "--paths",
        "200",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_of(&o)["status"], "failed");
}

#[test]
fn analytic_elastic_and_bounds() {
    let o = regbid(&["analytic", "--config", &cfg("elastic.json")]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_of(&o);
    assert_eq!(v["elastic"]["candidate"], "stationary");
    let f = v["energy_constrained"]["y0_star_fraction"]
        .as_f64()
        .unwrap();
    assert!((0.5..=1.0).contains(&f));

    let o = regbid(&[
        "bounds",
        "--config",
        &cfg("inelastic.json"),
        "--points",
        "11",
    ]);
    let v = json_of(&o);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 11);
    for r in rows {
        let (l, g, u) = (
            r["g_lower_kw"].as_f64().unwrap(),
            r["g_kw"].as_f64().unwrap(),
            r["g_upper_kw"].as_f64().unwrap(),
        );
        assert!(l <= g + 1e-9 && g <= u + 1e-9, "{r}");
    }
    let o = regbid(&[
        "bounds",
        "--config",
        &cfg("inelastic.json"),
        "--table",
        "psi",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn profit_sweep_csv() {
    let o = regbid(&[
        "profit",
        "--config",
        &cfg("inelastic.json"),
        "--format",
        "csv",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("horizon_h,budget_h,"));
    assert_eq!(text.lines().count(), 6);
    // elastic prices have no unit profit
    let o = regbid(&["profit", "--config", &cfg("elastic.json")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("delta.csv");
    let o = regbid(&[
        "simulate",
        "--config",
        &cfg("inelastic.json"),
        "--paths",
        "200",
        "--seed",
        "3",
        "--trajectory-out",
        t.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_of(&o);
    assert_eq!(v["seed"], 3);
    let text = std::fs::read_to_string(t).unwrap();
    assert!(text.starts_with("# dt="));
}

#[test]
fn fit_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let freq = dir.path().join("f.csv");
    let mut s = String::from("timestamp,hz\n");
    // deterministic sawtooth deviations; MAD is the mean of |z| over one tooth
    let tooth = |i: usize| ((i % 100) as f64 / 99.0 - 0.5) * 0.4;
    let mad = (0..100).map(|i| tooth(i).abs()).sum::<f64>() / 100.0;
    for i in 0..8640 {
        let z = tooth(i);
        s.push_str(
            &format!("2024-01-01T00:00:00Z,{}\n", 50.0 + 0.2 * z).replacen(
                "00:00:00",
                &format!(
                    "{:02}:{:02}:{:02}",
                    i * 10 / 3600,
                    (i * 10 / 60) % 60,
                    (i * 10) % 60
                ),
                1,
            ),
        );
    }
    std::fs::write(&freq, s).unwrap();
    let vol = dir.path().join("v.csv");
    let mut s = String::from("volume_kw,price\n");
    for i in 0..20 {
        s.push_str(&format!("{},{}\n", 10 * i, 3.9 + 0.002 * (10 * i) as f64));
    }
    std::fs::write(&vol, s).unwrap();
    let o = regbid(&[
        "fit",
        "--frequency",
        freq.to_str().unwrap(),
        "--volumes-market",
        vol.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v = json_of(&o);
    assert!((v["mad"].as_f64().unwrap() - mad).abs() < 1e-4, "{v}");
    assert!((v["cbd"].as_f64().unwrap() - 0.002).abs() < 1e-9);
    assert!((v["cb0"].as_f64().unwrap() - 3.9).abs() < 1e-9);

    assert_eq!(regbid(&["fit"]).status.code(), Some(2));
}

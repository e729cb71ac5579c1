use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eesim"))
        .args(args)
        .env_clear()
        .output()
        .expect("spawn eesim")
}

fn ok(args: &[&str]) -> String {
    let out = eesim(args);
    assert!(
        out.status.success(),
        "eesim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn one_step_gives_one_report_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", "--steps", "1", "--out", p(dir.path())]);
    assert_eq!(csv_rows(&dir.path().join("ee.csv")).len(), 1);
    for f in ["energy.csv", "results.csv", "plans.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn identical_runs_export_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&[
            "run",
            "--steps",
            "60",
            "--seed",
            "9",
            "--formats",
            "csv,json",
            "--out",
            p(d.path()),
        ]);
    }
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn summary_totals_match_energy_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", "--steps", "120", "--out", p(dir.path())]);
    let mut by_cat: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for row in csv_rows(&dir.path().join("energy.csv")) {
        let j: f64 = row[4].parse().unwrap();
        *by_cat.entry(row[3].clone()).or_default() += j;
        total += j;
    }
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["total_ec"].as_f64().unwrap(), total);
    for cat in ["rf_frontend", "data_transfer", "data_process"] {
        assert_eq!(s[cat].as_f64().unwrap(), by_cat[cat], "{cat}");
    }
    assert_eq!(
        s["p_tx"].as_f64().unwrap(),
        by_cat["rf_frontend"] + by_cat["data_transfer"]
    );

    // Per-step rows of ee.csv add up to the same split.
    let ee = csv_rows(&dir.path().join("ee.csv"));
    assert_eq!(ee.len(), 120);
    let steps_ec: f64 = ee.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((steps_ec - total).abs() <= 1e-9 * total);

    // Every published result reached the application function.
    let results = csv_rows(&dir.path().join("results.csv")).len() as u64;
    assert_eq!(s["results"].as_u64().unwrap(), results);
    assert_eq!(s["af_deliveries"].as_u64().unwrap(), results);
}

#[test]
fn plans_refresh_every_step_by_default() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", "--steps", "30", "--out", p(dir.path())]);
    let steps: std::collections::BTreeSet<u64> = csv_rows(&dir.path().join("plans.csv"))
        .iter()
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert_eq!(steps, (0..30).collect());
}

#[test]
fn compare_oracle_matches_ee() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "compare",
        "--steps",
        "80",
        "--coordinators",
        "oracle,ee",
        "--out",
        p(dir.path()),
    ]);
    let rows = csv_rows(&dir.path().join("comparison.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "oracle");
    assert_eq!(rows[1][0], "ee");
    assert_eq!(rows[0][1..], rows[1][1..]);
    assert!(stdout.starts_with("coordinator,total_ec"));
}

#[test]
fn compare_reports_savings_against_all_on() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare", "--steps", "100", "--out", p(dir.path()), "--formats", "csv"]);
    let cmp: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    let rows = cmp["rows"].as_array().unwrap();
    let ec = |name: &str| {
        rows.iter().find(|r| r["coordinator"] == name).unwrap()["total_ec"]
            .as_f64()
            .unwrap()
    };
    assert!(ec("ee") < ec("all_on"));
    let ee_row = rows.iter().find(|r| r["coordinator"] == "ee").unwrap();
    let savings = ee_row["savings_vs_all_on"].as_f64().unwrap();
    assert!((savings - (1.0 - ec("ee") / ec("all_on"))).abs() < 1e-15);
    assert!(dir.path().join("ee").join("energy.csv").exists());
    assert!(dir.path().join("all_on").join("energy.csv").exists());
}

#[test]
fn compare_needs_two_coordinators() {
    let dir = tempfile::tempdir().unwrap();
    let out = eesim(&["compare", "--coordinators", "ee", "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least two"));
}

#[test]
fn bad_inputs_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = eesim(&["run", "--scenario", p(&missing), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"schema\": \"eesim.scenario/1\", \"sim\": {}}").unwrap();
    let out = eesim(&["run", "--scenario", p(&bad), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim"));

    for args in [
        ["run", "--policy", "balanced:1.5"],
        ["run", "--coordinator", "random"],
        ["run", "--formats", "xml"],
    ] {
        let mut a = args.to_vec();
        a.extend(["--out", p(dir.path())]);
        let out = eesim(&a);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = eesim(&["run", "--steps", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn printed_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let doc = ok(&["scenario"]);
    let path = dir.path().join("emergency.json");
    fs::write(&path, &doc).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["run", "--steps", "20", "--out", p(&a)]);
    ok(&["run", "--steps", "20", "--scenario", p(&path), "--out", p(&b)]);
    assert_eq!(
        fs::read(a.join("energy.csv")).unwrap(),
        fs::read(b.join("energy.csv")).unwrap()
    );
}

#[test]
fn secf_log_uses_energy_schema() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("logs").join("secf.csv");
    ok(&["run", "--steps", "40", "--secf-log", p(&log), "--out", p(dir.path())]);
    assert_eq!(
        fs::read(&log).unwrap(),
        fs::read(dir.path().join("energy.csv")).unwrap()
    );
    assert!(dir.path().join("logs").join("secf.output.csv").exists());
}

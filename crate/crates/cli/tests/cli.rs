use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

fn total_kld(path: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["total_kld_nats"].as_f64().unwrap()
}

#[test]
fn dba_on_a_fixture_picks_the_nearest_edge() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&["assign", "--scenario", "fixture:table2", "--strategy", "dba", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("assignment-dba.json")).unwrap()).unwrap();
    let lambda = v["lambda"].as_array().unwrap();
    for row in lambda {
        assert_eq!(row.as_array().unwrap().iter().filter(|x| x.as_u64() == Some(1)).count(), 1);
    }
    let table = fs::read_to_string(dir.path().join("edges-dba.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("edge,users,samples,kld_nats,l1_to_global"));
}

#[test]
fn eara_beats_dba_on_the_skewed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&[
        "assign",
        "--scenario",
        "fixture:table3:50",
        "--strategy",
        "eara-sca,dba",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sca = total_kld(&dir.path().join("assignment-eara-sca.json"));
    let dba = total_kld(&dir.path().join("assignment-dba.json"));
    assert!(sca < dba, "{sca} vs {dba}");
}

#[test]
fn missing_scenario_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = hfl(&["assign", "--scenario", &out_arg(&missing), "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"), "{}", stderr(&o));
}

#[test]
fn malformed_scenario_reports_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut text = serde_json::to_value(hfl_core::fixtures::table2_scenario()).unwrap();
    text["users"][0]["position"] = serde_json::json!("here");
    fs::write(&path, text.to_string()).unwrap();
    let before = fs::read(&path).unwrap();
    let o = hfl(&["assign", "--scenario", &out_arg(&path), "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("users[0].position"), "{}", stderr(&o));
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn unknown_sweep_parameter_and_strategy_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&["sweep", "--scenario", "fixture:table2", "--sweep", "alpha=1,2", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = hfl(&["assign", "--scenario", "fixture:table2", "--strategy", "random"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let run = |dir: &Path| {
        let o = hfl(&[
            "train",
            "--scenario",
            "fixture:table3:100",
            "--rounds",
            "4",
            "--seed",
            "7",
            "--jobs",
            "2",
            "--centralized",
            "--target",
            "0.01",
            "--out",
            &out_arg(dir),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    for name in ["eara-sca.csv", "dba.csv", "centralized.csv", "accuracy.svg"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(a.path().join("dba.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn unreachable_target_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&[
        "train",
        "--scenario",
        "fixture:table3:100",
        "--strategy",
        "dba",
        "--rounds",
        "2",
        "--target",
        "1.01",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(dir.path().join("dba.csv").exists());
}

#[test]
fn single_value_sweep_has_one_row_per_strategy_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&[
        "sweep",
        "--scenario",
        "fixture:table3",
        "--sweep",
        "distance_scale=2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,strategy,metric,metric_value");
    // Three strategies × three metrics.
    assert_eq!(lines.len(), 1 + 9);
    assert!(lines[1..].iter().all(|l| l.starts_with("distance_scale,2,")));
    assert!(fs::read_to_string(dir.path().join("sweep.svg")).unwrap().contains("<polyline"));
}

#[test]
fn distance_sweep_keeps_the_strategy_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&[
        "sweep",
        "--scenario",
        "fixture:table3",
        "--sweep",
        "distance_scale=1,2,4",
        "--jobs",
        "3",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let kld = |value: &str, strategy: &str| -> f64 {
        csv.lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f[1] == value && f[2] == strategy && f[3] == "kld_total")
            .unwrap()[4]
            .parse()
            .unwrap()
    };
    for v in ["1", "2", "4"] {
        assert!(kld(v, "eara-dca") <= kld(v, "eara-sca") + 1e-12);
        assert!(kld(v, "eara-sca") <= kld(v, "dba") + 1e-12);
    }
    assert_eq!(kld("4", "eara-sca"), kld("4", "dba"));
}

#[test]
fn participation_sweep_writes_one_row_per_preset_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfl(&[
        "sweep",
        "--scenario",
        "fixture:table3:100",
        "--strategy",
        "dba",
        "--sweep",
        "upp=1,0.5,scd",
        "--rounds",
        "2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["1", "1", "0.5", "0.5", "scd", "scd"]);
}

const HEADER: &str = "round,accuracy,loss,bytes_up_per_user,bytes_down_per_user,kld_total\n";

fn write_trace(dir: &Path, name: &str, acc: &[f64]) {
    let mut s = HEADER.to_string();
    for (r, a) in acc.iter().enumerate() {
        let bytes = 59_156.0 * (r + 1) as f64;
        s.push_str(&format!("{},{a},0.5,{bytes},{bytes},0.1\n", r + 1));
    }
    fs::write(dir.join(format!("{name}.csv")), s).unwrap();
}

#[test]
fn report_computes_reductions_against_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    write_trace(dir.path(), "fast", &[0.5, 0.9, 0.95]);
    write_trace(dir.path(), "dba", &[0.3, 0.5, 0.7, 0.9]);
    write_trace(dir.path(), "never", &[0.1, 0.2]);
    let table = dir.path().join("report.csv");
    let o = hfl(&[
        "report",
        &out_arg(&dir.path().join("fast.csv")),
        &out_arg(&dir.path().join("dba.csv")),
        &out_arg(&dir.path().join("never.csv")),
        "--target",
        "0.9",
        "--out",
        &out_arg(&table),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("50.0%"), "{stdout}");
    assert!(stdout.contains("n/c"), "{stdout}");
    let rows: Vec<Vec<String>> = fs::read_to_string(&table)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    // 1 − 2/4.
    assert_eq!(rows[0][6], "0.5");
    assert_eq!(rows[0][3], "59156");
    assert_eq!(rows[2][1], "");
    assert_eq!(rows[2][6], "");
}

#[test]
fn report_rejects_inconsistent_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("broken.csv");
    fs::write(&p, "round,accuracy\n1,0.5\n").unwrap();
    let o = hfl(&["report", &out_arg(&p), "--target", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.csv"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use zorl::harness::{run_matrix, summarize_dir, RunConfig, CSV_HEADER, MERGED_CSV, SUMMARY_CSV};

fn zorl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zorl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        &csv::StringRecord::from(CSV_HEADER.to_vec())
    );
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn help_exits_zero() {
    let out = zorl(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["run", "solve", "dump-tree", "summarize"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = zorl(&[
        "run",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(zorl(&["run", "--bogus"]).status.code(), Some(2));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "horizon = 10\nenvs = [\"riverswim\"]\nalgos = [\"zorl\"]\nseeds = [0]\n[zorl]\nc_b = 3.0\n",
    );
    let out = zorl(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c_b"));
}

#[test]
fn ten_step_run_writes_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "horizon = 10\nenvs = [\"riverswim\"]\nalgos = [\"zorl\"]\nseeds = [3]\n",
    );
    let out_dir = dir.path().join("out");
    let out = zorl(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_rows(&out_dir.join("riverswim-zorl-s3.csv"));
    assert_eq!(rows.len(), 10);
    let mut cum = 0.0;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(&row[0], "riverswim-zorl-s3");
        assert_eq!(&row[1], "riverswim");
        assert_eq!(&row[2], "zorl");
        assert_eq!(&row[3], "3");
        assert_eq!(row[4].parse::<u64>().unwrap(), i as u64 + 1);
        let raw: f64 = row[5].parse().unwrap();
        cum += raw;
        assert!((row[6].parse::<f64>().unwrap() - cum).abs() < 1e-12);
        // Seventeen significant digits survive a text round trip.
        assert_eq!(format!("{:.16e}", raw), row[5]);
    }
    assert!(out_dir.join(SUMMARY_CSV).is_file());
}

#[test]
fn solve_prints_the_chain_index() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{
        "actions": [
            [{"reward": 1.0, "center": [0.5, 0.5], "radius": 0.0},
             {"reward": 1.0, "center": [0.9, 0.1], "radius": 0.0}],
            [{"reward": 0.0, "center": [0.1, 0.9], "radius": 0.0},
             {"reward": 0.0, "center": [0.2, 0.8], "radius": 0.0}]
        ],
        "span_bound": 4.0,
        "gamma": 0.99,
        "floor": 0.0
    }"#;
    let path = dir.path().join("m.json");
    fs::write(&path, model).unwrap();
    let out = zorl(&[
        "solve",
        "--model",
        path.to_str().unwrap(),
        "--epsilon",
        "1e-9",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["index"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-6);
    assert_eq!(report["policy"][1], 1);
}

#[test]
fn dump_tree_lists_cells() {
    let out = zorl(&["dump-tree", "--env", "riverswim", "--horizon", "300"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!out.stdout.is_empty());
    assert_eq!(
        zorl(&["dump-tree", "--env", "nowhere"]).status.code(),
        Some(2)
    );
}

const MATRIX: &str = "horizon = 400\nenvs = [\"riverswim\", \"synthetic-finite\"]\nalgos = [\"zorl\", \"ucrl2\", \"rviq\"]\nseeds = [0, 1]\n";

#[test]
fn reruns_are_byte_identical_and_parallelism_is_invisible() {
    let dir = tempfile::tempdir().unwrap();
    let serial = RunConfig::from_toml(&format!("{MATRIX}parallelism = 1\n")).unwrap();
    let parallel = RunConfig::from_toml(&format!("{MATRIX}parallelism = 4\n")).unwrap();
    let a = run_matrix(&serial, &dir.path().join("a")).unwrap();
    let b = run_matrix(&serial, &dir.path().join("b")).unwrap();
    let c = run_matrix(&parallel, &dir.path().join("c")).unwrap();
    assert_eq!(a.failed(), 0);
    for spec in serial.runs() {
        let name = format!("{}.csv", spec.run_id());
        let fa = fs::read(dir.path().join("a").join(&name)).unwrap();
        assert_eq!(fa, fs::read(dir.path().join("b").join(&name)).unwrap());
        assert_eq!(fa, fs::read(dir.path().join("c").join(&name)).unwrap());
    }
    for file in [MERGED_CSV, SUMMARY_CSV] {
        let fa = fs::read(a.out_dir.join(file)).unwrap();
        assert_eq!(fa, fs::read(b.out_dir.join(file)).unwrap());
        assert_eq!(fa, fs::read(c.out_dir.join(file)).unwrap());
    }
    let merged = read_rows(&a.out_dir.join(MERGED_CSV));
    assert_eq!(merged.len(), 400 * serial.runs().len());
}

#[test]
fn summarize_reports_one_row_per_algo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(
        "horizon = 300\nenvs = [\"riverswim\"]\nalgos = [\"zorl\", \"ucrl2\", \"rviq\"]\nseeds = [0, 1, 2]\n",
    )
    .unwrap();
    let report = run_matrix(&cfg, dir.path()).unwrap();
    let rows = summarize_dir(dir.path()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.runs == 3 && r.failed == 0));
    // The direct aggregate of the per-run CSVs agrees with the summary.
    for row in &rows {
        let finals: Vec<f64> = report
            .results
            .iter()
            .filter(|r| r.spec.algo.to_string() == row.algo)
            .map(|r| r.trace.cumulative_raw_reward())
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        assert!((mean - row.mean).abs() < 1e-9);
    }
    // Without merged.csv the per-run files give the same table.
    fs::remove_file(dir.path().join(MERGED_CSV)).unwrap();
    assert_eq!(summarize_dir(dir.path()).unwrap(), rows);

    let out = zorl(&["summarize", "--in", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for algo in ["zorl", "ucrl2", "rviq"] {
        assert!(text.contains(algo));
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use biplik::io::read_events_path;
use biplik_cli::{cmd_cluster, cmd_fit, cmd_report, cmd_simulate, corpus_summary, EventsFormat, RunConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biplik"))
}

fn write_spec(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("spec.json");
    fs::write(&p, body).unwrap();
    p
}

/// Ten actors with linear participation and constant collaboration.
fn ten_actor_spec() -> String {
    let params: Vec<String> = (0..10)
        .map(|k| {
            let u = k as f64 / 9.0;
            format!(
                "{{\"alpha\":[{},{}],\"beta\":[{}]}}",
                -2.0 + u,
                0.3 - 0.6 * u,
                0.4 - 0.5 * u
            )
        })
        .collect();
    format!(
        "{{\"periods\":[\"2001\",\"2002\",\"2003\",\"2004\"],\"events_per_period\":400,\"order1\":1,\"order2\":0,\"params\":[{}]}}",
        params.join(",")
    )
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn simulated(dir: &Path, spec: &str, seed: u64) -> PathBuf {
    let mut cfg = RunConfig::new(write_spec(dir, spec), dir.join("sim"));
    cfg.seed = seed;
    cmd_simulate(&cfg).unwrap();
    dir.join("sim").join("events.csv")
}

fn fit_cfg(input: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(input, out);
    cfg.order1 = 1;
    cfg.order2 = 0;
    cfg
}

fn same_artifacts(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "timing.json")
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn fit_writes_one_row_per_actor_and_period() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulated(dir.path(), &ten_actor_spec(), 11);
    let out = dir.path().join("fit");
    let outcome = cmd_fit(&fit_cfg(&events, &out)).unwrap();
    assert!(outcome.converged);
    assert_eq!(data_rows(&out.join("params.csv")).len(), 10);
    assert_eq!(data_rows(&out.join("trajectories.csv")).len(), 40);
    let first = fs::read_to_string(out.join("params.csv")).unwrap();
    let first = first.lines().next().unwrap();
    assert!(first.starts_with("# biplik "));
    assert!(first.contains("config_sha256="));
    assert!(first.contains("time_map=2001:-1;"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("fit_report.json")).unwrap()).unwrap();
    let trace = report["trace"].as_array().unwrap();
    for w in trace.windows(2) {
        assert!(w[1].as_f64().unwrap() >= w[0].as_f64().unwrap() - 1e-10);
    }
    assert!(report["normalized_pl"].as_f64().unwrap() < 0.0);
    assert_eq!(report["config"]["order1"], 1);
    let timing: Value = serde_json::from_str(&fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert!(timing["wall_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn expected_counts_follow_participation() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulated(dir.path(), &ten_actor_spec(), 12);
    let out = dir.path().join("fit");
    cmd_fit(&fit_cfg(&events, &out)).unwrap();
    for row in data_rows(&out.join("trajectories.csv")) {
        let f: Vec<&str> = row.split(',').collect();
        let eta: f64 = f[2].parse().unwrap();
        let expected: f64 = f[4].parse().unwrap();
        let p = 1.0 / (1.0 + (-eta).exp());
        assert!((expected - 400.0 * p).abs() < 1e-9 * expected.max(1.0));
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &ten_actor_spec());
    for (k, threads) in [(0, None), (1, Some(1)), (2, Some(4))] {
        let mut cfg = RunConfig::new(&spec, dir.path().join(format!("sim{k}")));
        cfg.seed = 5;
        cfg.threads = threads;
        biplik_cli::with_threads(threads, || cmd_simulate(&cfg)).unwrap().unwrap();
        let mut fit = fit_cfg(&dir.path().join("sim0/events.csv"), &dir.path().join(format!("fit{k}")));
        fit.threads = threads;
        biplik_cli::with_threads(threads, || cmd_fit(&fit)).unwrap().unwrap();
        let mut cl = fit_cfg(&dir.path().join("sim0/events.csv"), &dir.path().join(format!("cl{k}")));
        cl.h1 = Some(2);
        cl.h2 = Some(2);
        cl.threads = threads;
        biplik_cli::with_threads(threads, || cmd_cluster(&cl)).unwrap().unwrap();
    }
    for k in 1..3 {
        same_artifacts(&dir.path().join("sim0"), &dir.path().join(format!("sim{k}")));
        same_artifacts(&dir.path().join("fit0"), &dir.path().join(format!("fit{k}")));
        same_artifacts(&dir.path().join("cl0"), &dir.path().join(format!("cl{k}")));
    }
}

#[test]
fn zero_events_give_empty_corpus_and_valid_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "{\"periods\":[\"1\"],\"events_per_period\":0,\"targets\":[{\"eta\":[-1,-2],\"eta_pair\":[[0,0.5],[0.5,0]]}]}";
    let mut cfg = RunConfig::new(write_spec(dir.path(), spec), dir.path().join("sim"));
    cfg.events_format = EventsFormat::Jsonl;
    cmd_simulate(&cfg).unwrap();
    let body = fs::read_to_string(dir.path().join("sim/events.jsonl")).unwrap();
    assert!(body.is_empty());
    let truth: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sim/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["events_per_period"][0], 0);
    assert_eq!(truth["periods"][0]["joint"].as_array().unwrap().len(), 4);
}

#[test]
fn two_actor_table_matches_target() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "{\"periods\":[\"1\"],\"events_per_period\":1000000,\"targets\":[{\"eta\":[-3,-1],\"eta_pair\":[[0,2],[2,0]]}]}";
    let mut cfg = RunConfig::new(write_spec(dir.path(), spec), dir.path().join("sim"));
    cfg.seed = 3;
    cfg.events_format = EventsFormat::Jsonl;
    cmd_simulate(&cfg).unwrap();
    let events = read_events_path(&dir.path().join("sim/events.jsonl")).unwrap();
    assert_eq!(events.len(), 1_000_000);
    let mut cells = [0u64; 4];
    for e in &events {
        let zi = e.actors.iter().any(|a| a == "a1") as usize;
        let zj = e.actors.iter().any(|a| a == "a2") as usize;
        cells[2 * zi + zj] += 1;
    }
    let want = [0.717, 0.235, 0.014, 0.034];
    for (c, w) in cells.iter().zip(want) {
        let p = *c as f64 / 1e6;
        assert!((p - w).abs() < 0.002, "{cells:?}");
    }
}

#[test]
fn one_group_ratio_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulated(dir.path(), &ten_actor_spec(), 21);
    let mut cfg = fit_cfg(&events, &dir.path().join("cl"));
    cfg.h1 = Some(1);
    cfg.h2 = Some(1);
    cmd_cluster(&cfg).unwrap();
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cl/cluster_report.json")).unwrap()).unwrap();
    assert_eq!(report["improvement_ratio"].as_f64().unwrap(), 0.0);
    assert!(report["cpl"].as_f64().unwrap() <= report["pl_fixed"].as_f64().unwrap());
}

#[test]
fn grouped_corpus_concentrates_on_four_cells() {
    let dir = tempfile::tempdir().unwrap();
    // 12 actors: participation group from k / 6, collaboration group from (k / 3) % 2.
    let params: Vec<String> = (0..12)
        .map(|k| {
            let a = if k / 6 == 0 { -3.0 } else { -1.5 };
            let b = if (k / 3) % 2 == 0 { 0.0 } else { 1.2 };
            format!("{{\"alpha\":[{a}],\"beta\":[{b}]}}")
        })
        .collect();
    let spec = format!(
        "{{\"periods\":[\"1\",\"2\",\"3\"],\"events_per_period\":3000,\"order1\":0,\"order2\":0,\"params\":[{}],\"blocks\":[[0,1,2],[3,4,5],[6,7,8],[9,10,11]]}}",
        params.join(",")
    );
    let events = simulated(dir.path(), &spec, 8);
    let mut cfg = RunConfig::new(&events, dir.path().join("cl"));
    cfg.order1 = 0;
    cfg.order2 = 0;
    cfg.h1 = Some(2);
    cfg.h2 = Some(2);
    cmd_cluster(&cfg).unwrap();
    let rows = data_rows(&dir.path().join("cl/clusters.csv"));
    assert_eq!(rows.len(), 12);
    let mut by_cell = std::collections::BTreeMap::new();
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        let k: usize = f[0][1..].parse::<usize>().unwrap() - 1;
        let truth = (k / 6, (k / 3) % 2);
        by_cell
            .entry(truth)
            .or_insert_with(std::collections::BTreeSet::new)
            .insert((f[1].to_string(), f[2].to_string()));
    }
    assert_eq!(by_cell.len(), 4);
    let cells: std::collections::BTreeSet<_> = by_cell.values().map(|s| {
        assert_eq!(s.len(), 1, "a true cell split across groups");
        s.iter().next().unwrap().clone()
    }).collect();
    assert_eq!(cells.len(), 4);
    let cross = fs::read_to_string(dir.path().join("cl/cross_class.csv")).unwrap();
    assert!(cross.contains("total,6,6,12"));
}

#[test]
fn report_totals_equal_simulated_counts() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulated(dir.path(), &ten_actor_spec(), 4);
    let out = dir.path().join("rep");
    cmd_report(&RunConfig::new(&events, &out)).unwrap();
    let md = fs::read_to_string(out.join("summary.md")).unwrap();
    assert!(md.contains("- events: 1600\n"));
    for label in ["2001", "2002", "2003", "2004"] {
        assert!(md.contains(&format!("| {label} | 400 |")));
    }
    let records = read_events_path(&events).unwrap();
    let stats = biplik::stats::ingest(records.clone()).unwrap();
    assert_eq!(corpus_summary(&records, &stats).events, stats.total_events());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "event_id,time,actor\ne1,2001,A\ne1,2001,B\ne2,2001\n").unwrap();
    let out = bin()
        .args(["fit", "--input"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));

    let events = simulated(dir.path(), &ten_actor_spec(), 9);
    let out = bin()
        .args(["fit", "--order1", "1", "--order2", "0", "--max-sweeps", "1", "--tol", "1e-14", "--input"])
        .arg(&events)
        .arg("--out")
        .arg(dir.path().join("nc"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("nc/fit_report.json").exists());

    let out = bin()
        .args(["fit", "--threads", "2", "--order1", "1", "--order2", "0", "--input"])
        .arg(&events)
        .arg("--out")
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let out = bin()
        .args(["cluster", "--input"])
        .arg(&events)
        .arg("--out")
        .arg(dir.path().join("c"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

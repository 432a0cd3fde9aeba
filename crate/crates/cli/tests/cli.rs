use std::fs;
use std::path::Path;
use std::process::Command;

use sewer_ccmpc_cli::run_from_args;

const BIN: &str = env!("CARGO_BIN_EXE_sewer-ccmpc");

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["sewer-ccmpc"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_from_args(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn bundled_text() -> String {
    let topo = sewer_ccmpc::network::bundled_ten_tank();
    sewer_ccmpc::network::serialize_topology(&topo)
}

#[test]
fn validate_bundled_config() {
    let (code, out, _) = run(&["validate"]);
    assert_eq!(code, 0);
    assert!(out.contains("ok"));
}

#[test]
fn validate_reports_unstable_tank() {
    let dir = tempfile::tempdir().unwrap();
    let mut topo = sewer_ccmpc::network::bundled_ten_tank();
    topo.tanks[0].beta = 1.0 / topo.delta_t;
    let path = dir.path().join("bad.json");
    fs::write(&path, sewer_ccmpc::network::serialize_topology(&topo)).unwrap();
    let (code, _, err) = run(&["--config", path.to_str().unwrap(), "validate"]);
    assert_eq!(code, 1);
    assert!(err.contains("discrete-stability"), "{err}");
    assert!(err.contains("T1"), "{err}");
}

#[test]
fn validate_missing_file_is_io_error() {
    let (code, _, err) = run(&["--config", "/nonexistent/net.json", "validate"]);
    assert_eq!(code, 2);
    assert!(err.contains("/nonexistent/net.json"));
}

#[test]
fn validate_malformed_json_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    fs::write(&path, "{ not json").unwrap();
    let (code, _, _) = run(&["--config", path.to_str().unwrap(), "validate"]);
    assert_eq!(code, 1);
}

#[test]
fn binary_exit_codes() {
    let status = Command::new(BIN).arg("validate").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    let status = Command::new(BIN).args(["--config", "/nonexistent.json", "validate"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let status = Command::new(BIN).args(["simulate", "--controller", "oracle"]).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

fn summary(dir: &Path, name: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(format!("simulate_{name}_summary.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn perfect_mpc_on_the_reference_storm_does_not_spill() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = run(&[
        "--out", out, "simulate", "--controller", "perfect", "--duration-min", "90", "--intensity", "0.7",
    ]);
    assert_eq!(code, 0, "{err}");
    let s = summary(dir.path(), "perfect_mpc");
    assert_eq!(s["outcome"], "feasible_clean");
    assert_eq!(s["total_overflow_m3"].as_f64().unwrap(), 0.0);

    // Independent recount from the trace: the weir columns stay at zero.
    let trace = fs::read_to_string(dir.path().join("simulate_perfect_mpc_trace.csv")).unwrap();
    let mut lines = trace.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let weirs: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("qw_")).collect();
    assert!(!weirs.is_empty());
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        for &i in &weirs {
            assert_eq!(cols[i].parse::<f64>().unwrap(), 0.0, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, s["steps"].as_u64().unwrap() as usize);
}

#[test]
fn ccmpc_in_light_rain_never_backs_off() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = run(&[
        "--out", out, "simulate", "--controller", "ccmpc", "--gammas", "0.95,0.9,0.8,0.7,0.6", "--duration-min",
        "60", "--intensity", "0.3",
    ]);
    assert_eq!(code, 0, "{err}");
    let s = summary(dir.path(), "ccmpc_0.95_0.9_0.8_0.7_0.6");
    let usage = s["gamma_usage"].as_array().unwrap();
    assert_eq!(usage.len(), 1, "{usage:?}");
    assert_eq!(usage[0]["gamma"], "0.95");
    assert_eq!(usage[0]["steps"], s["steps"]);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["--out", out, "--seed", "3", "simulate", "--controller", "imperfect", "--intensity", "2.0"];
    assert_eq!(run(&args).0, 0);
    let read = |suffix: &str| fs::read(dir.path().join(format!("simulate_imperfect_mpc_{suffix}"))).unwrap();
    let first = (read("trace.csv"), read("summary.json"), read("manifest.json"));
    assert_eq!(run(&args).0, 0);
    assert_eq!(first, (read("trace.csv"), read("summary.json"), read("manifest.json")));
}

#[test]
fn outputs_carry_the_manifest_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["--out", out, "simulate", "--controller", "perfect"]).0, 0);
    let s = summary(dir.path(), "perfect_mpc");
    let hash = s["manifest_sha256"].as_str().unwrap().to_string();
    let manifest = fs::read(dir.path().join("simulate_perfect_mpc_manifest.json")).unwrap();
    assert_eq!(sewer_ccmpc_cli::hex(&<sha2::Sha256 as sha2::Digest>::digest(&manifest)), hash);
    let trace = fs::read_to_string(dir.path().join("simulate_perfect_mpc_trace.csv")).unwrap();
    assert!(trace.contains(&hash));
}

#[test]
fn output_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let status = Command::new(BIN)
        .current_dir(dir.path())
        .env("SEWER_CCMPC_OUT", &target)
        .args(["simulate", "--controller", "perfect", "--intensity", "0.2"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(target.join("simulate_perfect_mpc_summary.json").exists());

    let flag = dir.path().join("from_flag");
    let status = Command::new(BIN)
        .current_dir(dir.path())
        .env("SEWER_CCMPC_OUT", &target)
        .args(["--out", flag.to_str().unwrap(), "simulate", "--controller", "perfect", "--intensity", "0.2"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag.join("simulate_perfect_mpc_summary.json").exists());
}

#[test]
fn manifest_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("run.json");
    let from_file = dir.path().join("file_out");
    fs::write(&manifest, format!(r#"{{"out": "{}", "seed": 9}}"#, from_file.display())).unwrap();
    let m = manifest.to_str().unwrap();
    assert_eq!(run(&["--manifest", m, "simulate", "--controller", "perfect"]).0, 0);
    assert!(from_file.join("simulate_perfect_mpc_manifest.json").exists());
    let written = fs::read_to_string(from_file.join("simulate_perfect_mpc_manifest.json")).unwrap();
    assert!(written.contains("\"seed\": 9"));

    let flag = dir.path().join("flag_out");
    assert_eq!(
        run(&["--manifest", m, "--out", flag.to_str().unwrap(), "--seed", "4", "simulate", "--controller", "perfect"]).0,
        0
    );
    let written = fs::read_to_string(flag.join("simulate_perfect_mpc_manifest.json")).unwrap();
    assert!(written.contains("\"seed\": 4"));
}

fn sweep_small(out: &str) -> (i32, String, String) {
    run(&[
        "--out", out, "sweep", "--durations-h", "0.5,3", "--intensities", "1,2", "--realizations", "2", "--gammas",
        "0.95,0.7",
    ])
}

#[test]
fn sweep_writes_one_csv_and_svgs_per_controller() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = sweep_small(out);
    assert_eq!(code, 0, "{err}");
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    // Benchmark, imperfect and two CC levels.
    let heatmaps = names.iter().filter(|n| n.starts_with("heatmap_")).count();
    let overlays = names.iter().filter(|n| n.starts_with("false_positive_")).count();
    assert_eq!(heatmaps, 4, "{names:?}");
    assert_eq!(overlays, 3, "{names:?}");
    assert!(names.contains(&"sweep.csv".to_string()));
    assert!(names.contains(&"feasibility_lines.csv".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 2);

    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    // 4 cells × (benchmark + imperfect + 2 CC) × 2 realizations.
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4 * 4 * 2);

    let overlay = fs::read_to_string(dir.path().join("false_positive_ccmpc_0.95.svg")).unwrap();
    assert!(!overlay.contains("class=\"fp\""));
}

#[test]
fn sweep_rejects_unknown_controller() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(&["--out", dir.path().to_str().unwrap(), "sweep", "--controllers", "lqr"]);
    assert_eq!(code, 1);
}

const HEADER: &str =
    "duration_s,intensity_ums,realization,controller,gamma,status,infeasible_step,overflow_m3,benchmark_feasible";

/// One cell where CC holds down to 0.80 and imperfect MPC fails 4 of 10.
fn storm_cell_csv() -> String {
    let mut s = format!("{HEADER}\n");
    for r in 0..10 {
        s.push_str(&format!("5400,2.5,{r},perfect_mpc,,feasible_clean,,0,true\n"));
        let status = if r < 4 { "infeasible_step_30,30" } else { "feasible_clean," };
        s.push_str(&format!("5400,2.5,{r},imperfect_mpc,,{status},0,true\n"));
        s.push_str(&format!("5400,2.5,{r},ccmpc,0.95,infeasible_step_28,28,0,true\n"));
        s.push_str(&format!("5400,2.5,{r},ccmpc,0.9,infeasible_step_31,31,0,true\n"));
        s.push_str(&format!("5400,2.5,{r},ccmpc,0.8,feasible_clean,,0,true\n"));
        let fp = if r == 7 { "false_positive_overflow,,12.5" } else { "feasible_clean,,0" };
        s.push_str(&format!("5400,3,{r},imperfect_mpc,,{fp},true\n"));
    }
    s
}

#[test]
fn report_labels_the_storm_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    fs::write(&csv, storm_cell_csv()).unwrap();
    let out = dir.path().join("report");
    let (code, text, err) = run(&["--out", out.to_str().unwrap(), "report", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(text.contains("0.80-covered / 40% infeasible"), "{text}");
    let cells = fs::read_to_string(out.join("report_cells.csv")).unwrap();
    assert!(cells.lines().any(|l| l.ends_with(",0.80-covered / 40% infeasible")), "{cells}");
}

#[test]
fn report_rates_match_a_recount() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let text = storm_cell_csv();
    fs::write(&csv, &text).unwrap();
    let out = dir.path().join("report");
    assert_eq!(run(&["--out", out.to_str().unwrap(), "report", csv.to_str().unwrap()]).0, 0);

    // Recount straight from the raw rows.
    let mut per_cell: std::collections::BTreeMap<(String, String), (usize, usize)> = Default::default();
    let mut fp: std::collections::BTreeMap<String, usize> = Default::default();
    for line in text.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        let name = if c[4].is_empty() { c[3].to_string() } else { format!("{}_{}", c[3], c[4]) };
        if c[5] == "false_positive_overflow" {
            *fp.entry(name.clone()).or_default() += 1;
        }
        if c[3] == "imperfect_mpc" {
            let e = per_cell.entry((c[0].to_string(), c[1].to_string())).or_default();
            e.1 += 1;
            if c[5].starts_with("infeasible") {
                e.0 += 1;
            }
        }
    }
    let cells = fs::read_to_string(out.join("report_cells.csv")).unwrap();
    for line in cells.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        let (bad, n) = per_cell[&(c[0].to_string(), c[1].to_string())];
        assert_eq!(c[3].parse::<usize>().unwrap(), bad);
        assert_eq!(c[4].parse::<usize>().unwrap(), n);
        assert_eq!(c[5].parse::<f64>().unwrap(), bad as f64 / n as f64);
    }
    let fps = fs::read_to_string(out.join("report_false_positives.csv")).unwrap();
    for line in fps.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        assert_eq!(c[2].parse::<usize>().unwrap(), fp.get(c[0]).copied().unwrap_or(0), "{line}");
    }
}

#[test]
fn report_of_empty_csv_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "").unwrap();
    let out = dir.path().join("report");
    let (code, _, err) = run(&["--out", out.to_str().unwrap(), "report", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let cells = fs::read_to_string(out.join("report_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1);
}

#[test]
fn report_rejects_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "duration,intensity\n1,2\n").unwrap();
    let (code, _, _) = run(&["--out", dir.path().to_str().unwrap(), "report", csv.to_str().unwrap()]);
    assert_eq!(code, 1);
    let bad_status = format!("{HEADER}\n5400,2.5,0,imperfect_mpc,,exploded,,0,true\n");
    fs::write(&csv, bad_status).unwrap();
    let (code, _, _) = run(&["--out", dir.path().to_str().unwrap(), "report", csv.to_str().unwrap()]);
    assert_eq!(code, 1);
    let (code, _, _) = run(&["--out", dir.path().to_str().unwrap(), "report", "/nonexistent/sweep.csv"]);
    assert_eq!(code, 2);
}

#[test]
fn bundled_config_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    fs::write(&path, bundled_text()).unwrap();
    assert_eq!(run(&["--config", path.to_str().unwrap(), "validate"]).0, 0);
}

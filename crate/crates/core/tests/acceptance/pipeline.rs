//! End-to-end runs through the command-line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::Path;
use std::process::Command;

use porflow::cli::{cli_main_with, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE};
use porflow::output::{snapshot_path, validate_vtk, CSV_HEADER, SCALAR_NAMES, SUMMARY_HEADER};

use crate::common::scratch_dir;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("porflow").chain(args.iter().copied()).map(OsString::from);
    let code = cli_main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_snapshots_and_iteration_table() {
    let dir = scratch_dir("cli-run");
    let cfg = write_config(&dir, "preset = haverkamp-recharge\n\n[time]\nT = 0.3\n\n[output]\nsnapshot_every = 2\n");
    let out_dir = dir.join("out");
    let (code, out, err) = cli(&["run", &cfg, "--output", out_dir.to_str().unwrap(), "--set", "strategy=MON-Newton"]);
    assert_eq!(code, EXIT_OK, "{out}{err}");

    for n in [0, 2, 3] {
        let text = fs::read_to_string(snapshot_path(&out_dir, n)).unwrap();
        let vtk = validate_vtk(&text).unwrap();
        assert_eq!(vtk.dimensions, [21, 31, 1]);
        for name in SCALAR_NAMES {
            assert!(vtk.scalar(name).unwrap().iter().all(|v| v.is_finite()));
        }
    }
    assert!(!snapshot_path(&out_dir, 1).exists());

    let csv = fs::read_to_string(out_dir.join("iterations.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 3 + 1, "{csv}");
    let total: usize = lines[1..4]
        .iter()
        .map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap())
        .sum();
    assert!(lines[4].starts_with("TOTAL"), "{csv}");
    assert_eq!(lines[4].split(',').nth(3).unwrap().parse::<usize>().unwrap(), total);
    for l in &lines[1..4] {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), CSV_HEADER.split(',').count());
        assert_eq!(cols[2], "MON-Newton");
        assert_eq!(cols[4], "true");
    }
}

#[test]
fn full_benchmark_table_has_thirty_steps() {
    let dir = scratch_dir("cli-full");
    let cfg = write_config(&dir, "preset = haverkamp-recharge\n");
    let (code, out, err) = cli(&["run", &cfg, "--output", dir.join("out").to_str().unwrap(), "--no-vtk"]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    let csv = fs::read_to_string(dir.join("out/iterations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32, "header, 30 steps and the total");
    assert!(csv.lines().nth(30).unwrap().starts_with("30,3,"), "{csv}");
    assert!(fs::read_dir(dir.join("out")).unwrap().all(|e| {
        let name = e.unwrap().file_name();
        !name.to_string_lossy().ends_with(".vtk")
    }));
}

#[test]
fn compare_writes_summary_and_cell_tables() {
    let dir = scratch_dir("cli-compare");
    let cfg = write_config(&dir, "preset = haverkamp-recharge\n[time]\nT = 0.2\n");
    let (code, out, err) = cli(&[
        "compare",
        &cfg,
        "--strategies",
        "MON-LS,NonLinS-Newton",
        "--dx",
        "1/10",
        "--dt",
        "1/10,1/20",
        "--jobs",
        "2",
        "--output",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines.len(), 5, "{summary}");
    for stem in [
        "MON-LS_dx1-10_dt1-10",
        "MON-LS_dx1-10_dt1-20",
        "NonLinS-Newton_dx1-10_dt1-10",
        "NonLinS-Newton_dx1-10_dt1-20",
    ] {
        let csv = fs::read_to_string(dir.join(format!("{stem}.csv"))).unwrap();
        assert!(csv.starts_with(CSV_HEADER), "{stem}");
    }
    assert!(out.contains("MON-LS") && out.contains("NonLinS-Newton"), "{out}");
}

#[test]
fn non_convergence_exits_two() {
    let dir = scratch_dir("cli-fail");
    let cfg = write_config(&dir, "preset = haverkamp-recharge\n[time]\nT = 0.2\n[scheme]\nmax_iter = 1\ntol = 1e-14\n");
    let (code, out, _) = cli(&["run", &cfg, "--output", dir.join("out").to_str().unwrap(), "--no-vtk"]);
    assert_eq!(code, EXIT_NOT_CONVERGED, "{out}");
    let csv = fs::read_to_string(dir.join("out/iterations.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("false"), "{csv}");
}

#[test]
fn configuration_errors_exit_one() {
    let dir = scratch_dir("cli-bad");
    let cfg = write_config(&dir, "preset = haverkamp-recharge\n[scheme]\ntol = -1\n");
    let (code, _, err) = cli(&["run", &cfg]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("tol"), "{err}");

    let cfg = write_config(&dir, "preset = haverkamp-recharge\n");
    assert_eq!(cli(&["run", &cfg, "--set", "no_such_key=1"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", &cfg, "--set", "n"]).0, EXIT_USAGE);
    assert_eq!(cli(&["compare", &cfg, "--strategies", "MON-Magic"]).0, EXIT_USAGE);
    assert_eq!(cli(&["compare", &cfg, "--dx", "0"]).0, EXIT_USAGE);
}

#[test]
fn printed_preset_runs_as_a_config() {
    let (code, text, _) = cli(&["print-preset", "haverkamp-recharge"]);
    assert_eq!(code, EXIT_OK);
    let parsed = porflow::config::parse_config(&text).unwrap();
    assert_eq!(parsed, porflow::config::RunConfig::recharge_preset());
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_porflow");
    let status = Command::new(exe).arg("--version").output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&status.stdout).contains("porflow"));

    let status = Command::new(exe).args(["run", "/definitely/missing.cfg"]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&status.stderr).contains("missing.cfg"));

    let quick = Command::new(exe).args(["verify", "--quick"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&quick.stdout);
    assert_eq!(quick.status.code(), Some(EXIT_OK), "{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count() >= 8, "{stdout}");
}

//! Command-line interface: `run`, `compare`, `verify` and `print-preset`.
//!
//! Exit codes: 0 when every run converged (or every check passed), 2 when a
//! run failed to converge, 1 on usage and configuration errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::config::{self, parse_config, parse_number, RunConfig};
use crate::driver::run_simulation;
use crate::output::{self, CompareCell};
use crate::problem::RechargeBenchmark;
use crate::schemes::Strategy;
use crate::verification::{verify_report, VerifyLevel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "porflow", version, about = "Coupled Richards flow, dynamic capillarity and reactive transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Override a configuration key, e.g. `--set n=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Skip VTK snapshots.
        #[arg(long)]
        no_vtk: bool,
    },
    /// Run every strategy on every (dx, dt) cell and tabulate iteration totals.
    Compare {
        config: PathBuf,
        /// Comma-separated strategy names.
        #[arg(long, value_delimiter = ',', default_value = "MON-Newton,MON-LS,MON-Mixed,NonLinS-LS")]
        strategies: Vec<String>,
        /// Comma-separated cell sizes; fractions such as 1/20 are accepted.
        #[arg(long, value_delimiter = ',')]
        dx: Vec<String>,
        /// Comma-separated time steps.
        #[arg(long, value_delimiter = ',')]
        dt: Vec<String>,
        /// Concurrent runs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the verification suite.
    Verify {
        /// Skip the manufactured-solution order studies.
        #[arg(long)]
        quick: bool,
    },
    /// Print a preset configuration.
    PrintPreset { name: String },
}

/// Parses `argv` (including the program name) and runs the command, writing
/// to `out` and `err`.
pub fn cli_main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            if code == EXIT_OK {
                let _ = write!(out, "{}", e.render());
            } else {
                let _ = write!(err, "{}", e.render());
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

pub fn cli_main(args: impl IntoIterator<Item = OsString>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    cli_main_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    for assignment in &overrides.set {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{assignment}`"))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| e.to_string())?;
    }
    if let Some(dir) = &overrides.output {
        cfg.output_dir = dir.clone();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, String> {
    match command {
        Command::Run {
            config,
            overrides,
            no_vtk,
        } => {
            let cfg = load(&config, &overrides)?;
            run_one(&cfg, !no_vtk, out)
        }
        Command::Compare {
            config,
            strategies,
            dx,
            dt,
            jobs,
            overrides,
        } => {
            let cfg = load(&config, &overrides)?;
            let strategies = strategies
                .iter()
                .map(|s| Strategy::parse(s).ok_or_else(|| format!("unknown strategy `{s}`")))
                .collect::<Result<Vec<_>, _>>()?;
            let numbers = |list: &[String], default: f64, what: &str| -> Result<Vec<f64>, String> {
                if list.is_empty() {
                    return Ok(vec![default]);
                }
                list.iter()
                    .map(|s| parse_number(s).filter(|v| *v > 0.0).ok_or_else(|| format!("bad {what} `{s}`")))
                    .collect()
            };
            let dxs = numbers(&dx, cfg.dx(), "dx")?;
            let dts = numbers(&dt, cfg.dt, "dt")?;
            let jobs = jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
                .max(1);
            let cells = compare(&cfg, &strategies, &dxs, &dts, jobs)?;
            fs::create_dir_all(&cfg.output_dir).map_err(|e| format!("{}: {e}", cfg.output_dir.display()))?;
            let summary = cfg.output_dir.join("summary.csv");
            fs::write(&summary, output::summary_csv(&cells)).map_err(|e| format!("{}: {e}", summary.display()))?;
            let _ = write!(out, "{}", output::summary_table(&cells));
            let _ = writeln!(out, "summary written to {}", summary.display());
            Ok(if cells.iter().all(|c| c.converged) {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Command::Verify { quick } => {
            let level = if quick { VerifyLevel::Quick } else { VerifyLevel::Full };
            let results = verify_report(level);
            for r in &results {
                let _ = writeln!(out, "{r}");
            }
            let passed = results.iter().filter(|r| r.passed).count();
            let _ = writeln!(out, "{passed}/{} checks passed", results.len());
            Ok(if passed == results.len() {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Command::PrintPreset { name } => {
            let text = config::preset_text(&name).map_err(|e| e.to_string())?;
            let _ = write!(out, "{text}");
            Ok(EXIT_OK)
        }
    }
}

fn run_one(cfg: &RunConfig, vtk: bool, out: &mut dyn Write) -> Result<i32, String> {
    let mut solver = cfg.build_solver().map_err(|e| e.to_string())?;
    let grid = cfg.time_grid().map_err(|e| e.to_string())?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mesh = solver.space.mesh.clone();
    let every = cfg.snapshot_every;
    let mut io_error: Option<String> = None;
    let report = run_simulation(&mut solver, &RechargeBenchmark, grid, cfg.failure_policy(), |n, state| {
        let due = n == 0 || n == grid.steps || (every > 0 && n % every == 0);
        if vtk && every > 0 && due && io_error.is_none() {
            if let Err(e) = output::write_vtk_snapshot(&mesh, state, &output::snapshot_path(&dir, n)) {
                io_error = Some(e.to_string());
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let csv = dir.join("iterations.csv");
    output::write_iteration_csv(&report.records, report.strategy, &csv).map_err(|e| e.to_string())?;
    let _ = writeln!(out, "{report}");
    let _ = writeln!(out, "iterations written to {}", csv.display());
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// File stem of one comparison cell, e.g. `MON-LS_dx1-20_dt1-50`.
pub fn cell_stem(strategy: Strategy, dx: f64, dt: f64) -> String {
    format!(
        "{}_dx{}_dt{}",
        strategy.name(),
        CompareCell::fraction(dx).replace('/', "-"),
        CompareCell::fraction(dt).replace('/', "-")
    )
}

/// Runs all `(strategy, dx, dt)` combinations of `base` on `jobs` worker
/// threads, writing one iteration table per cell into `base.output_dir`.
pub fn compare(base: &RunConfig, strategies: &[Strategy], dxs: &[f64], dts: &[f64], jobs: usize) -> Result<Vec<CompareCell>, String> {
    let mut tasks = Vec::new();
    for &dt in dts {
        for &s in strategies {
            for &dx in dxs {
                let mut cfg = base.clone();
                cfg.scheme.strategy = s;
                cfg.dt = dt;
                cfg.set_dx(dx).map_err(|e| e.to_string())?;
                cfg.validate().map_err(|e| e.to_string())?;
                tasks.push((cfg, dx));
            }
        }
    }
    fs::create_dir_all(&base.output_dir).map_err(|e| format!("{}: {e}", base.output_dir.display()))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CompareCell, String>>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((cfg, dx)) = tasks.get(i) else { break };
                let r = compare_cell(cfg, *dx);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

fn compare_cell(cfg: &RunConfig, dx: f64) -> Result<CompareCell, String> {
    let mut solver = cfg.build_solver().map_err(|e| e.to_string())?;
    let grid = cfg.time_grid().map_err(|e| e.to_string())?;
    let report = run_simulation(&mut solver, &RechargeBenchmark, grid, cfg.failure_policy(), |_, _| {});
    let path = cfg
        .output_dir
        .join(format!("{}.csv", cell_stem(report.strategy, dx, cfg.dt)));
    output::write_iteration_csv(&report.records, report.strategy, &path).map_err(|e| e.to_string())?;
    Ok(CompareCell::from_report(&report, dx))
}

//! The seven acceptance criteria. Every criterion prints one `[PASS]` or
//! `[FAIL]` line and fails its test when red.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use porflow::cli::compare;
use porflow::config::RunConfig;
use porflow::driver::{run_simulation, FailurePolicy};
use porflow::output::CompareCell;
use porflow::problem::RechargeBenchmark;
use porflow::schemes::{FluxLag, SchemeConfig, Strategy};
use porflow::verification::{
    single_element_oracle, single_element_run, spatial_order, temporal_order, trajectory_deviation, OracleSetup,
};

use crate::common::{criterion, recharge, relative_l2, report};
use crate::unit_suites::SUITES;

const DXS: [f64; 3] = [1.0 / 10.0, 1.0 / 20.0, 1.0 / 40.0];
const DTS: [f64; 2] = [1.0 / 10.0, 1.0 / 50.0];
const DEFAULT_N: f64 = 2.0;

/// Benchmark configuration used by the matrix: the preset with the
/// Newton fallback of the mixed controller switched on.
fn matrix_config(n: f64) -> RunConfig {
    let scheme = SchemeConfig {
        newton_fallback: true,
        ..SchemeConfig::default()
    };
    let mut cfg = recharge(n, DXS[0], DTS[0], scheme);
    cfg.output_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-matrix-n{n}"));
    cfg
}

type CellKey = (u64, Strategy, u64, u64);

/// Runs every `(n, strategy, dx, dt)` cell at most once, even when several
/// criteria ask for it concurrently.
fn cell(n: f64, strategy: Strategy, dx: f64, dt: f64) -> CompareCell {
    static CELLS: OnceLock<Mutex<HashMap<CellKey, Arc<OnceLock<CompareCell>>>>> = OnceLock::new();
    let slot = {
        let mut map = CELLS.get_or_init(Default::default).lock().unwrap();
        map.entry((n.to_bits(), strategy, dx.to_bits(), dt.to_bits()))
            .or_default()
            .clone()
    };
    slot.get_or_init(|| {
        let cells = compare(&matrix_config(n), &[strategy], &[dx], &[dt], 1).expect("benchmark cell");
        let c = cells.into_iter().next().expect("one cell");
        report(&format!("    n={n} {}", describe(&c)));
        c
    })
    .clone()
}

fn describe(c: &CompareCell) -> String {
    let outcome = if c.converged {
        format!("converged, {} iterations", c.total_iterations)
    } else {
        format!("FAIL at step {}", c.failed_step.unwrap_or(0))
    };
    format!(
        "{} dx={} dt={}: {outcome} ({:.0} s)",
        c.strategy,
        CompareCell::fraction(c.dx),
        CompareCell::fraction(c.dt),
        c.wall_time
    )
}

/// Expected MON-Newton outcome per `(dx, dt)`: failure only with the large
/// step on the two finer meshes.
fn newton_expected(dx: f64, dt: f64) -> bool {
    dt < 0.05 || dx > 0.075
}

/// Outcome of the `n` sweep: the first `n` whose Newton cells all match,
/// and a description of every `n` tried. Stops an `n` at its first
/// mismatching cell.
fn newton_sweep() -> &'static (Option<f64>, Vec<String>) {
    static SWEEP: OnceLock<(Option<f64>, Vec<String>)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let mut lines = Vec::new();
        let mut found = None;
        for n in [2.0, 3.0, 4.0] {
            let mut mismatch = None;
            'cells: for dt in DTS {
                for dx in DXS {
                    let c = cell(n, Strategy::MonNewton, dx, dt);
                    if c.converged != newton_expected(dx, dt) {
                        mismatch = Some(c);
                        break 'cells;
                    }
                }
            }
            match mismatch {
                None => {
                    lines.push(format!("n={n}: all six Newton cells match"));
                    found.get_or_insert(n);
                }
                Some(c) => lines.push(format!(
                    "n={n}: {} (expected {})",
                    describe(&c),
                    if newton_expected(c.dx, c.dt) { "convergence" } else { "failure" }
                )),
            }
        }
        (found, lines)
    })
}

/// `n` used for the criteria that do not sweep.
fn matrix_n() -> f64 {
    newton_sweep().0.unwrap_or(DEFAULT_N)
}

fn all_cells(n: f64, strategy: Strategy) -> Vec<CompareCell> {
    DTS.iter()
        .flat_map(|&dt| DXS.iter().map(move |&dx| (dx, dt)))
        .map(|(dx, dt)| cell(n, strategy, dx, dt))
        .collect()
}

#[test]
fn criterion_1_newton_failure_matrix() {
    let (found, lines) = newton_sweep();
    for l in lines {
        report(&format!("  {l}"));
    }
    let n = matrix_n();
    let mut ls_ok = true;
    let mut ls_detail = Vec::new();
    for strategy in [Strategy::MonLScheme, Strategy::SplitLScheme] {
        let cells = all_cells(n, strategy);
        let failed: Vec<String> = cells.iter().filter(|c| !c.converged).map(describe).collect();
        ls_ok &= failed.is_empty();
        ls_detail.push(if failed.is_empty() {
            format!("{strategy} converges in all six cells")
        } else {
            failed.join("; ")
        });
    }
    let newton = match found {
        Some(n) => format!("expected Newton pattern reproduced with n={n}"),
        None => "no n in {2, 3, 4} reproduces the expected Newton pattern".to_string(),
    };
    let passed = criterion(
        1,
        "failure/convergence matrix",
        found.is_some() && ls_ok,
        &format!("{newton}; n={n}: {}", ls_detail.join("; ")),
    );
    assert!(passed);
}

#[test]
fn criterion_2_mixed_dominance() {
    let n = matrix_n();
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for strategy in [Strategy::MonMixed, Strategy::SplitMixed] {
        for c in all_cells(n, strategy) {
            if !c.converged {
                problems.push(describe(&c));
            }
        }
    }
    for dx in DXS {
        let mixed = cell(n, Strategy::MonMixed, dx, DTS[1]);
        let ls = cell(n, Strategy::MonLScheme, dx, DTS[1]);
        let ok = mixed.converged && ls.converged && mixed.total_iterations <= ls.total_iterations;
        let text = format!(
            "dx={}: MON-Mixed {} vs MON-LS {}",
            CompareCell::fraction(dx),
            mixed.total_iterations,
            ls.total_iterations
        );
        if ok {
            notes.push(text);
        } else {
            problems.push(text);
        }
    }
    let detail = if problems.is_empty() {
        format!("n={n}, mixed_switch=5, both mixed strategies converge in all six cells; {}", notes.join(", "))
    } else {
        format!("n={n}: {}", problems.join("; "))
    };
    assert!(criterion(2, "mixed-scheme dominance", problems.is_empty(), &detail));
}

#[test]
fn criterion_3_lscheme_costs_more_than_newton() {
    let n = matrix_n();
    let (dx, dt) = (DXS[0], DTS[1]);
    let ls = cell(n, Strategy::MonLScheme, dx, dt);
    let newton = cell(n, Strategy::MonNewton, dx, dt);
    let passed = ls.converged && newton.converged && ls.total_iterations > newton.total_iterations;
    let detail = format!(
        "n={n}, dx=1/10, dt=1/50: MON-LS {} iterations, MON-Newton {} iterations",
        ls.total_iterations, newton.total_iterations
    );
    assert!(criterion(3, "L-scheme vs Newton cost", passed, &detail));
}

#[test]
fn criterion_4_flux_lag_is_immaterial() {
    let mut finals = Vec::new();
    let mut histories = Vec::new();
    let mut solver = None;
    for lag in [FluxLag::PreviousTime, FluxLag::CurrentIterate] {
        let scheme = SchemeConfig {
            strategy: Strategy::MonLScheme,
            flux_lag: lag,
            ..SchemeConfig::default()
        };
        let cfg = recharge(DEFAULT_N, DXS[0], DTS[1], scheme);
        let mut s = cfg.build_solver().unwrap();
        let mut states = Vec::new();
        let run = run_simulation(&mut s, &RechargeBenchmark, cfg.time_grid().unwrap(), FailurePolicy::Abort, |_, st| {
            states.push(st.clone())
        });
        assert!(run.converged, "{lag:?}: {run}");
        finals.push(run.final_state);
        histories.push(states);
        solver = Some(s);
    }
    let solver = solver.unwrap();
    let final_c = relative_l2(&solver, &finals[1], &finals[0])[2];
    let worst_c = histories[0]
        .iter()
        .zip(&histories[1])
        .map(|(a, b)| relative_l2(&solver, b, a)[2])
        .fold(0.0, f64::max);
    let detail = format!("relative L2 difference in c: {final_c:.2e} at T, {worst_c:.2e} over all steps");
    assert!(criterion(4, "flux lag reproduction", final_c < 1e-3, &detail));
}

#[test]
fn criterion_5_manufactured_orders() {
    let mut lines = Vec::new();
    let mut passed = true;
    for strategy in [Strategy::MonNewton, Strategy::MonLScheme] {
        match spatial_order(strategy, &[10, 20, 40], 1.0 / 400.0, 0.025) {
            Ok(s) => {
                passed &= s.within(2.0, 0.3);
                report(&format!("  {s}"));
                lines.push(format!("{strategy} space {:.2}/{:.2}/{:.2}", s.orders[0].order, s.orders[1].order, s.orders[2].order));
            }
            Err(e) => {
                passed = false;
                lines.push(format!("{strategy} space: {e}"));
            }
        }
        match temporal_order(strategy, 40, &[0.1, 0.05, 0.025], 1.0) {
            Ok(s) => {
                passed &= s.within(1.0, 0.2);
                report(&format!("  {s}"));
                lines.push(format!("{strategy} time {:.2}/{:.2}/{:.2}", s.orders[0].order, s.orders[1].order, s.orders[2].order));
            }
            Err(e) => {
                passed = false;
                lines.push(format!("{strategy} time: {e}"));
            }
        }
    }
    assert!(criterion(5, "manufactured convergence orders", passed, &lines.join("; ")));
}

#[test]
fn criterion_6_oracle_and_agreement() {
    let four = [Strategy::MonNewton, Strategy::MonLScheme, Strategy::SplitNewton, Strategy::SplitLScheme];
    let setup = OracleSetup::uniform_start();
    let oracle = single_element_oracle(&setup).expect("oracle");
    let mut passed = true;
    let mut worst_oracle = 0.0f64;
    for strategy in four {
        let cfg = SchemeConfig {
            strategy,
            tol: 1e-12,
            max_iter: 500,
            ..SchemeConfig::default()
        };
        match single_element_run(&setup, cfg) {
            Ok((run, states)) if run.converged => {
                let dev = trajectory_deviation(&oracle.states, &states);
                report(&format!("  oracle {strategy}: max deviation {dev:.2e}"));
                worst_oracle = worst_oracle.max(dev);
            }
            other => {
                report(&format!("  oracle {strategy}: {other:?}"));
                passed = false;
            }
        }
    }
    passed &= worst_oracle < 1e-8;

    let mut runs = Vec::new();
    for strategy in four {
        let scheme = SchemeConfig {
            strategy,
            ..SchemeConfig::default()
        };
        let cfg = recharge(DEFAULT_N, DXS[0], DTS[1], scheme);
        let mut s = cfg.build_solver().unwrap();
        let run = run_simulation(&mut s, &RechargeBenchmark, cfg.time_grid().unwrap(), FailurePolicy::Abort, |_, _| {});
        report(&format!("  benchmark {strategy}: {run}"));
        passed &= run.converged;
        runs.push((strategy, s, run.final_state));
    }
    let mut worst_pair = 0.0f64;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let d = relative_l2(&runs[i].1, &runs[i].2, &runs[j].2);
            worst_pair = d.iter().fold(worst_pair, |m, &v| m.max(v));
        }
    }
    passed &= worst_pair < 1e-5;
    let detail = format!(
        "single-element deviation {worst_oracle:.2e} (four strategies, 10 steps); largest pairwise relative L2 difference {worst_pair:.2e} at dx=1/10, dt=1/50"
    );
    assert!(criterion(6, "oracle equivalence", passed, &detail));
}

#[test]
fn criterion_7_unit_level_suites() {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, check) in SUITES {
        match check() {
            Ok(msg) => parts.push(format!("{name}: {msg}")),
            Err(msg) => {
                passed = false;
                parts.push(format!("{name} FAILED: {msg}"));
            }
        }
    }
    assert!(criterion(7, "unit-level suites", passed, &parts.join("; ")));
}

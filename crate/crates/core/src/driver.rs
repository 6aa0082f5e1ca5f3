//! Backward Euler time loop, per-step iteration control and run reports.

use std::fmt;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::schemes::{
    mixed_controller, IterationError, IterationStep, Linearization, Solver, StateTriple, Strategy,
};
use crate::problem::Problem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeGridError {
    #[error("time step must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("final time must be positive and finite, got {0}")]
    NonPositiveFinal(f64),
    #[error("final time {t_final} is not an integer multiple of the step {dt}")]
    Incommensurate { t_final: f64, dt: f64 },
}

/// Uniform partition `t_n = n T / N` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn with_steps(t_final: f64, steps: usize) -> Result<Self, TimeGridError> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(TimeGridError::NonPositiveFinal(t_final));
        }
        if steps == 0 {
            return Err(TimeGridError::NonPositiveStep(0.0));
        }
        Ok(Self {
            t_final,
            dt: t_final / steps as f64,
            steps,
        })
    }

    /// Rejects steps that do not divide `t_final` to within `1e-12`.
    pub fn with_step(t_final: f64, dt: f64) -> Result<Self, TimeGridError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TimeGridError::NonPositiveStep(dt));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(TimeGridError::NonPositiveFinal(t_final));
        }
        let steps = (t_final / dt).round();
        if steps < 1.0 || (steps * dt - t_final).abs() > 1e-12 * t_final.max(1.0) {
            return Err(TimeGridError::Incommensurate { t_final, dt });
        }
        Self::with_steps(t_final, steps as usize)
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.t_final / self.steps as f64
        }
    }
}

/// How a failed step is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailurePolicy {
    Abort,
    /// Retry the step as two half steps, recursively, at most this many times.
    Halve { max_halvings: u32 },
}

/// Iteration history of one (sub)step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_norms: [f64; 3],
    pub history: Vec<[f64; 3]>,
    pub schemes: Vec<Linearization>,
    pub clamp_events: usize,
    pub linear_solves: usize,
    pub wall_time: Duration,
    pub failure: Option<String>,
    /// `int theta dx` of the accepted (or last) iterate.
    pub water_volume: f64,
}

impl IterationRecord {
    /// Scheme label, e.g. `MON-LS` or `MON-Mixed[LS3+N4]` for a mixed run.
    pub fn scheme_label(&self, strategy: Strategy) -> String {
        if !strategy.is_mixed() {
            return strategy.name().to_string();
        }
        let ls = self.schemes.iter().filter(|s| **s == Linearization::LScheme).count();
        let n = self.schemes.len() - ls;
        format!("{}[LS{}+N{}]", strategy.name(), ls, n)
    }
}

/// Runs the iterations of one step `t - dt -> t`.
pub fn advance_time_step(
    solver: &mut Solver,
    problem: &dyn Problem,
    prev: &StateTriple,
    step: usize,
    t: f64,
    dt: f64,
) -> (StateTriple, IterationRecord) {
    let start = Instant::now();
    let mut record = IterationRecord {
        step,
        time: t,
        dt,
        iterations: 0,
        converged: false,
        final_norms: [f64::NAN; 3],
        history: Vec::new(),
        schemes: Vec::new(),
        clamp_events: 0,
        linear_solves: 0,
        wall_time: Duration::ZERO,
        failure: None,
        water_volume: f64::NAN,
    };
    let ctx = match solver.step_context(problem, prev, t, dt) {
        Ok(c) => c,
        Err(e) => {
            record.failure = Some(e.to_string());
            record.wall_time = start.elapsed();
            return (prev.clone(), record);
        }
    };
    let strategy = solver.config.strategy;
    let max_iter = solver.config.max_iter;
    let bound = solver.config.divergence_bound;
    let mut iterate = ctx.initial_iterate();
    let mut steps: Vec<IterationStep> = Vec::new();

    for _ in 0..max_iter {
        let lin = strategy
            .fixed_linearization()
            .unwrap_or_else(|| mixed_controller(&steps, &solver.config));
        let update = match solver.iterate(&ctx, &iterate, lin) {
            Ok(u) => u,
            Err(e) => {
                record.failure = Some(e.to_string());
                break;
            }
        };
        let (ok, norms) = solver.convergence(&iterate, &update.state);
        iterate = update.state;
        record.iterations += 1;
        record.history.push(norms);
        record.schemes.push(lin);
        record.clamp_events += update.clamp_events;
        record.linear_solves += update.linear_solves;
        record.final_norms = norms;
        steps.push(IterationStep { scheme: lin, norms });
        if norms.iter().any(|v| !v.is_finite()) {
            record.failure = Some(IterationError::NonFinite.to_string());
            break;
        }
        if norms.iter().any(|&v| v > bound) {
            record.failure = Some(format!("increment norm exceeded {bound:e}"));
            break;
        }
        if ok {
            record.converged = true;
            break;
        }
    }
    if !record.converged && record.failure.is_none() {
        record.failure = Some(format!("no convergence within {max_iter} iterations"));
    }
    record.water_volume = water_volume(solver, &iterate);
    record.wall_time = start.elapsed();
    (iterate, record)
}

/// `int theta_h dx` (exact for the interpolant).
pub fn water_volume(solver: &Solver, state: &StateTriple) -> f64 {
    let ones = vec![1.0; state.len()];
    let m = solver.mass().mul_vec(&ones);
    m.iter().zip(&state.theta.values).map(|(a, b)| a * b).sum()
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub strategy: Strategy,
    pub grid: TimeGrid,
    pub records: Vec<IterationRecord>,
    pub final_state: StateTriple,
    /// `true` iff all `grid.steps` steps converged.
    pub converged: bool,
    pub failed_step: Option<usize>,
    pub wall_time: Duration,
}

impl RunReport {
    pub fn total_iterations(&self) -> usize {
        self.records.iter().map(|r| r.iterations).sum()
    }

    pub fn steps_completed(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.converged)
            .map(|r| r.step)
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} after {} steps, {} iterations, {:.2}s",
            self.strategy,
            if self.converged { "converged" } else { "FAILED" },
            self.steps_completed(),
            self.total_iterations(),
            self.wall_time.as_secs_f64()
        )?;
        if let Some(s) = self.failed_step {
            let why = self
                .records
                .iter()
                .rev()
                .find_map(|r| r.failure.clone())
                .unwrap_or_default();
            write!(f, " (step {s}: {why})")?;
        }
        Ok(())
    }
}

/// Advances over `[t - dt, t]`, splitting into halves on failure when allowed.
fn advance_with_policy(
    solver: &mut Solver,
    problem: &dyn Problem,
    prev: &StateTriple,
    step: usize,
    t: f64,
    dt: f64,
    policy: FailurePolicy,
    records: &mut Vec<IterationRecord>,
) -> Option<StateTriple> {
    let (state, record) = advance_time_step(solver, problem, prev, step, t, dt);
    let ok = record.converged;
    records.push(record);
    if ok {
        return Some(state);
    }
    match policy {
        FailurePolicy::Abort | FailurePolicy::Halve { max_halvings: 0 } => None,
        FailurePolicy::Halve { max_halvings } => {
            let sub = FailurePolicy::Halve {
                max_halvings: max_halvings - 1,
            };
            let half = 0.5 * dt;
            let mid = advance_with_policy(solver, problem, prev, step, t - half, half, sub, records)?;
            advance_with_policy(solver, problem, &mid, step, t, half, sub, records)
        }
    }
}

/// Runs all steps of `grid` from the problem's initial state. `observe` is
/// called with `(n, state)` for `n = 0` and after every accepted step.
pub fn run_simulation(
    solver: &mut Solver,
    problem: &dyn Problem,
    grid: TimeGrid,
    policy: FailurePolicy,
    mut observe: impl FnMut(usize, &StateTriple),
) -> RunReport {
    let start = Instant::now();
    let mut state = StateTriple::from_fn(&solver.space.mesh, 0.0, |x, y| problem.initial(x, y));
    observe(0, &state);
    let mut records = Vec::with_capacity(grid.steps);
    let mut failed_step = None;
    for n in 1..=grid.steps {
        let t = grid.time(n);
        let dt = t - grid.time(n - 1);
        match advance_with_policy(solver, problem, &state, n, t, dt, policy, &mut records) {
            Some(next) => {
                state = next;
                observe(n, &state);
            }
            None => {
                failed_step = Some(n);
                break;
            }
        }
    }
    RunReport {
        strategy: solver.config.strategy,
        grid,
        records,
        final_state: state,
        converged: failed_step.is_none(),
        failed_step,
        wall_time: start.elapsed(),
    }
}

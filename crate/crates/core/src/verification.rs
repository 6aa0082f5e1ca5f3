//! Manufactured solutions, a brute-force single-element reference solver and
//! equilibrium checks.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::constitutive::{self, ConstitutiveSet};
use crate::driver::{run_simulation, FailurePolicy, RunReport, TimeGrid};
use crate::fem::{ElementKind, FeSpace};
use crate::linalg;
use crate::mesh::{build_grid, classify_boundary, BoundaryTag, Domain2D};
use crate::problem::{ClosureProblem, Problem};
use crate::schemes::{FluxLag, SchemeConfig, Solver, StateTriple, Strategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerificationError {
    #[error("manufactured source is not finite at ({x}, {y}, t={t})")]
    NonFiniteSource { x: f64, y: f64, t: f64 },
    #[error("manufactured water content {theta} at ({x}, {y}, t={t}) leaves [0.1, 0.95]")]
    OutOfBand { x: f64, y: f64, t: f64, theta: f64 },
    #[error("need at least 3 error values, got {0}")]
    TooFewErrors(usize),
    #[error("errors and step sizes must be positive and finite")]
    InvalidErrors,
    #[error("reference solver did not converge at step {step}: residual {residual:e} after {iterations} iterations")]
    OracleDiverged { step: usize, residual: f64, iterations: usize },
    #[error("reference solver: {0}")]
    OracleSetup(String),
    #[error("run failed: {0}")]
    RunFailed(String),
}

pub type Field = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

const FD_STEP: f64 = 1e-3;

/// Fourth-order central difference.
fn d4(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// A closed-form solution of the coupled system on a rectangle. Sources are
/// obtained by substituting it into all three equations.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub domain: Domain2D,
    pub psi: Field,
    pub theta: Field,
    pub conc: Field,
    pub set: ConstitutiveSet,
}

impl fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl ManufacturedCase {
    /// Smooth in space and affine in time with a time-independent
    /// concentration, so backward Euler reproduces its time behaviour exactly
    /// and only the spatial error remains.
    pub fn spatial() -> Self {
        use std::f64::consts::PI;
        Self {
            name: "spatial",
            domain: Domain2D::unit_square(),
            psi: Arc::new(|x, y, t| -(1.0 + 0.3 * (PI * x).sin() * (PI * y).sin()) * (1.0 + t) - 0.5 * y),
            theta: Arc::new(|x, y, t| 0.5 + 0.2 * (PI * x).sin() * (PI * y).cos() + 0.5 * t * x * x),
            conc: Arc::new(|x, y, _| 1.0 + 0.5 * (PI * x).cos() * (PI * y).sin()),
            set: ConstitutiveSet::default(),
        }
    }

    /// Strongly time dependent, nearly affine in space.
    pub fn temporal() -> Self {
        Self {
            name: "temporal",
            domain: Domain2D::unit_square(),
            psi: Arc::new(|x, y, t| -1.0 - 0.5 * x - 0.5 * y - 0.5 * (2.0 * t).sin() * (1.0 + x * y)),
            theta: Arc::new(|x, y, t| 0.5 + 0.1 * x - 0.1 * y + 0.2 * (2.0 * t).sin() * x * y),
            conc: Arc::new(|x, y, t| 1.0 + 0.5 * x * y + 0.5 * (2.0 * t).sin() * (x + y)),
            set: ConstitutiveSet::default(),
        }
    }

    pub fn exact(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        [(self.psi)(x, y, t), (self.theta)(x, y, t), (self.conc)(x, y, t)]
    }

    /// `u_w = -K(theta, psi) (grad psi + e_y)`.
    pub fn water_flux(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let psi = |x: f64, y: f64| (self.psi)(x, y, t);
        let gx = d4(|h| psi(x + h, y), FD_STEP);
        let gy = d4(|h| psi(x, y + h), FD_STEP);
        let (th, _) = self.set.clamp_theta((self.theta)(x, y, t));
        let k = constitutive::conductivity_unchecked(th, psi(x, y), &self.set.vg);
        [-k * gx, -k * (gy + 1.0)]
    }

    /// `(S1, S_psi, S2)` at `(x, y, t)`.
    pub fn sources(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let set = &self.set;
        let [psi, theta, c] = self.exact(x, y, t);
        let theta_t = d4(|h| (self.theta)(x, y, t + h), FD_STEP);
        let (th, _) = set.clamp_theta(theta);

        let div_u = d4(|h| self.water_flux(x + h, y, t)[0], FD_STEP) + d4(|h| self.water_flux(x, y + h, t)[1], FD_STEP);
        let s1 = theta_t + div_u;

        let (p, _, _) = set.capillary_pressure_unchecked(th, c);
        let (tau, _) = set.tau(th);
        let s_psi = psi + p - tau * theta_t;

        let d = set.diffusion.tensor();
        let transport_flux = |x: f64, y: f64| {
            let gx = d4(|h| (self.conc)(x + h, y, t), FD_STEP);
            let gy = d4(|h| (self.conc)(x, y + h, t), FD_STEP);
            let u = self.water_flux(x, y, t);
            let c = (self.conc)(x, y, t);
            [
                d[0][0] * gx + d[0][1] * gy - u[0] * c,
                d[1][0] * gx + d[1][1] * gy - u[1] * c,
            ]
        };
        let div_j = d4(|h| transport_flux(x + h, y)[0], FD_STEP) + d4(|h| transport_flux(x, y + h)[1], FD_STEP);
        let tc_t = d4(|h| (self.theta)(x, y, t + h) * (self.conc)(x, y, t + h), FD_STEP);
        let (r, _) = set.reaction(c);
        let s2 = tc_t - div_j + r;
        [s1, s_psi, s2]
    }

    /// Checks the water-content band and source finiteness on a sample grid
    /// over `[0, t_final]`.
    pub fn check(&self, t_final: f64) -> Result<(), VerificationError> {
        let dom = &self.domain;
        for i in 0..=6 {
            for j in 0..=6 {
                for k in 0..=4 {
                    let x = dom.x_min + dom.width() * i as f64 / 6.0;
                    let y = dom.y_min + dom.height() * j as f64 / 6.0;
                    let t = t_final * k as f64 / 4.0;
                    let theta = (self.theta)(x, y, t);
                    if !(0.1..=0.95).contains(&theta) {
                        return Err(VerificationError::OutOfBand { x, y, t, theta });
                    }
                    if self.sources(x, y, t).iter().any(|s| !s.is_finite()) {
                        return Err(VerificationError::NonFiniteSource { x, y, t });
                    }
                }
            }
        }
        Ok(())
    }
}

/// The manufactured case as a problem with Dirichlet data for `psi` and `c`
/// on the whole boundary.
pub struct ManufacturedProblem {
    pub case: ManufacturedCase,
}

impl Problem for ManufacturedProblem {
    fn initial(&self, x: f64, y: f64) -> [f64; 3] {
        self.case.exact(x, y, 0.0)
    }

    fn psi_dirichlet(&self, x: f64, y: f64, _tag: BoundaryTag, t: f64) -> Option<f64> {
        Some((self.case.psi)(x, y, t))
    }

    fn conc_dirichlet(&self, x: f64, y: f64, _tag: BoundaryTag, t: f64) -> Option<f64> {
        Some((self.case.conc)(x, y, t))
    }

    fn sources(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        self.case.sources(x, y, t)
    }

    fn has_sources(&self) -> bool {
        true
    }
}

/// Least-squares slope of `log(error)` against `log(h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEstimate {
    pub order: f64,
    /// Set when the errors do not decrease monotonically with `h`.
    pub non_monotone: bool,
}

pub fn convergence_order(h: &[f64], errors: &[f64]) -> Result<OrderEstimate, VerificationError> {
    if h.len() != errors.len() || errors.len() < 3 {
        return Err(VerificationError::TooFewErrors(errors.len().min(h.len())));
    }
    if h.iter().chain(errors).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(VerificationError::InvalidErrors);
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[b].total_cmp(&h[a]));
    let non_monotone = idx.windows(2).any(|w| errors[w[1]] >= errors[w[0]]);
    Ok(OrderEstimate {
        order: sxy / sxx,
        non_monotone,
    })
}

/// `L2` errors of the three fields against the exact solution at the final
/// time, integrated with the element quadrature.
pub fn l2_errors(space: &FeSpace, state: &StateTriple, exact: impl Fn(f64, f64) -> [f64; 3]) -> [f64; 3] {
    let pts = space.qp_coords();
    let vals = [
        space.interpolate(&state.psi.values),
        space.interpolate(&state.theta.values),
        space.interpolate(&state.conc.values),
    ];
    let mut sums = [0.0; 3];
    for (g, p) in pts.iter().enumerate() {
        let e = exact(p[0], p[1]);
        for k in 0..3 {
            sums[k] += space.jxw(g) * (vals[k][g] - e[k]).powi(2);
        }
    }
    sums.map(f64::sqrt)
}

/// Solver settings of a manufactured-solution run.
#[derive(Debug, Clone, PartialEq)]
pub struct MmsRun {
    pub strategy: Strategy,
    pub cells: usize,
    pub dt: f64,
    pub t_final: f64,
    pub tol: f64,
    pub flux_lag: FluxLag,
}

/// Runs `case` on a `cells x cells` Q1 mesh and returns the final-time errors.
pub fn run_manufactured(case: &ManufacturedCase, run: &MmsRun) -> Result<[f64; 3], VerificationError> {
    let mesh = Arc::new(build_grid(case.domain, run.cells, run.cells).map_err(|e| VerificationError::RunFailed(e.to_string()))?);
    let tags = classify_boundary(&mesh, &case.domain);
    let space = Arc::new(FeSpace::new(mesh, ElementKind::Q1));
    let cfg = SchemeConfig {
        strategy: run.strategy,
        tol: run.tol,
        flux_lag: run.flux_lag,
        ..SchemeConfig::default()
    };
    let mut solver = Solver::new(space.clone(), case.set.clone(), cfg, tags);
    let grid = TimeGrid::with_step(run.t_final, run.dt).map_err(|e| VerificationError::RunFailed(e.to_string()))?;
    let problem = ManufacturedProblem { case: case.clone() };
    let report = run_simulation(&mut solver, &problem, grid, FailurePolicy::Abort, |_, _| {});
    if !report.converged {
        return Err(VerificationError::RunFailed(report.to_string()));
    }
    let t = grid.t_final;
    Ok(l2_errors(&space, &report.final_state, |x, y| case.exact(x, y, t)))
}

/// Per-field orders of a refinement sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    pub label: String,
    pub steps: Vec<f64>,
    pub errors: Vec<[f64; 3]>,
    pub orders: [OrderEstimate; 3],
}

impl OrderStudy {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        self.orders.iter().all(|o| (o.order - target).abs() <= tol && !o.non_monotone)
    }
}

impl fmt::Display for OrderStudy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: orders psi {:.3}, theta {:.3}, c {:.3}",
            self.label, self.orders[0].order, self.orders[1].order, self.orders[2].order
        )
    }
}

fn study(label: String, steps: Vec<f64>, errors: Vec<[f64; 3]>) -> Result<OrderStudy, VerificationError> {
    let field = |k: usize| errors.iter().map(|e| e[k]).collect::<Vec<_>>();
    let orders = [
        convergence_order(&steps, &field(0))?,
        convergence_order(&steps, &field(1))?,
        convergence_order(&steps, &field(2))?,
    ];
    Ok(OrderStudy {
        label,
        steps,
        errors,
        orders,
    })
}

/// Spatial refinement over `cells` at a fixed small step.
pub fn spatial_order(strategy: Strategy, cells: &[usize], dt: f64, t_final: f64) -> Result<OrderStudy, VerificationError> {
    let case = ManufacturedCase::spatial();
    case.check(t_final)?;
    let mut errors = Vec::new();
    for &n in cells {
        let run = MmsRun {
            strategy,
            cells: n,
            dt,
            t_final,
            tol: 1e-10,
            flux_lag: FluxLag::CurrentIterate,
        };
        errors.push(run_manufactured(&case, &run)?);
    }
    let h = cells.iter().map(|&n| case.domain.width() / n as f64).collect();
    study(format!("{strategy} spatial"), h, errors)
}

/// Time-step refinement over `dts` on a fixed mesh.
pub fn temporal_order(strategy: Strategy, cells: usize, dts: &[f64], t_final: f64) -> Result<OrderStudy, VerificationError> {
    let case = ManufacturedCase::temporal();
    case.check(t_final)?;
    let mut errors = Vec::new();
    for &dt in dts {
        let run = MmsRun {
            strategy,
            cells,
            dt,
            t_final,
            tol: 1e-10,
            flux_lag: FluxLag::PreviousTime,
        };
        errors.push(run_manufactured(&case, &run)?);
    }
    study(format!("{strategy} temporal"), dts.to_vec(), errors)
}

/// One rectangular Q1 element with corner nodes ordered
/// `(x0,y0), (x1,y0), (x0,y1), (x1,y1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSetup {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub set: ConstitutiveSet,
    /// `[psi, theta, c]` per node.
    pub initial: [[f64; 3]; 4],
    /// Time-independent Dirichlet values per node.
    pub psi_dirichlet: [Option<f64>; 4],
    pub conc_dirichlet: [Option<f64>; 4],
    pub dt: f64,
    pub steps: usize,
}

impl OracleSetup {
    /// Unit element, benchmark closures, `(psi, theta, c) = (0, 0.39, 0)`,
    /// no Dirichlet data.
    pub fn uniform_start() -> Self {
        Self {
            x: [0.0, 1.0],
            y: [0.0, 1.0],
            set: ConstitutiveSet::default(),
            initial: [[0.0, 0.39, 0.0]; 4],
            psi_dirichlet: [None; 4],
            conc_dirichlet: [None; 4],
            dt: 0.1,
            steps: 10,
        }
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        [self.x[k % 2], self.y[k / 2]]
    }

    /// The same element as a one-cell problem for the production solvers.
    pub fn as_problem(&self) -> (Domain2D, ClosureProblem) {
        let dom = Domain2D::new(self.x[0], self.x[1], self.y[0], self.y[1]).expect("valid element");
        let nodes: Vec<[f64; 2]> = (0..4).map(|k| self.node(k)).collect();
        let lookup = move |x: f64, y: f64| {
            nodes
                .iter()
                .position(|p| (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12)
                .expect("element corner")
        };
        let init = self.initial;
        let (pd, cd) = (self.psi_dirichlet, self.conc_dirichlet);
        let l0 = lookup.clone();
        let l1 = lookup.clone();
        let l2 = lookup;
        let problem = ClosureProblem {
            initial: Box::new(move |x, y| init[l0(x, y)]),
            psi_bc: Some(Box::new(move |x, y, _| pd[l1(x, y)].unwrap_or(f64::NAN))),
            conc_bc: Some(Box::new(move |x, y, _| cd[l2(x, y)].unwrap_or(f64::NAN))),
            constrained: |_| true,
        };
        (dom, problem)
    }
}

/// Reference trajectory: `states[n]` holds `[psi, theta, c]` nodal values at
/// step `n` (`n = 0` is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    pub states: Vec<[[f64; 4]; 3]>,
    pub iterations: Vec<usize>,
}

const ORACLE_RELAXATION: f64 = 1e-3;
const ORACLE_BUDGET: usize = 1_000_000;
const ORACLE_RESIDUAL: f64 = 1e-12;

struct ElementRule {
    /// `(shape values, shape gradients, weight)` per Gauss point.
    points: Vec<([f64; 4], [[f64; 2]; 4], f64)>,
}

impl ElementRule {
    fn new(x: [f64; 2], y: [f64; 2]) -> Self {
        let (hx, hy) = (x[1] - x[0], y[1] - y[0]);
        let a = 1.0 / 3f64.sqrt();
        let mut points = Vec::new();
        for &s in &[-a, a] {
            for &r in &[-a, a] {
                let (u, v) = (0.5 * (1.0 + r), 0.5 * (1.0 + s));
                let n = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
                let g = [
                    [-(1.0 - v) / hx, -(1.0 - u) / hy],
                    [(1.0 - v) / hx, -u / hy],
                    [-v / hx, (1.0 - u) / hy],
                    [v / hx, u / hy],
                ];
                points.push((n, g, 0.25 * hx * hy));
            }
        }
        Self { points }
    }
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grad4(g: &[[f64; 2]; 4], v: &[f64; 4]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for k in 0..4 {
        out[0] += g[k][0] * v[k];
        out[1] += g[k][1] * v[k];
    }
    out
}

fn oracle_conductivity(set: &ConstitutiveSet, theta: f64, psi: f64) -> f64 {
    let vg = &set.vg;
    if psi > 0.0 {
        return vg.k_s;
    }
    let m = vg.m;
    vg.k_s * theta.sqrt() * (1.0 - (1.0 - theta.powf(1.0 / m)).max(0.0).powf(m))
}

fn oracle_clamp(set: &ConstitutiveSet, theta: f64) -> f64 {
    theta.clamp(set.theta_eps, 1.0)
}

/// The twelve residual components of one backward Euler step, in the order
/// `psi[0..4], theta[0..4], c[0..4]`.
fn oracle_residual(setup: &OracleSetup, rule: &ElementRule, prev: &[[f64; 4]; 3], x: &[f64; 12]) -> [f64; 12] {
    let set = &setup.set;
    let dt = setup.dt;
    let psi: [f64; 4] = x[0..4].try_into().unwrap();
    let theta: [f64; 4] = x[4..8].try_into().unwrap();
    let conc: [f64; 4] = x[8..12].try_into().unwrap();
    let d = set.diffusion.tensor();
    let mut r = [0.0; 12];
    for (n, g, w) in &rule.points {
        let ps = dot4(n, &psi);
        let th = dot4(n, &theta);
        let c = dot4(n, &conc);
        let gp = grad4(g, &psi);
        let gc = grad4(g, &conc);
        let ps0 = dot4(n, &prev[0]);
        let th0 = dot4(n, &prev[1]);
        let c0 = dot4(n, &prev[2]);
        let gp0 = grad4(g, &prev[0]);

        let tc = oracle_clamp(set, th);
        let k = oracle_conductivity(set, tc, ps0);
        let k0 = oracle_conductivity(set, oracle_clamp(set, th0), ps0);
        let u0 = [-k0 * gp0[0], -k0 * (gp0[1] + 1.0)];
        let (p, _, _) = set.capillary_pressure_unchecked(tc, c);
        let (tau, _) = set.tau(tc);
        let (react, _) = set.reaction(c);
        let flux_c = [
            d[0][0] * gc[0] + d[0][1] * gc[1] - u0[0] * c,
            d[1][0] * gc[0] + d[1][1] * gc[1] - u0[1] * c,
        ];
        for i in 0..4 {
            r[i] += w * ((th - th0) * n[i] + dt * k * (gp[0] * g[i][0] + (gp[1] + 1.0) * g[i][1]));
            r[4 + i] += w * (dt * (ps + p) - tau * (th - th0)) * n[i];
            r[8 + i] += w * ((th * c - th0 * c0 + dt * react) * n[i] + dt * (flux_c[0] * g[i][0] + flux_c[1] * g[i][1]));
        }
    }
    for i in 0..4 {
        if let Some(v) = setup.psi_dirichlet[i] {
            r[i] = psi[i] - v;
        }
        if let Some(v) = setup.conc_dirichlet[i] {
            r[8 + i] = conc[i] - v;
        }
    }
    r
}

/// Brute-force reference for one element: every step is solved by the
/// damped chord iteration `x <- x - omega J0^{-1} F(x)`, with `J0` a central
/// finite-difference Jacobian at the step's starting point, relaxation
/// `1e-3`, a budget of `1e6` iterations and residual tolerance `1e-12`.
/// Branch selection and the transport flux use the previous time level.
pub fn single_element_oracle(setup: &OracleSetup) -> Result<OracleTrajectory, VerificationError> {
    if setup.set.vg.transition != 0.0 {
        return Err(VerificationError::OracleSetup("only the sharp conductivity switch is supported".into()));
    }
    let rule = ElementRule::new(setup.x, setup.y);
    let mut prev = [[0.0; 4]; 3];
    for (k, node) in setup.initial.iter().enumerate() {
        for f in 0..3 {
            prev[f][k] = node[f];
        }
    }
    let mut states = vec![prev];
    let mut iterations = Vec::new();
    for step in 1..=setup.steps {
        let mut x = [0.0; 12];
        for f in 0..3 {
            x[4 * f..4 * f + 4].copy_from_slice(&prev[f]);
        }
        let f0 = oracle_residual(setup, &rule, &prev, &x);
        let h = 1e-7;
        let mut jac = vec![vec![0.0; 12]; 12];
        for j in 0..12 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (oracle_residual(setup, &rule, &prev, &xp), oracle_residual(setup, &rule, &prev, &xm));
            for i in 0..12 {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let mut res = f0;
        let mut count = 0;
        let max_abs = |v: &[f64; 12]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        while max_abs(&res) > ORACLE_RESIDUAL {
            if count == ORACLE_BUDGET || !max_abs(&res).is_finite() {
                return Err(VerificationError::OracleDiverged {
                    step,
                    residual: max_abs(&res),
                    iterations: count,
                });
            }
            let dx = linalg::dense_solve(&jac, &res).map_err(|e| VerificationError::OracleSetup(e.to_string()))?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi -= ORACLE_RELAXATION * di;
            }
            res = oracle_residual(setup, &rule, &prev, &x);
            count += 1;
        }
        for f in 0..3 {
            prev[f].copy_from_slice(&x[4 * f..4 * f + 4]);
        }
        states.push(prev);
        iterations.push(count);
    }
    Ok(OracleTrajectory { states, iterations })
}

/// Runs a production strategy on the oracle's element and returns its
/// trajectory in the oracle's layout.
pub fn single_element_run(setup: &OracleSetup, config: SchemeConfig) -> Result<(RunReport, Vec<[[f64; 4]; 3]>), VerificationError> {
    let (dom, problem) = setup.as_problem();
    let mesh = Arc::new(build_grid(dom, 1, 1).map_err(|e| VerificationError::RunFailed(e.to_string()))?);
    let mut tags = classify_boundary(&mesh, &dom);
    for (k, tag) in tags.nodes.iter_mut().enumerate() {
        let constrained = setup.psi_dirichlet[k].is_some() || setup.conc_dirichlet[k].is_some();
        *tag = Some(if constrained { BoundaryTag::D1 } else { BoundaryTag::N });
    }
    let problem = OracleProblem {
        inner: problem,
        psi: setup.psi_dirichlet,
        conc: setup.conc_dirichlet,
        nodes: (0..4).map(|k| setup.node(k)).collect(),
    };
    let space = Arc::new(FeSpace::new(mesh, ElementKind::Q1));
    let mut solver = Solver::new(space, setup.set.clone(), config, tags);
    let grid = TimeGrid::with_steps(setup.dt * setup.steps as f64, setup.steps).map_err(|e| VerificationError::RunFailed(e.to_string()))?;
    let mut states = Vec::new();
    let report = run_simulation(&mut solver, &problem, grid, FailurePolicy::Abort, |_, s| {
        let f = s.fields();
        states.push([
            f[0].try_into().unwrap(),
            f[1].try_into().unwrap(),
            f[2].try_into().unwrap(),
        ]);
    });
    Ok((report, states))
}

struct OracleProblem {
    inner: ClosureProblem,
    psi: [Option<f64>; 4],
    conc: [Option<f64>; 4],
    nodes: Vec<[f64; 2]>,
}

impl OracleProblem {
    fn index(&self, x: f64, y: f64) -> usize {
        self.nodes
            .iter()
            .position(|p| (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12)
            .expect("element corner")
    }
}

impl Problem for OracleProblem {
    fn initial(&self, x: f64, y: f64) -> [f64; 3] {
        self.inner.initial(x, y)
    }

    fn psi_dirichlet(&self, x: f64, y: f64, _tag: BoundaryTag, _t: f64) -> Option<f64> {
        self.psi[self.index(x, y)]
    }

    fn conc_dirichlet(&self, x: f64, y: f64, _tag: BoundaryTag, _t: f64) -> Option<f64> {
        self.conc[self.index(x, y)]
    }
}

/// Largest per-field, per-step nodal difference between two trajectories.
pub fn trajectory_deviation(a: &[[[f64; 4]; 3]], b: &[[[f64; 4]; 3]]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).flat_map(move |f| (0..4).map(move |k| (x[f][k] - y[f][k]).abs())))
        .fold(0.0, f64::max)
}

/// A hydrostatic equilibrium on the unit square: `psi = a - y`, uniform
/// `theta0`, and `c` linear in `y` so that `psi + p_cap(theta0, c) = 0`.
/// All fields are affine, so the discrete system is satisfied exactly.
pub fn hydrostatic_equilibrium(set: &ConstitutiveSet, a: f64, theta0: f64) -> ClosureProblem {
    let (p0, _, _) = set.capillary_pressure_unchecked(theta0, 0.0);
    let gamma = set.gamma;
    let state = move |y: f64| {
        let psi = a - y;
        [psi, theta0, (-psi - p0) / gamma]
    };
    ClosureProblem {
        initial: Box::new(move |_, y| state(y)),
        psi_bc: Some(Box::new(move |_, y, _| state(y)[0])),
        conc_bc: Some(Box::new(move |_, y, _| state(y)[2])),
        constrained: |_| true,
    }
}

/// Outcome of one check of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn equilibrium_check(strategy: Strategy) -> CheckResult {
    let name = format!("equilibrium {strategy}");
    let set = ConstitutiveSet::default();
    let problem = hydrostatic_equilibrium(&set, -1.0, 0.39);
    let dom = Domain2D::unit_square();
    let outcome = (|| -> Result<(bool, String), String> {
        let mesh = Arc::new(build_grid(dom, 4, 4).map_err(|e| e.to_string())?);
        let tags = classify_boundary(&mesh, &dom);
        let space = Arc::new(FeSpace::new(mesh, ElementKind::Q1));
        let cfg = SchemeConfig {
            strategy,
            ..SchemeConfig::default()
        };
        let mut solver = Solver::new(space, set.clone(), cfg, tags);
        let grid = TimeGrid::with_steps(0.3, 3).map_err(|e| e.to_string())?;
        let report = run_simulation(&mut solver, &problem, grid, FailurePolicy::Abort, |_, _| {});
        let ones = report.records.iter().all(|r| r.converged && r.iterations == 1);
        let worst = report
            .records
            .iter()
            .flat_map(|r| r.final_norms)
            .fold(0.0f64, f64::max);
        Ok((report.converged && ones, format!("largest increment {worst:.1e}, iterations per step {:?}", report.records.iter().map(|r| r.iterations).collect::<Vec<_>>())))
    })();
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

fn oracle_check(strategy: Strategy, oracle: &Result<OracleTrajectory, VerificationError>, setup: &OracleSetup) -> CheckResult {
    let name = format!("single-element oracle {strategy}");
    let oracle = match oracle {
        Ok(o) => o,
        Err(e) => {
            return CheckResult {
                name,
                passed: false,
                detail: format!("oracle unavailable: {e}"),
            }
        }
    };
    let cfg = SchemeConfig {
        strategy,
        tol: 1e-12,
        max_iter: 500,
        ..SchemeConfig::default()
    };
    match single_element_run(setup, cfg) {
        Ok((report, states)) if report.converged => {
            let dev = trajectory_deviation(&oracle.states, &states);
            CheckResult {
                name,
                passed: dev < 1e-8,
                detail: format!("max deviation {dev:.2e} over {} steps", setup.steps),
            }
        }
        Ok((report, _)) => CheckResult {
            name,
            passed: false,
            detail: report.to_string(),
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn order_check(name: String, target: f64, tol: f64, study: Result<OrderStudy, VerificationError>) -> CheckResult {
    match study {
        Ok(s) => CheckResult {
            name,
            passed: s.within(target, tol),
            detail: format!("{s} (expected {target} +- {tol})"),
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// How much of the suite to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    /// Equilibria and the single-element oracle only.
    Quick,
    /// Adds manufactured-solution order studies.
    Full,
}

/// Runs the verification suite.
pub fn verify_report(level: VerifyLevel) -> Vec<CheckResult> {
    let basic = [Strategy::MonNewton, Strategy::MonLScheme, Strategy::SplitNewton, Strategy::SplitLScheme];
    let mut out: Vec<CheckResult> = basic.iter().map(|&s| equilibrium_check(s)).collect();
    let setup = OracleSetup::uniform_start();
    let oracle = single_element_oracle(&setup);
    out.extend(basic.iter().map(|&s| oracle_check(s, &oracle, &setup)));
    if level == VerifyLevel::Full {
        for s in [Strategy::MonNewton, Strategy::MonLScheme] {
            out.push(order_check(
                format!("spatial order {s}"),
                2.0,
                0.3,
                spatial_order(s, &[10, 20, 40], 1.0 / 400.0, 0.025),
            ));
            out.push(order_check(
                format!("temporal order {s}"),
                1.0,
                0.2,
                temporal_order(s, 40, &[0.1, 0.05, 0.025], 1.0),
            ));
        }
    }
    out
}

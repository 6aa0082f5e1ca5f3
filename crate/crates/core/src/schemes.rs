//! One linearised iteration of every solving strategy.
//!
//! Unknowns are ordered field-major: `[psi; theta; c]`, each block of length
//! `N` (number of mesh nodes). Block row 0 is the Richards equation, row 1 the
//! dynamic capillarity relation, row 2 the transport equation.
//!
//! * monolithic Newton: full coupled Jacobian of the three equations with the
//!   transport mass frozen at `theta^{n,j}`,
//! * monolithic L-scheme: frozen coefficients plus stabilisation terms
//!   `L1_psi`, `L1_theta`, `L2`, `L3`,
//! * splitting: flow block `(psi, theta)` with `c^{n,j}` frozen, then the
//!   transport block with the new water content; each linearised by one
//!   Newton or L-scheme sweep (or iterated to tolerance in nested mode),
//! * mixed: a few L-scheme iterations followed by Newton, chosen by
//!   [`mixed_controller`].

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::constitutive::{self, ConstitutiveSet};
use crate::fem::{AssemblyError, Coefficient, DirichletValues, DofField, FeSpace, FieldKind};
use crate::linalg::{self, BlockLayout, CsrMatrix, LuSolver, SolveError};
use crate::mesh::{BoundaryTags, GridMesh};
use crate::problem::Problem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IterationError {
    #[error("linear solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("assembly failed: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("iterate became non-finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Linearization {
    Newton,
    LScheme,
}

impl fmt::Display for Linearization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linearization::Newton => "Newton",
            Linearization::LScheme => "LS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    MonNewton,
    MonLScheme,
    SplitNewton,
    SplitLScheme,
    MonMixed,
    SplitMixed,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::MonNewton,
        Strategy::MonLScheme,
        Strategy::SplitNewton,
        Strategy::SplitLScheme,
        Strategy::MonMixed,
        Strategy::SplitMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MonNewton => "MON-Newton",
            Strategy::MonLScheme => "MON-LS",
            Strategy::SplitNewton => "NonLinS-Newton",
            Strategy::SplitLScheme => "NonLinS-LS",
            Strategy::MonMixed => "MON-Mixed",
            Strategy::SplitMixed => "NonLinS-Mixed",
        }
    }

    /// Case-insensitive; accepts `LSCHEME` as a synonym of `LS`.
    pub fn parse(s: &str) -> Option<Self> {
        let up = s.trim().to_ascii_uppercase().replace("LSCHEME", "LS").replace("L-SCHEME", "LS");
        Strategy::ALL.into_iter().find(|st| st.name().to_ascii_uppercase() == up)
    }

    pub fn is_monolithic(self) -> bool {
        matches!(self, Strategy::MonNewton | Strategy::MonLScheme | Strategy::MonMixed)
    }

    pub fn is_mixed(self) -> bool {
        matches!(self, Strategy::MonMixed | Strategy::SplitMixed)
    }

    /// Linearisation of the non-mixed strategies.
    pub fn fixed_linearization(self) -> Option<Linearization> {
        match self {
            Strategy::MonNewton | Strategy::SplitNewton => Some(Linearization::Newton),
            Strategy::MonLScheme | Strategy::SplitLScheme => Some(Linearization::LScheme),
            Strategy::MonMixed | Strategy::SplitMixed => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which water flux drives the convection term of the transport equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FluxLag {
    /// `u^{n-1}` from the previous time level.
    PreviousTime,
    /// Flux of the current iterate.
    CurrentIterate,
}

/// Form of the `L1` stabilisation in the Richards row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LStabilization {
    /// `dt L1 <grad(u^{j+1} - u^j), grad v>`.
    Gradient,
    /// `L1 <u^{j+1} - u^j, v>`.
    Mass,
}

/// Pressure head that selects the conductivity branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchSelection {
    /// `Psi^{n,j}` of the current iterate.
    Iterate,
    /// `Psi^{n-1}` of the previous time level.
    PreviousTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitMode {
    /// One linearisation sweep per coupling sweep.
    Merged,
    /// Flow and transport each iterated to tolerance inside a coupling sweep.
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    /// `sqrt(v^T M v)`.
    L2,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub strategy: Strategy,
    pub l1_psi: f64,
    pub l1_theta: f64,
    pub l2: f64,
    pub l3: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Number of leading L-scheme iterations of the mixed strategies.
    pub mixed_switch: usize,
    /// Increment size below which the mixed controller switches early.
    pub mixed_switch_tol: f64,
    /// Fall back to the L-scheme for the rest of the step when a Newton
    /// increment grows more than tenfold, or when Newton has run
    /// `newton_stall` iterations without converging.
    pub newton_fallback: bool,
    pub newton_stall: usize,
    pub flux_lag: FluxLag,
    pub l_stabilization: LStabilization,
    pub branch: BranchSelection,
    pub split_mode: SplitMode,
    pub norm: NormKind,
    /// Iterations with any increment norm above this count as diverged.
    pub divergence_bound: f64,
    /// Nodal quadrature (row-sum lumping) in the capillarity equation.
    pub lumped_capillarity: bool,
    /// Project nodal water content onto `[theta_eps, 1]` after every iteration,
    /// holding saturated nodes at `theta = 1` through an active set.
    pub clamp_iterates: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::MonLScheme,
            l1_psi: 0.01,
            l1_theta: 0.01,
            l2: 0.01,
            l3: 0.1,
            tol: 1e-6,
            max_iter: 100,
            mixed_switch: 5,
            mixed_switch_tol: 1e-2,
            newton_fallback: false,
            newton_stall: 20,
            flux_lag: FluxLag::PreviousTime,
            l_stabilization: LStabilization::Gradient,
            branch: BranchSelection::PreviousTime,
            split_mode: SplitMode::Merged,
            norm: NormKind::L2,
            divergence_bound: 1e8,
            lumped_capillarity: false,
            clamp_iterates: true,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter < 1 {
            return Err("max_iter must be at least 1".into());
        }
        for (name, v) in [
            ("L1_psi", self.l1_psi),
            ("L1_theta", self.l1_theta),
            ("L2", self.l2),
            ("L3", self.l3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        let uses_ls = self.strategy.fixed_linearization() != Some(Linearization::Newton);
        if uses_ls && (self.l2 + self.l1_psi + self.l1_theta + self.l3) == 0.0 {
            return Err("L-scheme constants must not all vanish".into());
        }
        if !(self.mixed_switch_tol >= 0.0) {
            return Err("mixed_switch_tol must be non-negative".into());
        }
        if !(self.divergence_bound > 0.0) {
            return Err("divergence_bound must be positive".into());
        }
        Ok(())
    }
}

/// Nodal `psi`, `theta`, `c` at one time level or iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTriple {
    pub psi: DofField,
    pub theta: DofField,
    pub conc: DofField,
    pub time: f64,
}

impl StateTriple {
    pub fn new(psi: Vec<f64>, theta: Vec<f64>, conc: Vec<f64>, time: f64) -> Self {
        assert!(psi.len() == theta.len() && theta.len() == conc.len());
        Self {
            psi: DofField::new(FieldKind::Psi, psi),
            theta: DofField::new(FieldKind::Theta, theta),
            conc: DofField::new(FieldKind::Conc, conc),
            time,
        }
    }

    pub fn from_fn(mesh: &GridMesh, time: f64, f: impl Fn(f64, f64) -> [f64; 3]) -> Self {
        let vals: Vec<[f64; 3]> = mesh.nodes.iter().map(|p| f(p[0], p[1])).collect();
        Self::new(
            vals.iter().map(|v| v[0]).collect(),
            vals.iter().map(|v| v[1]).collect(),
            vals.iter().map(|v| v[2]).collect(),
            time,
        )
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn fields(&self) -> [&[f64]; 3] {
        [&self.psi.values, &self.theta.values, &self.conc.values]
    }

    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.theta.is_finite() && self.conc.is_finite()
    }

    fn from_blocks(x: &[f64], n: usize, conc: Option<Vec<f64>>, time: f64) -> Self {
        let c = conc.unwrap_or_else(|| x[2 * n..3 * n].to_vec());
        Self::new(x[..n].to_vec(), x[n..2 * n].to_vec(), c, time)
    }
}

/// Data of one time step `t_{n-1} -> t_n`.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub prev: StateTriple,
    pub t: f64,
    pub dt: f64,
    pub psi_bc: DirichletValues,
    pub conc_bc: DirichletValues,
    /// `(S1, S_psi, S2)` at quadrature points, `None` when all vanish.
    pub sources: Option<[Vec<f64>; 3]>,
    /// `S_psi` at the nodes, used by the lumped capillarity row.
    pub nodal_psi_source: Option<Vec<f64>>,
    /// `u^{n-1}` at quadrature points.
    pub lagged_flux: Vec<[f64; 2]>,
}

impl StepContext {
    /// The starting iterate: previous state with the boundary data of `t_n`.
    pub fn initial_iterate(&self) -> StateTriple {
        let mut s = self.prev.clone();
        self.psi_bc.impose(&mut s.psi.values);
        self.conc_bc.impose(&mut s.conc.values);
        s.time = self.t;
        s
    }
}

/// Iterate quantities at quadrature points.
struct MonolithicBlocks {
    rows: [[Option<CsrMatrix>; 3]; 3],
    rhs: [Vec<f64>; 3],
    clamp_events: usize,
}

struct QpIterate {
    theta: Vec<f64>,
    psi: Vec<f64>,
    conc: Vec<f64>,
    grad_psi: Vec<[f64; 2]>,
    clamped: Vec<f64>,
    clamp_events: usize,
}

impl QpIterate {
    fn new(space: &FeSpace, set: &ConstitutiveSet, s: &StateTriple) -> Self {
        let theta = space.interpolate(&s.theta.values);
        let mut clamp_events = 0;
        let clamped = theta
            .iter()
            .map(|&t| {
                let (c, hit) = set.clamp_theta(t);
                clamp_events += hit as usize;
                c
            })
            .collect();
        Self {
            psi: space.interpolate(&s.psi.values),
            conc: space.interpolate(&s.conc.values),
            grad_psi: space.gradient(&s.psi.values),
            theta,
            clamped,
            clamp_events,
        }
    }
}

/// Result of one iteration.
#[derive(Debug, Clone)]
pub struct IterateUpdate {
    pub state: StateTriple,
    /// Quadrature points and nodes moved into the clamping band.
    pub clamp_events: usize,
    /// Linear solves performed (more than one for splitting).
    pub linear_solves: usize,
}

/// Discretisation, closures, solver settings and cached operators for one
/// mesh.
pub struct Solver {
    pub space: Arc<FeSpace>,
    pub set: ConstitutiveSet,
    pub config: SchemeConfig,
    pub tags: BoundaryTags,
    mass: CsrMatrix,
    lumped: Vec<f64>,
    laplace: CsrMatrix,
    diffusion: CsrMatrix,
    mono: BlockLayout,
    flow: BlockLayout,
    flow_lu: Option<LuSolver>,
    transport_lu: Option<LuSolver>,
    saturation: Saturation,
}

/// Nodes held at `theta = 1` during the iterations of one time step. On
/// these nodes the capillarity row is replaced by `theta_i = 1`; a node is
/// released once its capillarity residual would pull `theta` back below one,
/// and added once an unconstrained solve pushes it above one.
#[derive(Debug, Clone, Default)]
struct Saturation {
    step: Option<(u64, u64)>,
    active: Vec<bool>,
}

impl Saturation {
    fn key(ctx: &StepContext) -> (u64, u64) {
        (ctx.t.to_bits(), ctx.dt.to_bits())
    }

    /// Active nodes for `ctx`; a new step starts from the nodes that ended
    /// the previous one saturated.
    fn current(&self, ctx: &StepContext) -> Vec<bool> {
        if self.step == Some(Self::key(ctx)) {
            self.active.clone()
        } else {
            ctx.prev.theta.values.iter().map(|&t| t >= 1.0).collect()
        }
    }
}

impl Solver {
    pub fn new(space: Arc<FeSpace>, set: ConstitutiveSet, config: SchemeConfig, tags: BoundaryTags) -> Self {
        let mass = space
            .assemble_weighted_mass(&Coefficient::Constant(1.0))
            .expect("constant coefficient");
        let lumped = mass.row_sums();
        let laplace = space
            .assemble_weighted_stiffness(&Coefficient::Constant(1.0))
            .expect("constant coefficient");
        let diffusion = space.assemble_tensor_stiffness(set.diffusion.tensor());
        let mono = BlockLayout::new(
            &space.pattern,
            &[
                vec![true, true, false],
                vec![true, true, true],
                vec![false, false, true],
            ],
        );
        let flow = BlockLayout::new(&space.pattern, &[vec![true, true], vec![true, true]]);
        Self {
            space,
            set,
            config,
            tags,
            mass,
            lumped,
            laplace,
            diffusion,
            mono,
            flow,
            flow_lu: None,
            transport_lu: None,
            saturation: Saturation::default(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.space.num_nodes()
    }

    /// Unweighted consistent mass matrix.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Boundary values, sources and lagged flux for the step ending at `t`.
    pub fn step_context(
        &self,
        problem: &dyn Problem,
        prev: &StateTriple,
        t: f64,
        dt: f64,
    ) -> Result<StepContext, IterationError> {
        let mesh = &self.space.mesh;
        let n = self.num_nodes();
        let mut psi_bc = DirichletValues::none(n);
        let mut conc_bc = DirichletValues::none(n);
        for (k, tag) in self.tags.nodes.iter().enumerate() {
            if let Some(tag) = *tag {
                let [x, y] = mesh.nodes[k];
                psi_bc.values[k] = problem.psi_dirichlet(x, y, tag, t);
                conc_bc.values[k] = problem.conc_dirichlet(x, y, tag, t);
            }
        }
        let sources = if problem.has_sources() {
            let pts = self.space.qp_coords();
            let mut s = [
                Vec::with_capacity(pts.len()),
                Vec::with_capacity(pts.len()),
                Vec::with_capacity(pts.len()),
            ];
            for p in pts {
                let v = problem.sources(p[0], p[1], t);
                for k in 0..3 {
                    s[k].push(v[k]);
                }
            }
            Some(s)
        } else {
            None
        };
        let nodal_psi_source = problem.has_sources().then(|| {
            mesh.nodes
                .iter()
                .map(|p| problem.sources(p[0], p[1], t)[1])
                .collect()
        });
        let (lagged_flux, _) = self
            .space
            .compute_water_flux(&prev.psi.values, &prev.theta.values, &self.set)?;
        Ok(StepContext {
            prev: prev.clone(),
            t,
            dt,
            psi_bc,
            conc_bc,
            sources,
            nodal_psi_source,
            lagged_flux,
        })
    }

    fn source(&self, ctx: &StepContext, k: usize, g: usize) -> f64 {
        ctx.sources.as_ref().map_or(0.0, |s| s[k][g])
    }

    fn flux_for(&self, ctx: &StepContext, state: &StateTriple) -> Result<Vec<[f64; 2]>, IterationError> {
        Ok(match self.config.flux_lag {
            FluxLag::PreviousTime => ctx.lagged_flux.clone(),
            FluxLag::CurrentIterate => {
                self.space
                    .compute_water_flux(&state.psi.values, &state.theta.values, &self.set)?
                    .0
            }
        })
    }

    fn diag_matrix(&self, d: &[f64]) -> CsrMatrix {
        let mut m = CsrMatrix::zeros(self.space.pattern.clone());
        for (i, v) in d.iter().enumerate() {
            let k = m.pattern.find(i, i).unwrap();
            m.values[k] = *v;
        }
        m
    }

    /// Richards row: `(psi block, theta block, rhs)`.
    fn richards_row(
        &self,
        ctx: &StepContext,
        it: &StateTriple,
        q: &QpIterate,
        lin: Linearization,
    ) -> Result<(CsrMatrix, CsrMatrix, Vec<f64>), IterationError> {
        let sp = &*self.space;
        let dt = ctx.dt;
        let vg = &self.set.vg;
        let nq = sp.num_qp();
        let lagged = self.config.branch == BranchSelection::PreviousTime;
        let branch_psi = if lagged {
            sp.interpolate(&ctx.prev.psi.values)
        } else {
            q.psi.clone()
        };
        let k: Vec<f64> = (0..nq)
            .map(|g| constitutive::conductivity_unchecked(q.clamped[g], branch_psi[g], vg))
            .collect();
        let mut psi_col = sp.assemble_weighted_stiffness(&Coefficient::Qp(k.clone()))?;
        psi_col.scale(dt);
        let mut theta_col = self.mass.clone();

        let theta_prev = sp.interpolate(&ctx.prev.theta.values);
        let gravity: Vec<[f64; 2]> = k.iter().map(|&k| [0.0, k]).collect();
        let grav = sp.assemble_gradient_load(&gravity)?;
        let mut rhs: Vec<f64> = sp.assemble_load(&Coefficient::Qp(
            (0..nq).map(|g| theta_prev[g] + dt * self.source(ctx, 0, g)).collect(),
        ))?;
        for (r, b) in rhs.iter_mut().zip(&grav) {
            *r -= dt * b;
        }

        match lin {
            Linearization::Newton => {
                let mut w_theta = Vec::with_capacity(nq);
                let mut w_psi = Vec::with_capacity(nq);
                let mut any_psi = false;
                for g in 0..nq {
                    let (dkt, mut dkp) =
                        constitutive::conductivity_derivatives_unchecked(q.clamped[g], branch_psi[g], vg);
                    if lagged {
                        dkp = 0.0;
                    }
                    let dkt = if q.clamped[g] == q.theta[g] { dkt } else { 0.0 };
                    let dir = [q.grad_psi[g][0], q.grad_psi[g][1] + 1.0];
                    w_theta.push([dkt * dir[0], dkt * dir[1]]);
                    w_psi.push([dkp * dir[0], dkp * dir[1]]);
                    any_psi |= dkp != 0.0;
                }
                let c_theta = sp.assemble_convection(&w_theta)?;
                theta_col.add_scaled(dt, &c_theta);
                c_theta.mul_vec_add(dt, &it.theta.values, &mut rhs);
                if any_psi {
                    let c_psi = sp.assemble_convection(&w_psi)?;
                    psi_col.add_scaled(dt, &c_psi);
                    c_psi.mul_vec_add(dt, &it.psi.values, &mut rhs);
                }
            }
            Linearization::LScheme => {
                let (base, scale) = match self.config.l_stabilization {
                    LStabilization::Gradient => (&self.laplace, dt),
                    LStabilization::Mass => (&self.mass, 1.0),
                };
                let (lp, lt) = (scale * self.config.l1_psi, scale * self.config.l1_theta);
                psi_col.add_scaled(lp, base);
                theta_col.add_scaled(lt, base);
                base.mul_vec_add(lp, &it.psi.values, &mut rhs);
                base.mul_vec_add(lt, &it.theta.values, &mut rhs);
            }
        }
        Ok((psi_col, theta_col, rhs))
    }

    /// Capillarity row: `(psi block, theta block, optional c block, rhs)`.
    /// `couple_c` keeps the concentration as an unknown (monolithic Newton).
    fn capillarity_row(
        &self,
        ctx: &StepContext,
        it: &StateTriple,
        q: &QpIterate,
        lin: Linearization,
        couple_c: bool,
    ) -> Result<(CsrMatrix, CsrMatrix, Option<CsrMatrix>, Vec<f64>), IterationError> {
        if self.config.lumped_capillarity {
            return Ok(self.capillarity_row_lumped(ctx, it, lin, couple_c));
        }
        let sp = &*self.space;
        let dt = ctx.dt;
        let nq = sp.num_qp();
        let theta_prev = sp.interpolate(&ctx.prev.theta.values);
        let mut psi_col = self.mass.clone();
        psi_col.scale(dt);

        let mut w_theta = Vec::with_capacity(nq);
        let mut w_conc = Vec::with_capacity(nq);
        let mut load = Vec::with_capacity(nq);
        for g in 0..nq {
            let (p, dp_theta, dp_c) = self.set.capillary_pressure_unchecked(q.clamped[g], q.conc[g]);
            let (tau, dtau) = self.set.tau(q.clamped[g]);
            // the closures see the clamped value, so they are flat outside the band
            let (dp_theta, dtau) = if q.clamped[g] == q.theta[g] {
                (dp_theta, dtau)
            } else {
                (0.0, 0.0)
            };
            let s_psi = self.source(ctx, 1, g);
            match lin {
                Linearization::Newton => {
                    let w = dt * dp_theta - tau - dtau * (q.theta[g] - theta_prev[g]);
                    let mut rhs = -dt * p + w * q.theta[g] + tau * (q.theta[g] - theta_prev[g]) + dt * s_psi;
                    if couple_c {
                        rhs += dt * dp_c * q.conc[g];
                        w_conc.push(dt * dp_c);
                    }
                    w_theta.push(w);
                    load.push(rhs);
                }
                Linearization::LScheme => {
                    w_theta.push(-(tau + self.config.l2));
                    load.push(-dt * p - tau * theta_prev[g] - self.config.l2 * q.theta[g] + dt * s_psi);
                }
            }
        }
        let theta_col = sp.assemble_weighted_mass(&Coefficient::Qp(w_theta))?;
        let conc_col = if couple_c && lin == Linearization::Newton {
            Some(sp.assemble_weighted_mass(&Coefficient::Qp(w_conc))?)
        } else {
            None
        };
        let rhs = sp.assemble_load(&Coefficient::Qp(load))?;
        Ok((psi_col, theta_col, conc_col, rhs))
    }

    fn capillarity_row_lumped(
        &self,
        ctx: &StepContext,
        it: &StateTriple,
        lin: Linearization,
        couple_c: bool,
    ) -> (CsrMatrix, CsrMatrix, Option<CsrMatrix>, Vec<f64>) {
        let dt = ctx.dt;
        let n = self.num_nodes();
        let mut d_psi = Vec::with_capacity(n);
        let mut d_theta = Vec::with_capacity(n);
        let mut d_conc = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        for i in 0..n {
            let m = self.lumped[i];
            let th = it.theta.values[i];
            let th_prev = ctx.prev.theta.values[i];
            let c = it.conc.values[i];
            let (tc, hit) = self.set.clamp_theta(th);
            let (p, dp_theta, dp_c) = self.set.capillary_pressure_unchecked(tc, c);
            let (tau, dtau) = self.set.tau(tc);
            let (dp_theta, dtau) = if hit { (0.0, 0.0) } else { (dp_theta, dtau) };
            let s_psi = ctx.nodal_psi_source.as_ref().map_or(0.0, |s| s[i]);
            d_psi.push(dt * m);
            match lin {
                Linearization::Newton => {
                    let w = dt * dp_theta - tau - dtau * (th - th_prev);
                    let mut r = -dt * p + w * th + tau * (th - th_prev) + dt * s_psi;
                    if couple_c {
                        r += dt * dp_c * c;
                        d_conc.push(dt * dp_c * m);
                    }
                    d_theta.push(w * m);
                    rhs.push(r * m);
                }
                Linearization::LScheme => {
                    d_theta.push(-(tau + self.config.l2) * m);
                    rhs.push((-dt * p - tau * th_prev - self.config.l2 * th + dt * s_psi) * m);
                }
            }
        }
        let conc = (couple_c && lin == Linearization::Newton).then(|| self.diag_matrix(&d_conc));
        (self.diag_matrix(&d_psi), self.diag_matrix(&d_theta), conc, rhs)
    }

    /// Transport row with mass weight `theta_mass` (nodal) and convecting flux `u`.
    fn transport_row(
        &self,
        ctx: &StepContext,
        theta_mass: &[f64],
        conc_iter: &[f64],
        u: &[[f64; 2]],
        lin: Linearization,
    ) -> Result<(CsrMatrix, Vec<f64>), IterationError> {
        let sp = &*self.space;
        let dt = ctx.dt;
        let nq = sp.num_qp();
        let theta_q = sp.interpolate(theta_mass);
        let c_q = sp.interpolate(conc_iter);
        let theta_prev = sp.interpolate(&ctx.prev.theta.values);
        let c_prev = sp.interpolate(&ctx.prev.conc.values);
        let mut weight = Vec::with_capacity(nq);
        let mut load = Vec::with_capacity(nq);
        for g in 0..nq {
            let (r, dr) = self.set.reaction(c_q[g]);
            let base = theta_prev[g] * c_prev[g] - dt * r + dt * self.source(ctx, 2, g);
            match lin {
                Linearization::Newton => {
                    weight.push(theta_q[g] + dt * dr);
                    load.push(base + dt * dr * c_q[g]);
                }
                Linearization::LScheme => {
                    weight.push(theta_q[g] + self.config.l3);
                    load.push(base + self.config.l3 * c_q[g]);
                }
            }
        }
        let mut m = sp.assemble_weighted_mass(&Coefficient::Qp(weight))?;
        m.add_scaled(dt, &self.diffusion);
        // -div(D grad c - u c): the advective flux enters with a minus sign
        let conv = sp.assemble_convection(u)?;
        m.add_scaled(-dt, &conv);
        let rhs = sp.assemble_load(&Coefficient::Qp(load))?;
        Ok((m, rhs))
    }

    fn psi_constraints(&self, ctx: &StepContext, offset: usize) -> Vec<(usize, f64)> {
        ctx.psi_bc.constrained().map(|(k, v)| (offset + k, v)).collect()
    }

    fn conc_constraints(&self, ctx: &StepContext, offset: usize) -> Vec<(usize, f64)> {
        ctx.conc_bc.constrained().map(|(k, v)| (offset + k, v)).collect()
    }

    fn finish(&self, mut state: StateTriple, clamp_events: usize, solves: usize) -> Result<IterateUpdate, IterationError> {
        if !state.is_finite() {
            return Err(IterationError::NonFinite);
        }
        let mut events = clamp_events;
        if self.config.clamp_iterates {
            for t in state.theta.values.iter_mut() {
                let (c, hit) = self.set.clamp_theta(*t);
                events += hit as usize;
                *t = c;
            }
        }
        Ok(IterateUpdate {
            state,
            clamp_events: events,
            linear_solves: solves,
        })
    }

    fn monolithic_blocks(
        &self,
        ctx: &StepContext,
        it: &StateTriple,
        lin: Linearization,
    ) -> Result<MonolithicBlocks, IterationError> {
        let q = QpIterate::new(&self.space, &self.set, it);
        let (r_psi, r_theta, rhs_flow) = self.richards_row(ctx, it, &q, lin)?;
        let (c_psi, c_theta, c_conc, rhs_cap) = self.capillarity_row(ctx, it, &q, lin, true)?;
        let u = self.flux_for(ctx, it)?;
        let (t_conc, rhs_transport) = self.transport_row(ctx, &it.theta.values, &it.conc.values, &u, lin)?;
        Ok(MonolithicBlocks {
            rows: [[Some(r_psi), Some(r_theta), None], [Some(c_psi), Some(c_theta), c_conc], [None, None, Some(t_conc)]],
            rhs: [rhs_flow, rhs_cap, rhs_transport],
            clamp_events: q.clamp_events,
        })
    }

    fn saturated_constraints(&self, ctx: &StepContext, offset: usize) -> Vec<(usize, f64)> {
        if !self.config.clamp_iterates {
            return Vec::new();
        }
        let n = self.num_nodes();
        self.saturation
            .current(ctx)
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| (offset + n + i, 1.0))
            .collect()
    }

    /// Updates the saturated set from the flow solution `x` of the system
    /// `a x = rhs` assembled before the saturation rows were imposed.
    fn update_saturation(&mut self, ctx: &StepContext, a: &CsrMatrix, rhs: &[f64], x: &[f64], offset: usize) {
        if !self.config.clamp_iterates {
            return;
        }
        let n = self.num_nodes();
        let mut active = self.saturation.current(ctx);
        for (i, flag) in active.iter_mut().enumerate() {
            let row = offset + n + i;
            *flag = if *flag {
                let r: f64 = a.pattern.row(row).map(|k| a.values[k] * x[a.pattern.col_idx[k]]).sum();
                r - rhs[row] > 0.0
            } else {
                x[row] > 1.0
            };
        }
        self.saturation = Saturation {
            step: Some(Saturation::key(ctx)),
            active,
        };
    }

    /// The constrained `3N x 3N` system of one monolithic iteration, as a
    /// single matrix.
    pub fn monolithic_system(
        &self,
        ctx: &StepContext,
        it: &StateTriple,
        lin: Linearization,
    ) -> Result<(CsrMatrix, Vec<f64>), IterationError> {
        let n = self.num_nodes();
        let blocks = self.monolithic_blocks(ctx, it, lin)?;
        let layout = &self.mono;
        let mut a = layout.zeros();
        for (r, row) in blocks.rows.iter().enumerate() {
            for (c, block) in row.iter().enumerate() {
                if let Some(b) = block {
                    layout.add_block(&mut a, r, c, 1.0, b);
                }
            }
        }
        let mut rhs = blocks.rhs.concat();
        let mut cons = self.psi_constraints(ctx, 0);
        cons.extend(self.saturated_constraints(ctx, 0));
        cons.extend(self.conc_constraints(ctx, 2 * n));
        linalg::apply_row_constraints(&mut a, &mut rhs, &cons);
        Ok((a, rhs))
    }

    /// Solves the monolithic system by block back-substitution: the
    /// transport row couples only to `c`, so `c` is solved first and the
    /// flow block then sees `C_c c` on its right-hand side. The result is
    /// the solution of the full `3N` system.
    fn monolithic_iteration(
        &mut self,
        ctx: &StepContext,
        it: &StateTriple,
        lin: Linearization,
    ) -> Result<IterateUpdate, IterationError> {
        let n = self.num_nodes();
        let MonolithicBlocks { rows, rhs, clamp_events } = self.monolithic_blocks(ctx, it, lin)?;
        let [rhs_flow, mut rhs_cap, mut rhs_transport] = rhs;
        let [[r_psi, r_theta, _], [c_psi, c_theta, c_conc], [_, _, t_conc]] = rows;

        let mut t_conc = t_conc.expect("transport block");
        linalg::apply_row_constraints(&mut t_conc, &mut rhs_transport, &self.conc_constraints(ctx, 0));
        if self.transport_lu.is_none() {
            self.transport_lu = Some(LuSolver::new(self.space.pattern.clone())?);
        }
        let conc = self.transport_lu.as_mut().unwrap().solve(&t_conc, &rhs_transport)?;

        if let Some(cc) = &c_conc {
            cc.mul_vec_add(-1.0, &conc, &mut rhs_cap);
        }
        let layout = &self.flow;
        let mut a = layout.zeros();
        layout.add_block(&mut a, 0, 0, 1.0, r_psi.as_ref().expect("richards block"));
        layout.add_block(&mut a, 0, 1, 1.0, r_theta.as_ref().expect("richards block"));
        layout.add_block(&mut a, 1, 0, 1.0, c_psi.as_ref().expect("capillarity block"));
        layout.add_block(&mut a, 1, 1, 1.0, c_theta.as_ref().expect("capillarity block"));
        let mut rhs0 = rhs_flow;
        rhs0.extend_from_slice(&rhs_cap);
        let x = self.solve_flow(ctx, a, rhs0)?;
        let state = StateTriple::from_blocks(&x, n, Some(conc), ctx.t);
        self.finish(state, clamp_events, 2)
    }

    /// Solves the `2N` flow system under the head and saturation constraints.
    fn solve_flow(&mut self, ctx: &StepContext, a: CsrMatrix, rhs: Vec<f64>) -> Result<Vec<f64>, IterationError> {
        let (mut ac, mut rc) = (a.clone(), rhs.clone());
        let mut cons = self.psi_constraints(ctx, 0);
        cons.extend(self.saturated_constraints(ctx, 0));
        linalg::apply_row_constraints(&mut ac, &mut rc, &cons);
        if self.flow_lu.is_none() {
            self.flow_lu = Some(LuSolver::new(self.flow.pattern.clone())?);
        }
        let x = self.flow_lu.as_mut().unwrap().solve(&ac, &rc)?;
        self.update_saturation(ctx, &a, &rhs, &x, 0);
        Ok(x)
    }

    /// Problem MN: one monolithic Newton step.
    pub fn newton_iteration_monolithic(
        &mut self,
        ctx: &StepContext,
        it: &StateTriple,
    ) -> Result<IterateUpdate, IterationError> {
        self.monolithic_iteration(ctx, it, Linearization::Newton)
    }

    /// Problem ML: one monolithic L-scheme step.
    pub fn lscheme_iteration_monolithic(
        &mut self,
        ctx: &StepContext,
        it: &StateTriple,
    ) -> Result<IterateUpdate, IterationError> {
        self.monolithic_iteration(ctx, it, Linearization::LScheme)
    }

    /// One linearised sweep of the flow block with `c` frozen at `it.conc`.
    fn flow_sweep(
        &mut self,
        ctx: &StepContext,
        it: &StateTriple,
        lin: Linearization,
    ) -> Result<(StateTriple, usize), IterationError> {
        let n = self.num_nodes();
        let q = QpIterate::new(&self.space, &self.set, it);
        let (r_psi, r_theta, mut rhs0) = self.richards_row(ctx, it, &q, lin)?;
        let (c_psi, c_theta, _, rhs1) = self.capillarity_row(ctx, it, &q, lin, false)?;
        let layout = &self.flow;
        let mut a = layout.zeros();
        layout.add_block(&mut a, 0, 0, 1.0, &r_psi);
        layout.add_block(&mut a, 0, 1, 1.0, &r_theta);
        layout.add_block(&mut a, 1, 0, 1.0, &c_psi);
        layout.add_block(&mut a, 1, 1, 1.0, &c_theta);
        rhs0.extend_from_slice(&rhs1);
        let x = self.solve_flow(ctx, a, rhs0)?;
        let mut state = StateTriple::from_blocks(&x, n, Some(it.conc.values.clone()), ctx.t);
        let mut events = q.clamp_events;
        if self.config.clamp_iterates {
            for t in state.theta.values.iter_mut() {
                let (c, hit) = self.set.clamp_theta(*t);
                events += hit as usize;
                *t = c;
            }
        }
        if !state.is_finite() {
            return Err(IterationError::NonFinite);
        }
        Ok((state, events))
    }

    /// One linearised sweep of the transport block given the new flow state.
    fn transport_sweep(
        &mut self,
        ctx: &StepContext,
        flow: &StateTriple,
        conc_iter: &[f64],
        lin: Linearization,
    ) -> Result<Vec<f64>, IterationError> {
        let u = self.flux_for(ctx, flow)?;
        let (mut a, mut rhs) = self.transport_row(ctx, &flow.theta.values, conc_iter, &u, lin)?;
        let cons = self.conc_constraints(ctx, 0);
        linalg::apply_row_constraints(&mut a, &mut rhs, &cons);
        if self.transport_lu.is_none() {
            self.transport_lu = Some(LuSolver::new(self.space.pattern.clone())?);
        }
        let c = self.transport_lu.as_mut().unwrap().solve(&a, &rhs)?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(IterationError::NonFinite);
        }
        Ok(c)
    }

    /// Problem S: flow block with `c^{n,j}`, then transport with the new
    /// `(psi, theta)`.
    pub fn splitting_iteration(
        &mut self,
        ctx: &StepContext,
        it: &StateTriple,
        inner: Linearization,
    ) -> Result<IterateUpdate, IterationError> {
        match self.config.split_mode {
            SplitMode::Merged => {
                let (flow, events) = self.flow_sweep(ctx, it, inner)?;
                let c = self.transport_sweep(ctx, &flow, &it.conc.values, inner)?;
                let mut state = flow;
                state.conc.values = c;
                self.finish(state, events, 2)
            }
            SplitMode::Nested => {
                let tol = self.config.tol;
                let max = self.config.max_iter;
                let mut solves = 0;
                let mut events = 0;
                let mut flow = it.clone();
                for _ in 0..max {
                    let (next, ev) = self.flow_sweep(ctx, &flow, inner)?;
                    solves += 1;
                    events += ev;
                    let d_psi = self.increment_norm(&flow.psi.values, &next.psi.values);
                    let d_theta = self.increment_norm(&flow.theta.values, &next.theta.values);
                    flow = next;
                    if d_psi < tol && d_theta < tol {
                        break;
                    }
                    if !(d_psi.max(d_theta) <= self.config.divergence_bound) {
                        return Err(IterationError::NonFinite);
                    }
                }
                let mut c = it.conc.values.clone();
                for _ in 0..max {
                    let next = self.transport_sweep(ctx, &flow, &c, inner)?;
                    solves += 1;
                    let d = self.increment_norm(&c, &next);
                    c = next;
                    if d < tol {
                        break;
                    }
                }
                flow.conc.values = c;
                self.finish(flow, events, solves)
            }
        }
    }

    /// One iteration of the configured strategy with linearisation `lin`.
    pub fn iterate(
        &mut self,
        ctx: &StepContext,
        it: &StateTriple,
        lin: Linearization,
    ) -> Result<IterateUpdate, IterationError> {
        if self.config.strategy.is_monolithic() {
            self.monolithic_iteration(ctx, it, lin)
        } else {
            self.splitting_iteration(ctx, it, lin)
        }
    }

    pub fn increment_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        match self.config.norm {
            NormKind::L2 => linalg::discrete_l2_norm(&self.mass, &d).unwrap_or(f64::INFINITY),
            NormKind::Euclidean => linalg::norm2(&d),
        }
    }

    /// Increment norms of all three fields and whether all are below `tol`.
    pub fn convergence(&self, prev: &StateTriple, curr: &StateTriple) -> (bool, [f64; 3]) {
        let norms = [
            self.increment_norm(&prev.psi.values, &curr.psi.values),
            self.increment_norm(&prev.theta.values, &curr.theta.values),
            self.increment_norm(&prev.conc.values, &curr.conc.values),
        ];
        (norms.iter().all(|&e| e < self.config.tol), norms)
    }

    /// Residual of the fully discrete nonlinear system at `state`, assembled
    /// directly from the weak forms without any linearisation. Constrained
    /// rows hold `state - prescribed`.
    pub fn nonlinear_residual(&self, ctx: &StepContext, state: &StateTriple) -> Result<[Vec<f64>; 3], IterationError> {
        let sp = &*self.space;
        let dt = ctx.dt;
        let nq = sp.num_qp();
        let set = &self.set;
        let th = sp.interpolate(&state.theta.values);
        let ps = sp.interpolate(&state.psi.values);
        let cc = sp.interpolate(&state.conc.values);
        let gp = sp.gradient(&state.psi.values);
        let gc = sp.gradient(&state.conc.values);
        let th0 = sp.interpolate(&ctx.prev.theta.values);
        let c0 = sp.interpolate(&ctx.prev.conc.values);
        let branch_psi = match self.config.branch {
            BranchSelection::Iterate => ps.clone(),
            BranchSelection::PreviousTime => sp.interpolate(&ctx.prev.psi.values),
        };
        let u = self.flux_for(ctx, state)?;
        let d = set.diffusion.tensor();

        let mut f1_mass = Vec::with_capacity(nq);
        let mut f1_flux = Vec::with_capacity(nq);
        let mut f2 = Vec::with_capacity(nq);
        let mut f3_mass = Vec::with_capacity(nq);
        let mut f3_flux = Vec::with_capacity(nq);
        for g in 0..nq {
            let (t, _) = set.clamp_theta(th[g]);
            let k = constitutive::conductivity_unchecked(t, branch_psi[g], &set.vg);
            let (p, _, _) = set.capillary_pressure_unchecked(t, cc[g]);
            let (tau, _) = set.tau(t);
            let (r, _) = set.reaction(cc[g]);
            f1_mass.push(th[g] - th0[g] - dt * self.source(ctx, 0, g));
            f1_flux.push([dt * k * gp[g][0], dt * k * (gp[g][1] + 1.0)]);
            f2.push(dt * (ps[g] + p - self.source(ctx, 1, g)) - tau * (th[g] - th0[g]));
            f3_mass.push(th[g] * cc[g] - th0[g] * c0[g] + dt * r - dt * self.source(ctx, 2, g));
            let dgc = [d[0][0] * gc[g][0] + d[0][1] * gc[g][1], d[1][0] * gc[g][0] + d[1][1] * gc[g][1]];
            f3_flux.push([dt * (dgc[0] - u[g][0] * cc[g]), dt * (dgc[1] - u[g][1] * cc[g])]);
        }
        let mut r1 = sp.assemble_load(&Coefficient::Qp(f1_mass))?;
        for (a, b) in r1.iter_mut().zip(sp.assemble_gradient_load(&f1_flux)?) {
            *a += b;
        }
        let r2 = if self.config.lumped_capillarity {
            (0..self.num_nodes())
                .map(|i| {
                    let (t, _) = set.clamp_theta(state.theta.values[i]);
                    let (p, _, _) = set.capillary_pressure_unchecked(t, state.conc.values[i]);
                    let (tau, _) = set.tau(t);
                    let s_psi = ctx.nodal_psi_source.as_ref().map_or(0.0, |s| s[i]);
                    self.lumped[i]
                        * (dt * (state.psi.values[i] + p - s_psi)
                            - tau * (state.theta.values[i] - ctx.prev.theta.values[i]))
                })
                .collect()
        } else {
            sp.assemble_load(&Coefficient::Qp(f2))?
        };
        let mut r3 = sp.assemble_load(&Coefficient::Qp(f3_mass))?;
        for (a, b) in r3.iter_mut().zip(sp.assemble_gradient_load(&f3_flux)?) {
            *a += b;
        }
        for (k, v) in ctx.psi_bc.constrained() {
            r1[k] = state.psi.values[k] - v;
        }
        for (k, v) in ctx.conc_bc.constrained() {
            r3[k] = state.conc.values[k] - v;
        }
        Ok([r1, r2, r3])
    }
}

/// Increment norms of the three fields and whether all are strictly below
/// `tol`, measured in the `mass`-weighted L2 norm.
pub fn convergence_check(prev: &StateTriple, curr: &StateTriple, mass: &CsrMatrix, tol: f64) -> (bool, [f64; 3]) {
    let norm = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        linalg::discrete_l2_norm(mass, &d).unwrap_or(f64::INFINITY)
    };
    let norms = [
        norm(&prev.psi.values, &curr.psi.values),
        norm(&prev.theta.values, &curr.theta.values),
        norm(&prev.conc.values, &curr.conc.values),
    ];
    (norms.iter().all(|&e| e < tol), norms)
}

/// One finished iteration as seen by the mixed controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStep {
    pub scheme: Linearization,
    pub norms: [f64; 3],
}

impl IterationStep {
    pub fn max_norm(&self) -> f64 {
        self.norms.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Chooses the linearisation of the next iteration of a mixed strategy.
///
/// L-scheme while the iteration index `j <= mixed_switch` and the last
/// increment is at least `mixed_switch_tol`; Newton afterwards. With
/// `newton_fallback`, a Newton increment more than ten times larger than the
/// one before it, or `newton_stall` Newton iterations without convergence,
/// send the rest of the step back to the L-scheme.
pub fn mixed_controller(history: &[IterationStep], config: &SchemeConfig) -> Linearization {
    let j = history.len() + 1;
    let newton_started = history.iter().any(|s| s.scheme == Linearization::Newton);
    if newton_started {
        if config.newton_fallback {
            let diverged = history.windows(2).any(|w| {
                w[1].scheme == Linearization::Newton && w[1].max_norm() > 10.0 * w[0].max_norm()
            });
            let newton_count = history
                .iter()
                .filter(|s| s.scheme == Linearization::Newton)
                .count();
            if diverged || newton_count >= config.newton_stall.max(1) {
                return Linearization::LScheme;
            }
        }
        return Linearization::Newton;
    }
    if j > config.mixed_switch {
        return Linearization::Newton;
    }
    match history.last() {
        Some(last) if last.max_norm() < config.mixed_switch_tol => Linearization::Newton,
        _ => Linearization::LScheme,
    }
}

//! Boundary, initial and source data of a coupled flow/transport problem.

use crate::mesh::BoundaryTag;

/// Problem data consumed by the time stepper. Dirichlet hooks are only asked
/// about boundary nodes.
pub trait Problem: Send + Sync {
    /// `(psi, theta, c)` at `t = 0`.
    fn initial(&self, x: f64, y: f64) -> [f64; 3];

    fn psi_dirichlet(&self, x: f64, y: f64, tag: BoundaryTag, t: f64) -> Option<f64>;

    fn conc_dirichlet(&self, x: f64, y: f64, tag: BoundaryTag, t: f64) -> Option<f64>;

    /// `(S1, S_psi, S2)`: sources of the flow, capillarity and transport
    /// equations. `S_psi` is only non-zero in verification problems.
    fn sources(&self, _x: f64, _y: f64, _t: f64) -> [f64; 3] {
        [0.0; 3]
    }

    fn has_sources(&self) -> bool {
        false
    }
}

/// Recharge of a reservoir through the top-left segment, with the water table
/// held on the lower right-hand segment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RechargeBenchmark;

impl RechargeBenchmark {
    /// Inflow pressure head on D1: ramps from -2 to 0.2 over `t in [0, 1]`.
    pub fn inflow_head(t: f64) -> f64 {
        if t <= 1.0 + 1e-12 {
            -2.0 + 2.2 * t
        } else {
            0.2
        }
    }

    pub fn inflow_concentration(t: f64) -> f64 {
        if t <= 1.0 + 1e-12 {
            1.0
        } else {
            0.0
        }
    }
}

impl Problem for RechargeBenchmark {
    fn initial(&self, _x: f64, y: f64) -> [f64; 3] {
        [1.0 - y, 0.39, 3.0 - y]
    }

    fn psi_dirichlet(&self, _x: f64, y: f64, tag: BoundaryTag, t: f64) -> Option<f64> {
        match tag {
            BoundaryTag::D1 => Some(Self::inflow_head(t)),
            BoundaryTag::D2 => Some(1.0 - y),
            BoundaryTag::N => None,
        }
    }

    fn conc_dirichlet(&self, _x: f64, y: f64, tag: BoundaryTag, t: f64) -> Option<f64> {
        match tag {
            BoundaryTag::D1 => Some(Self::inflow_concentration(t)),
            BoundaryTag::D2 | BoundaryTag::N => Some(3.0 - y),
        }
    }
}

type Field = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Problem assembled from closures; used for equilibrium checks and the
/// single-element comparisons.
pub struct ClosureProblem {
    pub initial: Box<dyn Fn(f64, f64) -> [f64; 3] + Send + Sync>,
    pub psi_bc: Option<Field>,
    pub conc_bc: Option<Field>,
    /// Restricts which boundary nodes carry the Dirichlet values.
    pub constrained: fn(BoundaryTag) -> bool,
}

impl ClosureProblem {
    /// Uniform initial state, no-flow everywhere.
    pub fn uniform(psi: f64, theta: f64, c: f64) -> Self {
        Self {
            initial: Box::new(move |_, _| [psi, theta, c]),
            psi_bc: None,
            conc_bc: None,
            constrained: |_| true,
        }
    }
}

impl Problem for ClosureProblem {
    fn initial(&self, x: f64, y: f64) -> [f64; 3] {
        (self.initial)(x, y)
    }

    fn psi_dirichlet(&self, x: f64, y: f64, tag: BoundaryTag, t: f64) -> Option<f64> {
        if (self.constrained)(tag) {
            self.psi_bc.as_ref().map(|f| f(x, y, t))
        } else {
            None
        }
    }

    fn conc_dirichlet(&self, x: f64, y: f64, tag: BoundaryTag, t: f64) -> Option<f64> {
        if (self.constrained)(tag) {
            self.conc_bc.as_ref().map(|f| f(x, y, t))
        } else {
            None
        }
    }
}

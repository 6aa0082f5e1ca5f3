//! Closure relations: conductivity, capillary pressure, dynamic capillarity
//! coefficient and reaction kinetics, each with the partial derivatives the
//! Newton linearisation needs.
//!
//! The water content is an effective saturation in `(0, 1]`. Evaluations
//! inside the solvers go through [`ConstitutiveSet::clamp_theta`] first.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("water content {0} outside (0, 1]")]
    OutOfDomain(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn check_theta(theta: f64) -> Result<(), ConstitutiveError> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(ConstitutiveError::OutOfDomain(theta))
    }
}

/// Width of the band below full saturation where derivatives that blow up at
/// `theta = 1` are replaced by the secant slope over the band.
pub const SATURATION_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanGenuchtenParams {
    /// Saturated conductivity.
    pub k_s: f64,
    pub n: f64,
    pub alpha: f64,
    pub m: f64,
    /// Width `delta` of a linear blend between the two conductivity branches
    /// over `psi in (-delta, 0]`. Zero keeps the sharp switch.
    pub transition: f64,
}

impl VanGenuchtenParams {
    /// `m` defaults to `1 - 1/n`.
    pub fn new(k_s: f64, n: f64, alpha: f64) -> Result<Self, ConstitutiveError> {
        Self::with_m(k_s, n, alpha, 1.0 - 1.0 / n)
    }

    pub fn with_m(k_s: f64, n: f64, alpha: f64, m: f64) -> Result<Self, ConstitutiveError> {
        let bad = |what: &str| Err(ConstitutiveError::InvalidParameter(what.to_string()));
        if !(k_s > 0.0 && k_s.is_finite()) {
            return bad("K_s must be positive");
        }
        if !(n > 1.0 && n.is_finite()) {
            return bad("n must exceed 1");
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(m > 0.0 && m < 1.0) {
            return bad("m must lie in (0, 1)");
        }
        Ok(Self {
            k_s,
            n,
            alpha,
            m,
            transition: 0.0,
        })
    }
}

impl Default for VanGenuchtenParams {
    fn default() -> Self {
        Self {
            k_s: 1.0,
            n: 2.0,
            alpha: 1.0,
            m: 0.5,
            transition: 0.0,
        }
    }
}

// Unsaturated branch of the conductivity, no domain checks.
fn k_unsat(theta: f64, vg: &VanGenuchtenParams) -> f64 {
    let a = vg.n / (vg.n - 1.0);
    let w = (1.0 - theta.powf(a)).max(0.0);
    vg.k_s * theta.sqrt() * (1.0 - w.powf(1.0 / a))
}

fn dk_unsat(theta: f64, vg: &VanGenuchtenParams) -> f64 {
    if theta > 1.0 - SATURATION_BAND {
        let lo = 1.0 - SATURATION_BAND;
        return (k_unsat(1.0, vg) - k_unsat(lo, vg)) / SATURATION_BAND;
    }
    let a = vg.n / (vg.n - 1.0);
    let b = 1.0 / a;
    let w = 1.0 - theta.powf(a);
    let q = w.powf(b);
    let sq = theta.sqrt();
    vg.k_s * ((1.0 - q) / (2.0 * sq) + sq * w.powf(b - 1.0) * theta.powf(a - 1.0))
}

/// Conductivity: `K_s` for `psi > 0`, the unsaturated Mualem-van Genuchten
/// curve otherwise.
pub fn conductivity(theta: f64, psi: f64, vg: &VanGenuchtenParams) -> Result<f64, ConstitutiveError> {
    check_theta(theta)?;
    Ok(conductivity_unchecked(theta, psi, vg))
}

pub(crate) fn conductivity_unchecked(theta: f64, psi: f64, vg: &VanGenuchtenParams) -> f64 {
    if psi > 0.0 {
        vg.k_s
    } else if psi > -vg.transition {
        let s = 1.0 + psi / vg.transition;
        k_unsat(theta, vg) + s * (vg.k_s - k_unsat(theta, vg))
    } else {
        k_unsat(theta, vg)
    }
}

/// `(dK/dtheta, dK/dpsi)`. With a sharp switch the second entry is zero on
/// both branches and the jump at `psi = 0` is not differentiated; inside a
/// transition band it is the slope of the blend.
pub fn conductivity_derivatives(
    theta: f64,
    psi: f64,
    vg: &VanGenuchtenParams,
) -> Result<(f64, f64), ConstitutiveError> {
    check_theta(theta)?;
    Ok(conductivity_derivatives_unchecked(theta, psi, vg))
}

pub(crate) fn conductivity_derivatives_unchecked(
    theta: f64,
    psi: f64,
    vg: &VanGenuchtenParams,
) -> (f64, f64) {
    if psi > 0.0 {
        (0.0, 0.0)
    } else if psi > -vg.transition {
        let s = 1.0 + psi / vg.transition;
        ((1.0 - s) * dk_unsat(theta, vg), (vg.k_s - k_unsat(theta, vg)) / vg.transition)
    } else {
        (dk_unsat(theta, vg), 0.0)
    }
}

/// Size of the conductivity jump across `psi = 0` at fixed `theta`.
pub fn conductivity_jump(theta: f64, vg: &VanGenuchtenParams) -> Result<f64, ConstitutiveError> {
    check_theta(theta)?;
    Ok(vg.k_s - k_unsat(theta, vg))
}

/// Piecewise-linear capillary pressure curve in `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureTable {
    theta: Vec<f64>,
    pressure: Vec<f64>,
}

impl PressureTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ConstitutiveError> {
        let bad = |what: &str| Err(ConstitutiveError::InvalidParameter(what.to_string()));
        if points.len() < 2 {
            return bad("capillary table needs at least two points");
        }
        let (theta, pressure): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return bad("capillary table water contents must be strictly increasing");
        }
        if pressure.windows(2).any(|w| w[1] > w[0]) {
            return bad("capillary table pressures must be non-increasing");
        }
        if theta[0] <= 0.0 || *theta.last().unwrap() > 1.0 || pressure.iter().any(|p| *p < 0.0) {
            return bad("capillary table must live in (0,1] x [0, inf)");
        }
        Ok(Self { theta, pressure })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.theta.iter().copied().zip(self.pressure.iter().copied())
    }

    /// Value and slope; constant extrapolation outside the table.
    fn eval(&self, theta: f64) -> (f64, f64) {
        let t = &self.theta;
        let p = &self.pressure;
        if theta <= t[0] {
            return (p[0], 0.0);
        }
        if theta >= t[t.len() - 1] {
            return (p[p.len() - 1], 0.0);
        }
        let k = t.partition_point(|&x| x <= theta) - 1;
        let slope = (p[k + 1] - p[k]) / (t[k + 1] - t[k]);
        (p[k] + slope * (theta - t[k]), slope)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CapillaryModel {
    /// `(1/alpha) (theta^(-1/m) - 1)^(1/n)`, independent of concentration.
    VanGenuchten,
    /// `(1 - theta)^2.5 + gamma c`.
    Surfactant,
    /// Tabulated curve plus `gamma c`.
    Tabulated(PressureTable),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauModel {
    Constant(f64),
    /// `a + b theta`.
    Affine { a: f64, b: f64 },
}

pub type ReactionFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum ReactionModel {
    Zero,
    /// `rate * c`.
    Linear { rate: f64 },
    /// Returns `(R(c), dR/dc)`.
    Custom(ReactionFn),
}

impl fmt::Debug for ReactionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReactionModel::Zero => write!(f, "Zero"),
            ReactionModel::Linear { rate } => write!(f, "Linear {{ rate: {rate} }}"),
            ReactionModel::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl PartialEq for ReactionModel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ReactionModel::Zero, ReactionModel::Zero) => true,
            (ReactionModel::Linear { rate: a }, ReactionModel::Linear { rate: b }) => a == b,
            (ReactionModel::Custom(a), ReactionModel::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// Diffusion/dispersion coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diffusion {
    Scalar(f64),
    /// Row-major constant tensor.
    Tensor([[f64; 2]; 2]),
}

impl Diffusion {
    pub fn tensor(&self) -> [[f64; 2]; 2] {
        match *self {
            Diffusion::Scalar(d) => [[d, 0.0], [0.0, d]],
            Diffusion::Tensor(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstitutiveSet {
    pub vg: VanGenuchtenParams,
    pub capillary: CapillaryModel,
    pub tau: TauModel,
    pub reaction: ReactionModel,
    pub diffusion: Diffusion,
    /// Surfactant coupling coefficient in the capillary pressure.
    pub gamma: f64,
    /// Lower end of the clamping band `[theta_eps, 1]`.
    pub theta_eps: f64,
}

impl Default for ConstitutiveSet {
    /// The recharge-benchmark closures.
    fn default() -> Self {
        Self {
            vg: VanGenuchtenParams::default(),
            capillary: CapillaryModel::Surfactant,
            tau: TauModel::Constant(1.0),
            reaction: ReactionModel::Zero,
            diffusion: Diffusion::Scalar(1.0),
            gamma: 0.1,
            theta_eps: 1e-6,
        }
    }
}

impl ConstitutiveSet {
    /// Checks parameter ranges and samples the monotonicity requirements.
    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |what: String| Err(ConstitutiveError::InvalidParameter(what));
        let vg = self.vg;
        VanGenuchtenParams::with_m(vg.k_s, vg.n, vg.alpha, vg.m)?;
        match self.tau {
            TauModel::Constant(t) if !(t >= 0.0 && t.is_finite()) => {
                return bad(format!("tau must be non-negative, got {t}"))
            }
            TauModel::Affine { a, b } if !(a >= 0.0 && a + b >= 0.0 && a.is_finite() && b.is_finite()) => {
                return bad(format!("tau = {a} + {b} theta is negative somewhere on (0, 1]"))
            }
            _ => {}
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.theta_eps > 0.0 && self.theta_eps < 0.5) {
            return bad(format!("theta_eps must lie in (0, 0.5), got {}", self.theta_eps));
        }
        let d = self.diffusion.tensor();
        let sym = (d[0][1] - d[1][0]).abs() <= 1e-14 * (d[0][0].abs() + d[1][1].abs());
        let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
        if !(d[0][0] >= 0.0 && d[1][1] >= 0.0 && det >= 0.0 && sym) {
            return bad("diffusion must be symmetric positive semi-definite".to_string());
        }
        if let ReactionModel::Linear { rate } = self.reaction {
            if !rate.is_finite() {
                return bad("reaction rate must be finite".to_string());
            }
        }
        // sampled monotonicity
        let samples: Vec<f64> = (1..=200).map(|k| k as f64 / 200.0).collect();
        for w in samples.windows(2) {
            for c in [0.0, 1.0] {
                if self.capillary_pressure_unchecked(w[1], c).0 > self.capillary_pressure_unchecked(w[0], c).0 + 1e-12 {
                    return bad(format!("capillary pressure increases near theta = {}", w[0]));
                }
            }
            if k_unsat(w[1], &vg) + 1e-14 < k_unsat(w[0], &vg) {
                return bad(format!("conductivity decreases near theta = {}", w[0]));
            }
        }
        Ok(())
    }

    /// Projects onto `[theta_eps, 1]`; the flag reports whether it moved.
    #[inline]
    pub fn clamp_theta(&self, theta: f64) -> (f64, bool) {
        if theta < self.theta_eps {
            (self.theta_eps, true)
        } else if theta > 1.0 {
            (1.0, true)
        } else if theta.is_nan() {
            (theta, true)
        } else {
            (theta, false)
        }
    }

    pub fn conductivity(&self, theta: f64, psi: f64) -> Result<f64, ConstitutiveError> {
        conductivity(theta, psi, &self.vg)
    }

    pub fn conductivity_derivatives(&self, theta: f64, psi: f64) -> Result<(f64, f64), ConstitutiveError> {
        conductivity_derivatives(theta, psi, &self.vg)
    }

    /// `(p, dp/dtheta, dp/dc)`.
    pub fn capillary_pressure(&self, theta: f64, c: f64) -> Result<(f64, f64, f64), ConstitutiveError> {
        if !(theta > 0.0) {
            return Err(ConstitutiveError::OutOfDomain(theta));
        }
        check_theta(theta)?;
        Ok(self.capillary_pressure_unchecked(theta, c))
    }

    pub(crate) fn capillary_pressure_unchecked(&self, theta: f64, c: f64) -> (f64, f64, f64) {
        match &self.capillary {
            CapillaryModel::Surfactant => {
                let w = (1.0 - theta).max(0.0);
                (w.powf(2.5) + self.gamma * c, -2.5 * w.powf(1.5), self.gamma)
            }
            CapillaryModel::VanGenuchten => {
                let vg = &self.vg;
                let p = |t: f64| (t.powf(-1.0 / vg.m) - 1.0).max(0.0).powf(1.0 / vg.n) / vg.alpha;
                let dp = if theta > 1.0 - SATURATION_BAND {
                    (p(1.0) - p(1.0 - SATURATION_BAND)) / SATURATION_BAND
                } else {
                    let s = theta.powf(-1.0 / vg.m) - 1.0;
                    -s.powf(1.0 / vg.n - 1.0) * theta.powf(-1.0 / vg.m - 1.0) / (vg.alpha * vg.n * vg.m)
                };
                (p(theta), dp, 0.0)
            }
            CapillaryModel::Tabulated(table) => {
                let (p, dp) = table.eval(theta);
                (p + self.gamma * c, dp, self.gamma)
            }
        }
    }

    /// `(tau, dtau/dtheta)`.
    pub fn tau(&self, theta: f64) -> (f64, f64) {
        match self.tau {
            TauModel::Constant(t) => (t, 0.0),
            TauModel::Affine { a, b } => ((a + b * theta).max(0.0), b),
        }
    }

    /// `(R, dR/dc)`.
    pub fn reaction(&self, c: f64) -> (f64, f64) {
        match &self.reaction {
            ReactionModel::Zero => (0.0, 0.0),
            ReactionModel::Linear { rate } => (rate * c, *rate),
            ReactionModel::Custom(f) => f(c),
        }
    }
}

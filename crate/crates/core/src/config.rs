//! Run configuration: a line-oriented `key = value` format with optional
//! `[mesh]`, `[time]`, `[scheme]`, `[constitutive]` and `[output]` sections.
//!
//! ```text
//! preset = haverkamp-recharge
//!
//! [mesh]
//! dx = 1/20
//!
//! [scheme]
//! strategy = MON-Mixed   # L-scheme start, Newton afterwards
//! ```
//!
//! Keys are case-insensitive and may appear at top level or inside their own
//! section. Numbers accept the fraction form `a/b`. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::constitutive::{
    CapillaryModel, ConstitutiveError, ConstitutiveSet, Diffusion, PressureTable, ReactionModel, TauModel,
    VanGenuchtenParams,
};
use crate::driver::{FailurePolicy, TimeGrid, TimeGridError};
use crate::fem::{ElementKind, FeSpace};
use crate::mesh::{build_grid, classify_boundary, Domain2D, MeshError};
use crate::schemes::{
    BranchSelection, FluxLag, LStabilization, NormKind, SchemeConfig, Solver, SplitMode, Strategy,
};

pub const RECHARGE_PRESET: &str = "haverkamp-recharge";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownSetting(String),
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Time(#[from] TimeGridError),
}

fn value_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: Domain2D,
    pub nx: usize,
    pub ny: usize,
    pub element: ElementKind,
    pub dt: f64,
    pub t_final: f64,
    pub adaptive: bool,
    pub max_halvings: u32,
    pub scheme: SchemeConfig,
    pub constitutive: ConstitutiveSet,
    pub output_dir: PathBuf,
    /// Snapshot every this many steps (0 disables VTK output).
    pub snapshot_every: usize,
}

impl RunConfig {
    /// The recharge benchmark at `dx = dt = 1/10` with MON-LS.
    pub fn recharge_preset() -> Self {
        Self {
            domain: Domain2D::reservoir(),
            nx: 20,
            ny: 30,
            element: ElementKind::Q1,
            dt: 0.1,
            t_final: 3.0,
            adaptive: false,
            max_halvings: 4,
            scheme: SchemeConfig::default(),
            constitutive: ConstitutiveSet::default(),
            output_dir: PathBuf::from("output"),
            snapshot_every: 5,
        }
    }

    /// Sets `nx`, `ny` from a square cell size.
    pub fn set_dx(&mut self, dx: f64) -> Result<(), ConfigError> {
        self.nx = cells_for(self.domain.width(), dx, "dx")?;
        self.ny = cells_for(self.domain.height(), dx, "dx")?;
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.domain.width() / self.nx as f64
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        Ok(TimeGrid::with_step(self.t_final, self.dt)?)
    }

    pub fn failure_policy(&self) -> FailurePolicy {
        if self.adaptive {
            FailurePolicy::Halve {
                max_halvings: self.max_halvings,
            }
        } else {
            FailurePolicy::Abort
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nx == 0 || self.ny == 0 {
            return Err(value_err("nx", "cell counts must be positive"));
        }
        self.scheme.validate().map_err(|m| value_err("scheme", m))?;
        self.constitutive.validate()?;
        self.time_grid()?;
        Ok(())
    }

    /// Mesh, space, boundary tags and solver for this configuration.
    pub fn build_solver(&self) -> Result<Solver, ConfigError> {
        self.validate()?;
        let mesh = Arc::new(build_grid(self.domain, self.nx, self.ny)?);
        let tags = classify_boundary(&mesh, &self.domain);
        let space = Arc::new(FeSpace::new(mesh, self.element));
        Ok(Solver::new(space, self.constitutive.clone(), self.scheme.clone(), tags))
    }

    /// Applies one `key = value` assignment (as used by `--set`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = normalize_key(key);
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownSetting(key));
        }
        apply(self, &key, value)
    }
}

fn cells_for(length: f64, dx: f64, key: &str) -> Result<usize, ConfigError> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(value_err(key, format!("must be positive, got {dx}")));
    }
    let n = (length / dx).round();
    if n < 1.0 || (n * dx - length).abs() > 1e-9 * length {
        return Err(value_err(key, format!("{dx} does not divide the side length {length}")));
    }
    Ok(n as usize)
}

const SECTIONS: [&str; 5] = ["mesh", "time", "scheme", "constitutive", "output"];

/// Every accepted key with its section.
const KEYS: &[(&str, &str)] = &[
    ("x_min", "mesh"),
    ("x_max", "mesh"),
    ("y_min", "mesh"),
    ("y_max", "mesh"),
    ("nx", "mesh"),
    ("ny", "mesh"),
    ("dx", "mesh"),
    ("element", "mesh"),
    ("dt", "time"),
    ("t", "time"),
    ("adaptive", "time"),
    ("max_halvings", "time"),
    ("strategy", "scheme"),
    ("l1_psi", "scheme"),
    ("l1_theta", "scheme"),
    ("l2", "scheme"),
    ("l3", "scheme"),
    ("tol", "scheme"),
    ("max_iter", "scheme"),
    ("mixed_switch", "scheme"),
    ("mixed_switch_tol", "scheme"),
    ("newton_fallback", "scheme"),
    ("newton_stall", "scheme"),
    ("flux_lag", "scheme"),
    ("l_stabilization", "scheme"),
    ("branch", "scheme"),
    ("split_mode", "scheme"),
    ("norm", "scheme"),
    ("divergence_bound", "scheme"),
    ("lumped_capillarity", "scheme"),
    ("clamp_iterates", "scheme"),
    ("k_s", "constitutive"),
    ("n", "constitutive"),
    ("alpha", "constitutive"),
    ("m", "constitutive"),
    ("transition", "constitutive"),
    ("capillary", "constitutive"),
    ("capillary_table", "constitutive"),
    ("gamma", "constitutive"),
    ("tau", "constitutive"),
    ("tau_slope", "constitutive"),
    ("d", "constitutive"),
    ("d_tensor", "constitutive"),
    ("reaction_rate", "constitutive"),
    ("theta_eps", "constitutive"),
    ("output_dir", "output"),
    ("snapshot_every", "output"),
];

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase()
}

/// Parses a float, accepting `a/b`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b) = (a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => s.parse().ok(),
    }
}

fn num(key: &str, v: &str) -> Result<f64, ConfigError> {
    parse_number(v).ok_or_else(|| value_err(key, format!("expected a number, got `{v}`")))
}

fn count(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| value_err(key, format!("expected a non-negative integer, got `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(value_err(key, format!("expected true/false, got `{v}`"))),
    }
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
    let lower = v.trim().to_ascii_lowercase();
    options
        .iter()
        .find(|(name, _)| *name == lower)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            value_err(key, format!("expected one of {}, got `{v}`", names.join(", ")))
        })
}

fn numbers(key: &str, v: &str, expected: usize) -> Result<Vec<f64>, ConfigError> {
    let vals: Vec<f64> = v
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect::<Result<_, _>>()?;
    if vals.len() != expected {
        return Err(value_err(key, format!("expected {expected} numbers, got {}", vals.len())));
    }
    Ok(vals)
}

const ELEMENTS: [(&str, ElementKind); 2] = [("q1", ElementKind::Q1), ("p1", ElementKind::P1)];
const FLUX_LAGS: [(&str, FluxLag); 2] = [
    ("previous-time", FluxLag::PreviousTime),
    ("current-iterate", FluxLag::CurrentIterate),
];
const STABILIZATIONS: [(&str, LStabilization); 2] =
    [("gradient", LStabilization::Gradient), ("mass", LStabilization::Mass)];
const BRANCHES: [(&str, BranchSelection); 2] = [
    ("previous-time", BranchSelection::PreviousTime),
    ("iterate", BranchSelection::Iterate),
];
const SPLIT_MODES: [(&str, SplitMode); 2] = [("merged", SplitMode::Merged), ("nested", SplitMode::Nested)];
const NORMS: [(&str, NormKind); 2] = [("l2", NormKind::L2), ("euclidean", NormKind::Euclidean)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], t: T) -> &'static str {
    options.iter().find(|(_, o)| *o == t).map(|(n, _)| *n).expect("listed option")
}

fn apply(cfg: &mut RunConfig, key: &str, v: &str) -> Result<(), ConfigError> {
    let s = &mut cfg.scheme;
    let c = &mut cfg.constitutive;
    match key {
        "x_min" => cfg.domain.x_min = num(key, v)?,
        "x_max" => cfg.domain.x_max = num(key, v)?,
        "y_min" => cfg.domain.y_min = num(key, v)?,
        "y_max" => cfg.domain.y_max = num(key, v)?,
        "nx" => cfg.nx = count(key, v)?,
        "ny" => cfg.ny = count(key, v)?,
        "dx" => {
            let dx = num(key, v)?;
            cfg.set_dx(dx)?;
        }
        "element" => cfg.element = choice(key, v, &ELEMENTS)?,
        "dt" => cfg.dt = num(key, v)?,
        "t" => cfg.t_final = num(key, v)?,
        "adaptive" => cfg.adaptive = flag(key, v)?,
        "max_halvings" => cfg.max_halvings = count(key, v)? as u32,
        "strategy" => {
            s.strategy = Strategy::parse(v).ok_or_else(|| value_err(key, format!("unknown strategy `{}`", v.trim())))?
        }
        "l1_psi" => s.l1_psi = num(key, v)?,
        "l1_theta" => s.l1_theta = num(key, v)?,
        "l2" => s.l2 = num(key, v)?,
        "l3" => s.l3 = num(key, v)?,
        "tol" => s.tol = num(key, v)?,
        "max_iter" => s.max_iter = count(key, v)?,
        "mixed_switch" => s.mixed_switch = count(key, v)?,
        "mixed_switch_tol" => s.mixed_switch_tol = num(key, v)?,
        "newton_fallback" => s.newton_fallback = flag(key, v)?,
        "newton_stall" => s.newton_stall = count(key, v)?,
        "flux_lag" => s.flux_lag = choice(key, v, &FLUX_LAGS)?,
        "l_stabilization" => s.l_stabilization = choice(key, v, &STABILIZATIONS)?,
        "branch" => s.branch = choice(key, v, &BRANCHES)?,
        "split_mode" => s.split_mode = choice(key, v, &SPLIT_MODES)?,
        "norm" => s.norm = choice(key, v, &NORMS)?,
        "divergence_bound" => s.divergence_bound = num(key, v)?,
        "lumped_capillarity" => s.lumped_capillarity = flag(key, v)?,
        "clamp_iterates" => s.clamp_iterates = flag(key, v)?,
        "k_s" => c.vg.k_s = num(key, v)?,
        "n" => {
            // m follows n unless set explicitly afterwards
            c.vg.n = num(key, v)?;
            c.vg.m = 1.0 - 1.0 / c.vg.n;
        }
        "alpha" => c.vg.alpha = num(key, v)?,
        "m" => c.vg.m = num(key, v)?,
        "transition" => c.vg.transition = num(key, v)?,
        "capillary" => {
            c.capillary = match v.trim().to_ascii_lowercase().as_str() {
                "surfactant" => CapillaryModel::Surfactant,
                "van-genuchten" => CapillaryModel::VanGenuchten,
                "tabulated" => match &c.capillary {
                    CapillaryModel::Tabulated(_) => c.capillary.clone(),
                    _ => return Err(value_err(key, "set `capillary_table` to use a tabulated curve")),
                },
                _ => {
                    return Err(value_err(
                        key,
                        format!("expected surfactant, van-genuchten or tabulated, got `{v}`"),
                    ))
                }
            }
        }
        "capillary_table" => {
            let mut pts = Vec::new();
            for pair in v.split_whitespace() {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| value_err(key, format!("expected theta:pressure pairs, got `{pair}`")))?;
                pts.push((num(key, a)?, num(key, b)?));
            }
            c.capillary = CapillaryModel::Tabulated(PressureTable::new(pts)?);
        }
        "gamma" => c.gamma = num(key, v)?,
        "tau" => {
            let a = num(key, v)?;
            c.tau = match c.tau {
                TauModel::Affine { b, .. } if b != 0.0 => TauModel::Affine { a, b },
                _ => TauModel::Constant(a),
            }
        }
        "tau_slope" => {
            let b = num(key, v)?;
            let a = match c.tau {
                TauModel::Constant(a) | TauModel::Affine { a, .. } => a,
            };
            c.tau = if b == 0.0 {
                TauModel::Constant(a)
            } else {
                TauModel::Affine { a, b }
            };
        }
        "d" => c.diffusion = Diffusion::Scalar(num(key, v)?),
        "d_tensor" => {
            let t = numbers(key, v, 4)?;
            c.diffusion = Diffusion::Tensor([[t[0], t[1]], [t[2], t[3]]]);
        }
        "reaction_rate" => {
            let r = num(key, v)?;
            c.reaction = if r == 0.0 {
                ReactionModel::Zero
            } else {
                ReactionModel::Linear { rate: r }
            };
        }
        "theta_eps" => c.theta_eps = num(key, v)?,
        "output_dir" => cfg.output_dir = PathBuf::from(v.trim()),
        "snapshot_every" => cfg.snapshot_every = count(key, v)?,
        _ => unreachable!("key table and apply() out of sync: {key}"),
    }
    Ok(())
}

/// Parses and validates a configuration.
///
/// Without `preset`, the mesh (`nx`/`ny` or `dx`), `dt`, `T` and `strategy`
/// are required; with it every key is optional and overrides the preset.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut section: Option<String> = None;
    let mut preset: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: format!("malformed section header `{content}`"),
                })?
                .trim()
                .to_ascii_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("unknown section `[{name}]`"),
                });
            }
            section = Some(name);
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = normalize_key(k);
        let value = v.trim().to_string();
        if value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("empty value for `{key}`"),
            });
        }
        if key == "preset" {
            if section.is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: "`preset` must appear before any section".into(),
                });
            }
            preset = Some(value.to_ascii_lowercase());
            continue;
        }
        let home = KEYS
            .iter()
            .find(|(name, _)| *name == key)
            .map(|(_, s)| *s)
            .ok_or_else(|| ConfigError::UnknownKey { line, key: key.clone() })?;
        if let Some(sec) = &section {
            if sec != home {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: format!("{sec}.{key}"),
                });
            }
        }
        if seen.insert(key.clone(), line).is_some() {
            return Err(ConfigError::Duplicate { line, key });
        }
        entries.push((line, key, value));
    }

    let mut cfg = match preset.as_deref() {
        Some(RECHARGE_PRESET) => RunConfig::recharge_preset(),
        Some(other) => return Err(ConfigError::UnknownPreset(other.to_string())),
        None => {
            let has = |k: &str| seen.contains_key(k);
            if !(has("dx") || (has("nx") && has("ny"))) {
                return Err(ConfigError::Missing("dx (or nx and ny)"));
            }
            for k in [("dt", "dt"), ("t", "T"), ("strategy", "strategy")] {
                if !has(k.0) {
                    return Err(ConfigError::Missing(k.1));
                }
            }
            RunConfig::recharge_preset()
        }
    };
    // domain bounds first so that `dx` sees the final side lengths
    entries.sort_by_key(|(_, k, _)| !matches!(k.as_str(), "x_min" | "x_max" | "y_min" | "y_max"));
    // `n` resets `m`, so an explicit `m` goes last
    entries.sort_by_key(|(_, k, _)| k == "m");
    for (line, key, value) in &entries {
        apply(&mut cfg, key, value).map_err(|e| match e {
            ConfigError::Value { key, msg } => ConfigError::Syntax {
                line: *line,
                msg: format!("`{key}`: {msg}"),
            },
            other => other,
        })?;
    }
    Domain2D::new(cfg.domain.x_min, cfg.domain.x_max, cfg.domain.y_min, cfg.domain.y_max)?;
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Renders a configuration that [`parse_config`] reads back unchanged.
///
/// Custom reaction closures cannot be expressed in the text format and are
/// rendered as their linearisation at `c = 0`.
pub fn render(cfg: &RunConfig) -> String {
    let s = &cfg.scheme;
    let c = &cfg.constitutive;
    let mut out = String::new();
    let d = &cfg.domain;
    let _ = writeln!(out, "[mesh]");
    for (k, v) in [("x_min", d.x_min), ("x_max", d.x_max), ("y_min", d.y_min), ("y_max", d.y_max)] {
        let _ = writeln!(out, "{k} = {}", fmt_f(v));
    }
    let _ = writeln!(out, "nx = {}", cfg.nx);
    let _ = writeln!(out, "ny = {}", cfg.ny);
    let _ = writeln!(out, "element = {}", name_of(&ELEMENTS, cfg.element));

    let _ = writeln!(out, "\n[time]");
    let _ = writeln!(out, "dt = {}", fmt_f(cfg.dt));
    let _ = writeln!(out, "T = {}", fmt_f(cfg.t_final));
    let _ = writeln!(out, "adaptive = {}", cfg.adaptive);
    let _ = writeln!(out, "max_halvings = {}", cfg.max_halvings);

    let _ = writeln!(out, "\n[scheme]");
    let _ = writeln!(out, "strategy = {}", s.strategy);
    for (k, v) in [
        ("L1_psi", s.l1_psi),
        ("L1_theta", s.l1_theta),
        ("L2", s.l2),
        ("L3", s.l3),
        ("tol", s.tol),
    ] {
        let _ = writeln!(out, "{k} = {}", fmt_f(v));
    }
    let _ = writeln!(out, "max_iter = {}", s.max_iter);
    let _ = writeln!(out, "mixed_switch = {}", s.mixed_switch);
    let _ = writeln!(out, "mixed_switch_tol = {}", fmt_f(s.mixed_switch_tol));
    let _ = writeln!(out, "newton_fallback = {}", s.newton_fallback);
    let _ = writeln!(out, "newton_stall = {}", s.newton_stall);
    let _ = writeln!(out, "flux_lag = {}", name_of(&FLUX_LAGS, s.flux_lag));
    let _ = writeln!(out, "l_stabilization = {}", name_of(&STABILIZATIONS, s.l_stabilization));
    let _ = writeln!(out, "branch = {}", name_of(&BRANCHES, s.branch));
    let _ = writeln!(out, "split_mode = {}", name_of(&SPLIT_MODES, s.split_mode));
    let _ = writeln!(out, "norm = {}", name_of(&NORMS, s.norm));
    let _ = writeln!(out, "divergence_bound = {}", fmt_f(s.divergence_bound));
    let _ = writeln!(out, "lumped_capillarity = {}", s.lumped_capillarity);
    let _ = writeln!(out, "clamp_iterates = {}", s.clamp_iterates);

    let _ = writeln!(out, "\n[constitutive]");
    let vg: VanGenuchtenParams = c.vg;
    for (k, v) in [
        ("K_s", vg.k_s),
        ("n", vg.n),
        ("alpha", vg.alpha),
        ("m", vg.m),
        ("transition", vg.transition),
    ] {
        let _ = writeln!(out, "{k} = {}", fmt_f(v));
    }
    match &c.capillary {
        CapillaryModel::Surfactant => {
            let _ = writeln!(out, "capillary = surfactant");
        }
        CapillaryModel::VanGenuchten => {
            let _ = writeln!(out, "capillary = van-genuchten");
        }
        CapillaryModel::Tabulated(t) => {
            let pts: Vec<String> = t.points().map(|(a, b)| format!("{}:{}", fmt_f(a), fmt_f(b))).collect();
            let _ = writeln!(out, "capillary_table = {}", pts.join(" "));
        }
    }
    let _ = writeln!(out, "gamma = {}", fmt_f(c.gamma));
    let (a, b) = match c.tau {
        TauModel::Constant(a) => (a, 0.0),
        TauModel::Affine { a, b } => (a, b),
    };
    let _ = writeln!(out, "tau = {}", fmt_f(a));
    let _ = writeln!(out, "tau_slope = {}", fmt_f(b));
    match c.diffusion {
        Diffusion::Scalar(dv) => {
            let _ = writeln!(out, "D = {}", fmt_f(dv));
        }
        Diffusion::Tensor(t) => {
            let _ = writeln!(
                out,
                "D_tensor = {} {} {} {}",
                fmt_f(t[0][0]),
                fmt_f(t[0][1]),
                fmt_f(t[1][0]),
                fmt_f(t[1][1])
            );
        }
    }
    let rate = match &c.reaction {
        ReactionModel::Zero => 0.0,
        ReactionModel::Linear { rate } => *rate,
        ReactionModel::Custom(f) => f(0.0).1,
    };
    let _ = writeln!(out, "reaction_rate = {}", fmt_f(rate));
    let _ = writeln!(out, "theta_eps = {}", fmt_f(c.theta_eps));

    let _ = writeln!(out, "\n[output]");
    let _ = writeln!(out, "output_dir = {}", cfg.output_dir.display());
    let _ = writeln!(out, "snapshot_every = {}", cfg.snapshot_every);
    out
}

/// The text printed by `print-preset`.
pub fn preset_text(name: &str) -> Result<String, ConfigError> {
    if name.trim().to_ascii_lowercase() != RECHARGE_PRESET {
        return Err(ConfigError::UnknownPreset(name.to_string()));
    }
    Ok(format!(
        "# {RECHARGE_PRESET}: reservoir recharge on (0,2)x(0,3), t in (0,3]\n{}",
        render(&RunConfig::recharge_preset())
    ))
}

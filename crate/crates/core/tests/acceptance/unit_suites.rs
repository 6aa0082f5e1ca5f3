//! Unit-level checks that are also summarised by acceptance criterion 7.
//! Each check returns a one-line summary on success.

use std::sync::Arc;

use porflow::config::{parse_config, render, RunConfig};
use porflow::constitutive::{
    CapillaryModel, ConstitutiveSet, Diffusion, PressureTable, ReactionModel, TauModel, VanGenuchtenParams,
};
use porflow::fem::{Coefficient, ElementKind, FeSpace};
use porflow::linalg::{norm2, CsrMatrix, LuSolver};
use porflow::mesh::{build_grid, Domain2D};
use porflow::output::{validate_vtk, vtk_snapshot, SCALAR_NAMES};
use porflow::problem::{Problem, RechargeBenchmark};
use porflow::schemes::{Linearization, SchemeConfig, StateTriple, Strategy};

pub type Check = fn() -> Result<String, String>;

pub const SUITES: [(&str, Check); 6] = [
    ("constitutive derivatives", constitutive_derivatives),
    ("assembly stencils", assembly_stencils),
    ("stiffness row sums", stiffness_row_sums),
    ("linear solver residual", solver_residual_contract),
    ("config round trip", config_round_trip),
    ("VTK structure", vtk_structure),
];

const FD_H: f64 = 1e-6;

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_H) - f(x - FD_H)) / (2.0 * FD_H)
}

/// Relative mismatch, treating two values below `1e-12` as equal.
fn rel(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (analytic - fd).abs() / scale
    }
}

pub fn constitutive_derivatives() -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let mut track = |what: String, e: f64| {
        if e > worst {
            worst = e;
            where_ = what;
        }
    };

    for n in [2.0, 3.0, 4.0] {
        let vg = VanGenuchtenParams::new(1.0, n, 1.0).map_err(|e| e.to_string())?;
        let set = ConstitutiveSet {
            vg,
            ..ConstitutiveSet::default()
        };
        for i in 1..=19 {
            let theta = 0.05 * i as f64;
            for psi in [-2.0, -0.3, 0.4] {
                let (dk_dtheta, dk_dpsi) = set.conductivity_derivatives(theta, psi).map_err(|e| e.to_string())?;
                let fd_theta = central(|t| set.conductivity(t, psi).unwrap(), theta);
                let fd_psi = central(|p| set.conductivity(theta, p).unwrap(), psi);
                track(format!("dK/dtheta n={n} theta={theta} psi={psi}"), rel(dk_dtheta, fd_theta));
                track(format!("dK/dpsi n={n} theta={theta} psi={psi}"), rel(dk_dpsi, fd_psi));
            }
        }
    }

    // blended conductivity inside a transition band
    let mut vg = VanGenuchtenParams::new(1.0, 2.0, 1.0).map_err(|e| e.to_string())?;
    vg.transition = 0.5;
    let set = ConstitutiveSet {
        vg,
        ..ConstitutiveSet::default()
    };
    for psi in [-0.4, -0.25, -0.1] {
        for theta in [0.2, 0.6] {
            let (dk_dtheta, dk_dpsi) = set.conductivity_derivatives(theta, psi).map_err(|e| e.to_string())?;
            track(
                format!("blend dK/dtheta theta={theta} psi={psi}"),
                rel(dk_dtheta, central(|t| set.conductivity(t, psi).unwrap(), theta)),
            );
            track(
                format!("blend dK/dpsi theta={theta} psi={psi}"),
                rel(dk_dpsi, central(|p| set.conductivity(theta, p).unwrap(), psi)),
            );
        }
    }

    let table = PressureTable::new(vec![(0.1, 3.0), (0.5, 1.0), (1.0, 0.0)]).map_err(|e| e.to_string())?;
    for capillary in [CapillaryModel::Surfactant, CapillaryModel::VanGenuchten, CapillaryModel::Tabulated(table)] {
        let set = ConstitutiveSet {
            capillary: capillary.clone(),
            ..ConstitutiveSet::default()
        };
        for theta in [0.15, 0.3, 0.45, 0.7, 0.9] {
            for c in [0.0, 0.8] {
                let (_, dp_dtheta, dp_dc) = set.capillary_pressure(theta, c).map_err(|e| e.to_string())?;
                let fd_theta = central(|t| set.capillary_pressure(t, c).unwrap().0, theta);
                let fd_c = central(|v| set.capillary_pressure(theta, v).unwrap().0, c);
                track(format!("dp/dtheta {capillary:?} theta={theta}"), rel(dp_dtheta, fd_theta));
                track(format!("dp/dc {capillary:?} theta={theta}"), rel(dp_dc, fd_c));
            }
        }
    }

    let set = ConstitutiveSet {
        tau: TauModel::Affine { a: 0.5, b: 0.3 },
        reaction: ReactionModel::Linear { rate: 0.7 },
        ..ConstitutiveSet::default()
    };
    for x in [0.2, 0.6] {
        track(format!("dtau/dtheta theta={x}"), rel(set.tau(x).1, central(|t| set.tau(t).0, x)));
        track(format!("dR/dc c={x}"), rel(set.reaction(x).1, central(|c| set.reaction(c).0, x)));
    }

    if worst <= 1e-5 {
        Ok(format!("largest relative mismatch {worst:.1e}"))
    } else {
        Err(format!("relative mismatch {worst:.2e} at {where_}"))
    }
}

/// One-dimensional linear element matrices on an interval of length `h`,
/// indexed by whether two nodes coincide in that direction.
fn mass_1d(h: f64, same: bool) -> f64 {
    if same {
        h / 3.0
    } else {
        h / 6.0
    }
}

fn stiff_1d(h: f64, same: bool) -> f64 {
    if same {
        1.0 / h
    } else {
        -1.0 / h
    }
}

/// Linear triangle: mass and stiffness from the vertex coordinates.
fn triangle_matrices(p: [[f64; 2]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * area2.abs();
    let b = |i: usize| p[(i + 1) % 3][1] - p[(i + 2) % 3][1];
    let c = |i: usize| p[(i + 2) % 3][0] - p[(i + 1) % 3][0];
    let mut m = [[0.0; 3]; 3];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
            k[i][j] = (b(i) * b(j) + c(i) * c(j)) / (4.0 * area);
        }
    }
    (m, k)
}

fn max_dense_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

pub fn assembly_stencils() -> Result<String, String> {
    let (hx, hy) = (0.5, 0.25);
    let dom = Domain2D::new(1.0, 1.0 + hx, -1.0, -1.0 + hy).map_err(|e| e.to_string())?;
    let mesh = Arc::new(build_grid(dom, 1, 1).map_err(|e| e.to_string())?);
    let nodes = mesh.nodes.clone();
    let mut worst = 0.0f64;

    // bilinear rectangle as a tensor product of 1D elements
    let q1 = FeSpace::new(mesh.clone(), ElementKind::Q1);
    let d = [3.0, 0.5];
    let mut m_ref = vec![vec![0.0; 4]; 4];
    let mut k_ref = vec![vec![0.0; 4]; 4];
    let mut t_ref = vec![vec![0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let sx = nodes[i][0] == nodes[j][0];
            let sy = nodes[i][1] == nodes[j][1];
            m_ref[i][j] = mass_1d(hx, sx) * mass_1d(hy, sy);
            let kx = stiff_1d(hx, sx) * mass_1d(hy, sy);
            let ky = mass_1d(hx, sx) * stiff_1d(hy, sy);
            k_ref[i][j] = kx + ky;
            t_ref[i][j] = d[0] * kx + d[1] * ky;
        }
    }
    let m = q1.assemble_weighted_mass(&Coefficient::Constant(1.0)).map_err(|e| e.to_string())?;
    let k = q1
        .assemble_weighted_stiffness(&Coefficient::Constant(1.0))
        .map_err(|e| e.to_string())?;
    let t = q1.assemble_tensor_stiffness([[d[0], 0.0], [0.0, d[1]]]);
    worst = worst.max(max_dense_diff(&m.to_dense(), &m_ref));
    worst = worst.max(max_dense_diff(&k.to_dense(), &k_ref));
    worst = worst.max(max_dense_diff(&t.to_dense(), &t_ref));

    // two triangles split along the lower-left/upper-right diagonal
    let p1 = FeSpace::new(mesh, ElementKind::P1);
    let find = |x: f64, y: f64| nodes.iter().position(|p| p[0] == x && p[1] == y).expect("corner node");
    let (x0, x1, y0, y1) = (dom.x_min, dom.x_max, dom.y_min, dom.y_max);
    let tris = [
        [find(x0, y0), find(x1, y0), find(x1, y1)],
        [find(x0, y0), find(x1, y1), find(x0, y1)],
    ];
    let mut m_ref = vec![vec![0.0; 4]; 4];
    let mut k_ref = vec![vec![0.0; 4]; 4];
    for tri in tris {
        let (m, k) = triangle_matrices([nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]]);
        for a in 0..3 {
            for b in 0..3 {
                m_ref[tri[a]][tri[b]] += m[a][b];
                k_ref[tri[a]][tri[b]] += k[a][b];
            }
        }
    }
    let m = p1.assemble_weighted_mass(&Coefficient::Constant(1.0)).map_err(|e| e.to_string())?;
    let k = p1
        .assemble_weighted_stiffness(&Coefficient::Constant(1.0))
        .map_err(|e| e.to_string())?;
    worst = worst.max(max_dense_diff(&m.to_dense(), &m_ref));
    worst = worst.max(max_dense_diff(&k.to_dense(), &k_ref));

    if worst <= 1e-13 {
        Ok(format!("Q1 and P1 element matrices within {worst:.1e}"))
    } else {
        Err(format!("element matrices differ by {worst:.2e}"))
    }
}

pub fn stiffness_row_sums() -> Result<String, String> {
    let mut worst = 0.0f64;
    for kind in [ElementKind::Q1, ElementKind::P1] {
        let mesh = Arc::new(build_grid(Domain2D::reservoir(), 20, 30).map_err(|e| e.to_string())?);
        let weight: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|p| 0.2 + p[0] * p[0] + (3.0 * p[1]).sin().abs())
            .collect();
        let space = FeSpace::new(mesh, kind);
        let k = space
            .assemble_weighted_stiffness(&Coefficient::Nodal(weight))
            .map_err(|e| e.to_string())?;
        let t = space.assemble_tensor_stiffness([[2.0, 0.3], [0.3, 0.7]]);
        for s in k.row_sums().into_iter().chain(t.row_sums()) {
            worst = worst.max(s.abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("largest row sum {worst:.1e}"))
    } else {
        Err(format!("row sum {worst:.2e} exceeds 1e-12"))
    }
}

/// `|Ax - b| / (|A|_F |x| + |b|)`.
fn backward_error(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    norm2(&r) / (a.frobenius_norm() * norm2(x) + norm2(b))
}

pub fn solver_residual_contract() -> Result<String, String> {
    let mut worst = 0.0f64;

    // nonsymmetric convection-diffusion operator on the reservoir
    let mesh = Arc::new(build_grid(Domain2D::reservoir(), 20, 30).map_err(|e| e.to_string())?);
    let space = FeSpace::new(mesh.clone(), ElementKind::Q1);
    let mut a = space.assemble_tensor_stiffness([[1.0, 0.0], [0.0, 1.0]]);
    let u = vec![[3.0, -5.0]; space.num_qp()];
    let c = space.assemble_convection(&u).map_err(|e| e.to_string())?;
    let m = space.assemble_weighted_mass(&Coefficient::Constant(1.0)).map_err(|e| e.to_string())?;
    a.add_scaled(1.0, &c);
    a.add_scaled(10.0, &m);
    let b: Vec<f64> = (0..a.nrows()).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
    let mut lu = LuSolver::new(a.pattern.clone()).map_err(|e| e.to_string())?;
    let x = lu.solve(&a, &b).map_err(|e| e.to_string())?;
    worst = worst.max(backward_error(&a, &x, &b));

    // the first monolithic Newton system of the recharge benchmark
    let mut cfg = RunConfig::recharge_preset();
    cfg.scheme.strategy = Strategy::MonNewton;
    let solver = cfg.build_solver().map_err(|e| e.to_string())?;
    let prev = StateTriple::from_fn(&solver.space.mesh, 0.0, |x, y| RechargeBenchmark.initial(x, y));
    let ctx = solver
        .step_context(&RechargeBenchmark, &prev, cfg.dt, cfg.dt)
        .map_err(|e| e.to_string())?;
    for lin in [Linearization::Newton, Linearization::LScheme] {
        let (a, b) = solver
            .monolithic_system(&ctx, &ctx.initial_iterate(), lin)
            .map_err(|e| e.to_string())?;
        let mut lu = LuSolver::new(a.pattern.clone()).map_err(|e| e.to_string())?;
        let x = lu.solve(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max(backward_error(&a, &x, &b));
    }

    if worst <= 1e-10 {
        Ok(format!("largest backward error {worst:.1e}"))
    } else {
        Err(format!("backward error {worst:.2e} exceeds 1e-10"))
    }
}

/// Configurations that exercise every section of the format.
pub fn sample_configs() -> Vec<RunConfig> {
    let mut out = vec![RunConfig::recharge_preset()];

    let mut c = RunConfig::recharge_preset();
    c.nx = 7;
    c.ny = 13;
    c.element = ElementKind::P1;
    c.dt = 1.0 / 30.0;
    c.t_final = 0.7;
    c.adaptive = true;
    c.max_halvings = 6;
    c.snapshot_every = 0;
    c.output_dir = "runs/p1 case".into();
    c.scheme = SchemeConfig {
        strategy: Strategy::SplitMixed,
        l1_psi: 0.3,
        l1_theta: 1.0 / 3.0,
        tol: 2.5e-9,
        mixed_switch: 3,
        newton_fallback: true,
        newton_stall: 7,
        ..SchemeConfig::default()
    };
    c.constitutive = ConstitutiveSet {
        vg: VanGenuchtenParams::with_m(0.8, 3.0, 2.5, 0.6).unwrap(),
        capillary: CapillaryModel::VanGenuchten,
        tau: TauModel::Affine { a: 0.4, b: 0.25 },
        reaction: ReactionModel::Linear { rate: 0.05 },
        diffusion: Diffusion::Tensor([[1.0, 0.1], [0.1, 0.5]]),
        gamma: 0.0,
        theta_eps: 1e-4,
    };
    out.push(c);

    let mut c = RunConfig::recharge_preset();
    c.constitutive.capillary =
        CapillaryModel::Tabulated(PressureTable::new(vec![(0.05, 4.0), (0.4, 1.25), (1.0, 0.0)]).unwrap());
    c.constitutive.tau = TauModel::Constant(0.0);
    c.scheme.strategy = Strategy::SplitNewton;
    out.push(c);
    out
}

pub fn config_round_trip() -> Result<String, String> {
    let configs = sample_configs();
    for (k, cfg) in configs.iter().enumerate() {
        let text = render(cfg);
        let back = parse_config(&text).map_err(|e| format!("sample {k}: {e}\n{text}"))?;
        if &back != cfg {
            return Err(format!("sample {k} changed after render/parse:\n{text}"));
        }
    }
    Ok(format!("{} configurations survive render and parse", configs.len()))
}

pub fn vtk_structure() -> Result<String, String> {
    let mesh = build_grid(Domain2D::reservoir(), 20, 30).map_err(|e| e.to_string())?;
    let state = StateTriple::from_fn(&mesh, 0.0, |x, y| RechargeBenchmark.initial(x, y));
    let summary = validate_vtk(&vtk_snapshot(&mesh, &state)).map_err(|e| e.to_string())?;
    if summary.dimensions != [21, 31, 1] {
        return Err(format!("dimensions {:?}", summary.dimensions));
    }
    if summary.points.len() != mesh.num_nodes() {
        return Err(format!("{} points for {} nodes", summary.points.len(), mesh.num_nodes()));
    }
    for (k, name) in SCALAR_NAMES.iter().enumerate() {
        let values = summary.scalar(name).ok_or_else(|| format!("missing {name}"))?;
        if values.len() != mesh.num_nodes() {
            return Err(format!("{name}: {} values", values.len()));
        }
        for (node, (p, v)) in summary.points.iter().zip(values).enumerate() {
            if (p[0] - mesh.nodes[node][0]).abs() > 1e-12 || (p[1] - mesh.nodes[node][1]).abs() > 1e-12 {
                return Err(format!("point {node} at {p:?}"));
            }
            let expected = RechargeBenchmark.initial(p[0], p[1])[k];
            if (v - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(format!("{name} at ({}, {}) is {v}, expected {expected}", p[0], p[1]));
            }
        }
    }
    Ok(format!("{}x{} grid with {} fields", summary.dimensions[0], summary.dimensions[1], SCALAR_NAMES.len()))
}

#[test]
fn constitutive_derivatives_match_differences() {
    constitutive_derivatives().unwrap();
}

#[test]
fn element_matrices_match_closed_forms() {
    assembly_stencils().unwrap();
}

#[test]
fn stiffness_rows_sum_to_zero() {
    stiffness_row_sums().unwrap();
}

#[test]
fn lu_meets_backward_error_bound() {
    solver_residual_contract().unwrap();
}

#[test]
fn sample_configs_round_trip() {
    config_round_trip().unwrap();
}

#[test]
fn initial_snapshot_is_valid_vtk() {
    vtk_structure().unwrap();
}

mod round_trip {
    use super::*;
    use proptest::prelude::*;

    fn strategy() -> impl proptest::strategy::Strategy<Value = porflow::schemes::Strategy> {
        prop::sample::select(porflow::schemes::Strategy::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rendered_configs_parse_back(
            nx in 1usize..200,
            ny in 1usize..200,
            steps in 1usize..400,
            t_final in 0.5f64..10.0,
            s in strategy(),
            tol in 1e-12f64..1e-2,
            l2 in 0.0f64..2.0,
            switch in 0usize..20,
            n in 1.2f64..5.0,
            tau in 0.0f64..3.0,
            d in 0.0f64..5.0,
            rate in -1.0f64..1.0,
            p1 in any::<bool>(),
            fallback in any::<bool>(),
        ) {
            let mut cfg = RunConfig::recharge_preset();
            cfg.nx = nx;
            cfg.ny = ny;
            cfg.dt = t_final / steps as f64;
            cfg.t_final = t_final;
            cfg.element = if p1 { ElementKind::P1 } else { ElementKind::Q1 };
            cfg.scheme.strategy = s;
            cfg.scheme.tol = tol;
            cfg.scheme.l2 = l2 + 1e-3;
            cfg.scheme.mixed_switch = switch;
            cfg.scheme.newton_fallback = fallback;
            cfg.constitutive.vg = VanGenuchtenParams::new(1.0, n, 1.0).unwrap();
            cfg.constitutive.tau = TauModel::Constant(tau);
            cfg.constitutive.diffusion = Diffusion::Scalar(d);
            cfg.constitutive.reaction = if rate == 0.0 { ReactionModel::Zero } else { ReactionModel::Linear { rate } };
            prop_assume!(cfg.validate().is_ok());
            let text = render(&cfg);
            let back = parse_config(&text);
            prop_assert!(back.is_ok(), "{:?}\n{}", back, text);
            prop_assert_eq!(back.unwrap(), cfg);
        }
    }
}

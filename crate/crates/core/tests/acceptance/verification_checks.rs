use std::sync::Arc;

use porflow::constitutive::{ConstitutiveSet, TauModel};
use porflow::driver::{run_simulation, FailurePolicy, TimeGrid};
use porflow::fem::{ElementKind, FeSpace};
use porflow::mesh::{build_grid, classify_boundary, Domain2D};
use porflow::problem::ClosureProblem;
use porflow::schemes::{SchemeConfig, Solver, Strategy};
use porflow::verification::{
    hydrostatic_equilibrium, single_element_oracle, single_element_run, trajectory_deviation, ManufacturedCase,
    OracleSetup,
};

/// `K = sqrt(theta) (1 - (1 - theta^(1/m))^m)` with `K_s = 1`, and its
/// derivative, written out independently of the library.
fn mualem(theta: f64, m: f64) -> (f64, f64) {
    let w = 1.0 - theta.powf(1.0 / m);
    let k = theta.sqrt() * (1.0 - w.powf(m));
    let dk = (1.0 - w.powf(m)) / (2.0 * theta.sqrt()) + theta.sqrt() * w.powf(m - 1.0) * theta.powf(1.0 / m - 1.0);
    (k, dk)
}

/// Sources of the time-dependent case by hand: `psi < 0`, `Delta psi = 0`,
/// `Delta c = 0`, surfactant capillarity with `gamma = 0.1`, `tau = 1`,
/// `D = 1`, no reaction.
fn temporal_sources_by_hand(x: f64, y: f64, t: f64) -> [f64; 3] {
    let m = 0.5;
    let (s, ds) = ((2.0 * t).sin(), 2.0 * (2.0 * t).cos());
    let psi = -1.0 - 0.5 * x - 0.5 * y - 0.5 * s * (1.0 + x * y);
    let theta = 0.5 + 0.1 * x - 0.1 * y + 0.2 * s * x * y;
    let c = 1.0 + 0.5 * x * y + 0.5 * s * (x + y);
    let (psi_x, psi_y) = (-0.5 - 0.5 * s * y, -0.5 - 0.5 * s * x);
    let (theta_x, theta_y) = (0.1 + 0.2 * s * y, -0.1 + 0.2 * s * x);
    let theta_t = 0.2 * ds * x * y;
    let (c_x, c_y) = (0.5 * y + 0.5 * s, 0.5 * x + 0.5 * s);
    let c_t = 0.5 * ds * (x + y);

    let (k, dk) = mualem(theta, m);
    let u = [-k * psi_x, -k * (psi_y + 1.0)];
    let div_u = -(dk * theta_x * psi_x + dk * theta_y * (psi_y + 1.0));
    let s1 = theta_t + div_u;
    let s_psi = psi + (1.0 - theta).powf(2.5) + 0.1 * c - theta_t;
    let s2 = theta_t * c + theta * c_t + div_u * c + u[0] * c_x + u[1] * c_y;
    [s1, s_psi, s2]
}

#[test]
fn temporal_sources_match_hand_derivation() {
    let case = ManufacturedCase::temporal();
    let mut worst = 0.0f64;
    for &x in &[0.0, 0.2, 0.55, 0.9, 1.0] {
        for &y in &[0.0, 0.35, 0.7, 1.0] {
            for &t in &[0.0, 0.3, 0.8, 1.0] {
                let got = case.sources(x, y, t);
                let want = temporal_sources_by_hand(x, y, t);
                for k in 0..3 {
                    worst = worst.max((got[k] - want[k]).abs() / (1.0 + want[k].abs()));
                }
            }
        }
    }
    assert!(worst < 1e-6, "largest mismatch {worst:e}");
}

const H: f64 = 1e-4;

fn dc(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

/// Second-order nested central differences of the closed forms.
fn sources_by_differences(case: &ManufacturedCase, x: f64, y: f64, t: f64) -> [f64; 3] {
    let set = &case.set;
    let psi = |x: f64, y: f64| (case.psi)(x, y, t);
    let theta = |x: f64, y: f64, t: f64| (case.theta)(x, y, t);
    let conc = |x: f64, y: f64, t: f64| (case.conc)(x, y, t);
    let flux = |x: f64, y: f64| {
        let k = set.conductivity(theta(x, y, t), psi(x, y)).unwrap();
        [-k * dc(|a| psi(a, y), x), -k * (dc(|b| psi(x, b), y) + 1.0)]
    };
    let theta_t = dc(|s| theta(x, y, s), t);
    let div_u = dc(|a| flux(a, y)[0], x) + dc(|b| flux(x, b)[1], y);
    let p = set.capillary_pressure(theta(x, y, t), conc(x, y, t)).unwrap().0;
    let d = set.diffusion.tensor();
    let j = |x: f64, y: f64| {
        let u = flux(x, y);
        let c = conc(x, y, t);
        let (cx, cy) = (dc(|a| conc(a, y, t), x), dc(|b| conc(x, b, t), y));
        [d[0][0] * cx + d[0][1] * cy - u[0] * c, d[1][0] * cx + d[1][1] * cy - u[1] * c]
    };
    let div_j = dc(|a| j(a, y)[0], x) + dc(|b| j(x, b)[1], y);
    let tc_t = dc(|s| theta(x, y, s) * conc(x, y, s), t);
    [
        theta_t + div_u,
        psi(x, y) + p - set.tau(theta(x, y, t)).0 * theta_t,
        tc_t - div_j + set.reaction(conc(x, y, t)).0,
    ]
}

#[test]
fn spatial_sources_match_nested_differences() {
    let case = ManufacturedCase::spatial();
    let mut worst = 0.0f64;
    for &x in &[0.1, 0.3, 0.5, 0.85] {
        for &y in &[0.15, 0.5, 0.9] {
            for &t in &[0.0, 0.01, 0.025] {
                let got = case.sources(x, y, t);
                let want = sources_by_differences(&case, x, y, t);
                for k in 0..3 {
                    worst = worst.max((got[k] - want[k]).abs() / (1.0 + want[k].abs()));
                }
            }
        }
    }
    assert!(worst < 1e-6, "largest mismatch {worst:e}");
}

#[test]
fn hydrostatic_state_is_stationary_for_every_strategy() {
    let set = ConstitutiveSet::default();
    let problem = hydrostatic_equilibrium(&set, -0.5, 0.45);
    let dom = Domain2D::unit_square();
    let mesh = Arc::new(build_grid(dom, 5, 5).unwrap());
    let tags = classify_boundary(&mesh, &dom);
    let space = Arc::new(FeSpace::new(mesh, ElementKind::Q1));
    for strategy in Strategy::ALL {
        let cfg = SchemeConfig {
            strategy,
            ..SchemeConfig::default()
        };
        let mut solver = Solver::new(space.clone(), set.clone(), cfg, tags.clone());
        let grid = TimeGrid::with_steps(0.4, 4).unwrap();
        let mut initial = None;
        let report = run_simulation(&mut solver, &problem, grid, FailurePolicy::Abort, |n, st| {
            if n == 0 {
                initial = Some(st.clone());
            }
        });
        assert!(report.converged, "{strategy}: {report}");
        assert!(report.records.iter().all(|r| r.iterations == 1), "{strategy}: {report}");
        let initial = initial.expect("observer saw the initial state");
        for (a, b) in report.final_state.fields().iter().zip(initial.fields()) {
            let d = a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(d < 1e-10, "{strategy}: drift {d:e}");
        }
    }
}

/// Raising the boundary head around a square in equilibrium: the larger
/// `tau`, the slower the water content follows.
#[test]
fn dynamic_capillarity_delays_water_content() {
    let dom = Domain2D::unit_square();
    let mesh = Arc::new(build_grid(dom, 4, 4).unwrap());
    let tags = classify_boundary(&mesh, &dom);
    let space = Arc::new(FeSpace::new(mesh, ElementKind::Q1));
    let mut response = Vec::new();
    for tau in [0.0, 1.0, 10.0] {
        let set = ConstitutiveSet {
            tau: TauModel::Constant(tau),
            ..ConstitutiveSet::default()
        };
        let theta0 = 0.4;
        let psi0 = -set.capillary_pressure(theta0, 0.0).unwrap().0;
        let problem = ClosureProblem {
            initial: Box::new(move |_, _| [psi0, theta0, 0.0]),
            psi_bc: Some(Box::new(|_, _, _| -0.05)),
            conc_bc: Some(Box::new(|_, _, _| 0.0)),
            constrained: |_| true,
        };
        let cfg = SchemeConfig {
            strategy: Strategy::MonNewton,
            tol: 1e-10,
            max_iter: 500,
            ..SchemeConfig::default()
        };
        let mut solver = Solver::new(space.clone(), set, cfg, tags.clone());
        let grid = TimeGrid::with_steps(0.2, 2).unwrap();
        let report = run_simulation(&mut solver, &problem, grid, FailurePolicy::Abort, |_, _| {});
        assert!(report.converged, "tau = {tau}: {report}");
        let gain: f64 = report.final_state.theta.values.iter().map(|t| t - theta0).sum();
        response.push(gain);
    }
    assert!(response[0] > response[1] && response[1] > response[2] && response[2] > 0.0, "{response:?}");
}

#[test]
fn mixed_strategies_match_single_element_oracle() {
    let setup = OracleSetup::uniform_start();
    let oracle = single_element_oracle(&setup).unwrap();
    for strategy in [Strategy::MonMixed, Strategy::SplitMixed] {
        let cfg = SchemeConfig {
            strategy,
            tol: 1e-12,
            max_iter: 500,
            ..SchemeConfig::default()
        };
        let (report, states) = single_element_run(&setup, cfg).unwrap();
        assert!(report.converged, "{strategy}: {report}");
        let dev = trajectory_deviation(&oracle.states, &states);
        assert!(dev < 1e-8, "{strategy}: deviation {dev:e}");
    }
}

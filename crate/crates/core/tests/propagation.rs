//! Cross-checks between independent routes to the same quantity.

use std::sync::Arc;

use anharm_core::classical::{beta_of_t, integrate_forced, DrivenOscillator, TrajectoryOptions};
use anharm_core::flow::{integrate_f, HessianConvention};
use anharm_core::gaussian::{coherent_state, evolve_gaussian};
use anharm_core::ode::{solve_dense, Dop853};
use anharm_core::quantum::{init_grid, sample_coherent, GridSafety, Propagator, SplittingScheme, WaveFunction};
use anharm_core::{ModelParams, PhasePoint};

fn canonical(params: &ModelParams, t_max: f64) -> anharm_core::classical::ClassicalTrajectory {
    let opts = TrajectoryOptions {
        tol: 1e-12,
        dense: true,
        sample_stride: 1,
        forcing: true,
    };
    integrate_forced(params, (1.0, 1.0), t_max, opts).unwrap()
}

#[test]
fn closed_form_gaussian_matches_grid_at_larger_hbar() {
    let hbar = 1e-2;
    let params = ModelParams::new(2, 1, hbar).unwrap();
    let traj = canonical(&params, 4.0);
    let path = integrate_f(&traj, 4.0, 1e-12, HessianConvention::Exact).unwrap();
    let grid = Arc::new(init_grid(&params, &traj, 4.0, &GridSafety::default()).unwrap());
    let z0 = PhasePoint::on_first_axis(1, 1.0, 1.0);
    let g0 = coherent_state(&z0, hbar).unwrap();
    let mut psi = sample_coherent(&z0, hbar, grid.clone()).unwrap();
    let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Yoshida4).unwrap();
    for t in [0.5, 1.0, 2.0, 3.0, 4.0] {
        let steps = ((t - psi.t) / 2e-3).round() as usize;
        prop.advance_quadratic(&mut psi, t, steps, &traj, HessianConvention::Exact)
            .unwrap();
        let g = evolve_gaussian(&g0, &traj, &path, t).unwrap();
        let closed = WaveFunction::from_fn(grid.clone(), t, |x| g.eval(&[x]));
        let dist = closed.sub(&psi).norm();
        assert!(dist < 1e-6, "t = {t}: distance {dist}");
        assert!((g.norm_sq() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn flow_matrix_is_the_derivative_of_the_driven_orbit() {
    // With the forcing frozen as a function of time, F_t is the Jacobian of
    // the time-t map of y'' = -W'(y) + beta(t).
    let params = ModelParams::new(2, 1, 1e-3).unwrap();
    let t_end = 6.0;
    let traj = canonical(&params, t_end + 0.5);
    let path = integrate_f(&traj, t_end, 1e-12, HessianConvention::Exact).unwrap();
    let beta = |t: f64| beta_of_t(&traj, t).unwrap();
    let sys = DrivenOscillator {
        params,
        drive: &beta,
    };
    let eps = 1e-5;
    let flow = |y0: [f64; 2]| {
        let cfg = Dop853 {
            // The drive is only piecewise smooth, so cap the step to keep
            // kicks resolved.
            h_max: 1e-2,
            ..Dop853::with_tol(1e-13)
        };
        solve_dense(&sys, cfg, 0.0, &y0, t_end).unwrap().0
    };
    let f = path.at(t_end).unwrap();
    for (j, dir) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
        let plus = flow([1.0 + eps * dir[0], 1.0 + eps * dir[1]]);
        let minus = flow([1.0 - eps * dir[0], 1.0 - eps * dir[1]]);
        for i in 0..2 {
            let fd = (plus[i] - minus[i]) / (2.0 * eps);
            let want = f.get(i, j);
            assert!((fd - want).abs() < 1e-5 * (1.0 + want.abs()), "F[{i}{j}] = {want}, fd {fd}");
        }
    }
}

#[test]
fn driven_orbit_reproduces_the_kicked_orbit() {
    let params = ModelParams::new(3, 1, 1e-3).unwrap();
    let traj = canonical(&params, 8.0);
    let beta = |t: f64| beta_of_t(&traj, t).unwrap();
    let sys = DrivenOscillator {
        params,
        drive: &beta,
    };
    let cfg = Dop853 {
        h_max: 1e-2,
        ..Dop853::with_tol(1e-12)
    };
    let end = solve_dense(&sys, cfg, 0.0, &[1.0, 1.0], 7.5).unwrap().0;
    let (y, v) = traj.state_at(7.5).unwrap();
    assert!((end[0] - y).abs() < 1e-7 && (end[1] - v).abs() < 1e-7);
}

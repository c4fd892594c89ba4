//! Acceptance gate. Every criterion prints one PASS/FAIL line; the process
//! exits nonzero if any fails. Experiments run at their preset settings
//! against the frozen l = 2 constants.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anharm_core::classical::{integrate_forced, TrajectoryOptions};
use anharm_core::gaussian::{coherent_state, expectation_observable};
use anharm_core::linalg::Mat;
use anharm_core::model::{cutoff_g1, cutoff_g2, smooth_step};
use anharm_core::quadrature::QuadratureRule;
use anharm_core::quantum::{grid_for_energy, sample_coherent, Drive, GridSafety, Propagator, SplittingScheme};
use anharm_core::{Complex64, ModelParams, PhasePoint};
use anharm_lab::config::{Experiment, RunConfig};
use anharm_lab::constants::{self, Constants};
use anharm_lab::experiments::{self, Report};

struct Gate {
    failures: usize,
}

impl Gate {
    fn line(&mut self, name: &str, passed: bool, detail: String) {
        if !passed {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    }

    /// One criterion backed by named report checks; every one must pass.
    fn from_report(&mut self, name: &str, report: &Report, checks: &[&str]) {
        let mut passed = true;
        let mut parts = Vec::new();
        for c in checks {
            match report.check(c) {
                Some(c) => {
                    passed &= c.passed;
                    parts.push(format!("{} = {:.4e} ({})", c.name, c.value, c.requirement));
                }
                None => {
                    passed = false;
                    parts.push(format!("{c} missing"));
                }
            }
        }
        self.line(name, passed, parts.join("; "));
    }

    fn runtime(&mut self, name: &str, seconds: f64, budget: f64) {
        self.line(
            &format!("{name} runtime"),
            seconds < budget,
            format!("{seconds:.1} s, budget {budget} s"),
        );
    }

    fn errored(&mut self, name: &str, err: impl std::fmt::Display) {
        self.line(name, false, format!("error: {err}"));
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let clock = Instant::now();
    let v = f();
    (v, clock.elapsed().as_secs_f64())
}

fn classical(gate: &mut Gate, frozen: &Constants) {
    let cfg = RunConfig::preset(Experiment::ClassicalGrowth);
    let (rep, secs) = timed(|| experiments::compute(&cfg, Some(frozen)));
    match rep {
        Ok(rep) => {
            gate.from_report(
                "classical log^2 growth l=2",
                &rep,
                &["energy-band-spread", "energy-nondecreasing", "energy-band-frozen"],
            );
            gate.runtime("classical log^2 growth l=2", secs, 120.0);
            gate.from_report(
                "increment brackets",
                &rep,
                &["increment-upper-violations", "increment-lower-violation-fraction"],
            );
            gate.from_report("energy ratio bound", &rep, &["energy-ratio-violations"]);
            gate.from_report(
                "passage-time law",
                &rep,
                &["passage-gap-violations", "passage-law-spread"],
            );
        }
        Err(e) => gate.errored("classical l=2", e),
    }

    let mut cfg3 = RunConfig::preset(Experiment::ClassicalGrowth);
    cfg3.l = 3;
    cfg3.t_max = 1e4;
    match experiments::compute(&cfg3, Some(frozen)) {
        Ok(rep) => gate.from_report(
            "classical log^2 growth l=3",
            &rep,
            &["energy-band-spread", "energy-nondecreasing", "energy-ratio-violations"],
        ),
        Err(e) => gate.errored("classical l=3", e),
    }
}

fn flow(gate: &mut Gate, frozen: &Constants) {
    let cfg = RunConfig::preset(Experiment::FlowNorm);
    match experiments::compute(&cfg, Some(frozen)) {
        Ok(rep) => {
            gate.from_report("symplecticity", &rep, &["det-defect"]);
            gate.from_report("flow bound", &rep, &["flow-bound-ratio", "supF-decreases"]);
        }
        Err(e) => gate.errored("flow-norm", e),
    }
}

fn agreement(gate: &mut Gate) {
    let (rows, secs) = timed(|| experiments::gaussian_grid_agreement(2, 1e-3, 3.0));
    match rows {
        Ok(rows) => {
            let worst = rows.iter().map(|r| r.l2_distance).fold(0.0f64, f64::max);
            gate.line(
                "gaussian/grid agreement",
                worst <= 1e-6,
                format!("max L2 distance {worst:.3e} over {} checkpoints, required <= 1e-6", rows.len()),
            );
            gate.runtime("gaussian/grid agreement", secs, 60.0);
        }
        Err(e) => gate.errored("gaussian/grid agreement", e),
    }
}

fn semiclassical(gate: &mut Gate, frozen: &Constants) {
    let cfg = RunConfig::preset(Experiment::SemiclassicalError);
    let (rep, secs) = timed(|| experiments::compute(&cfg, Some(frozen)));
    match rep {
        Ok(rep) => {
            gate.from_report("semiclassical error slope", &rep, &["slope-r0", "slope-r1"]);
            gate.from_report(
                "semiclassical error bound",
                &rep,
                &["error-bound-ratio-r0", "error-bound-ratio-r1"],
            );
            gate.runtime("semiclassical error", secs, 900.0);
        }
        Err(e) => gate.errored("semiclassical error", e),
    }
}

fn sobolev(gate: &mut Gate, frozen: &Constants) {
    let cfg = RunConfig::preset(Experiment::SobolevGrowth);
    let (rep, secs) = timed(|| experiments::compute(&cfg, Some(frozen)));
    match rep {
        Ok(rep) => {
            let tag = "hbar0.001";
            gate.from_report(
                "sobolev lower bound",
                &rep,
                &[&format!("lower-bound-{tag}-r1"), &format!("lower-bound-{tag}-r2")],
            );
            gate.from_report(
                "sobolev trend",
                &rep,
                &[&format!("trend-decreases-{tag}-r1"), &format!("trend-decreases-{tag}-r2")],
            );
            gate.from_report(
                "sobolev upper bound",
                &rep,
                &[&format!("upper-bound-{tag}-r1"), &format!("upper-bound-{tag}-r2")],
            );
            gate.runtime("sobolev growth", secs, 1200.0);
        }
        Err(e) => gate.errored("sobolev growth", e),
    }
}

// ------------------------------------------------------------ property suites

fn unitarity_and_reversibility(gate: &mut Gate) -> anharm_core::Result<()> {
    let hbar = 1e-2;
    let params = ModelParams::new(2, 1, hbar)?;
    let opts = TrajectoryOptions {
        tol: 1e-12,
        dense: true,
        sample_stride: 1,
        forcing: true,
    };
    let traj = integrate_forced(&params, (1.0, 1.0), 3.5, opts)?;
    let grid = Arc::new(grid_for_energy(&params, 4.0, &GridSafety::default())?);
    let psi0 = sample_coherent(&PhasePoint::on_first_axis(1, 1.0, 1.0), hbar, grid.clone())?;
    let dt = 3e-3;
    for scheme in [SplittingScheme::Strang, SplittingScheme::Yoshida4] {
        let mut prop = Propagator::new(grid.clone(), &params, scheme)?;
        let mut psi = psi0.clone();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            // The kick window is crossed in this interval, so the forcing is live.
            prop.step_full(&mut psi, dt, Drive::Classical(&traj))?;
            worst = worst.max((psi.norm_sq() - 1.0).abs());
        }
        gate.line(
            &format!("unitarity {}", scheme.name()),
            worst <= 1e-10,
            format!("max |norm^2 - 1| over 1e3 kicked steps {worst:.2e}, required <= 1e-10"),
        );
    }

    let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang)?;
    let mut psi = psi0.clone();
    for _ in 0..1000 {
        prop.step_full(&mut psi, 1e-3, Drive::Free)?;
    }
    for _ in 0..1000 {
        prop.step_full(&mut psi, -1e-3, Drive::Free)?;
    }
    let back = psi.sub(&psi0).norm();
    gate.line(
        "time reversibility",
        back <= 1e-9,
        format!("L2 distance after 1e3 steps forward and back {back:.2e}, required <= 1e-9"),
    );

    let run = |steps: usize| -> anharm_core::Result<_> {
        let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang)?;
        let mut psi = sample_coherent(&PhasePoint::on_first_axis(1, 0.5, 1.0), hbar, grid.clone())?;
        prop.advance_full(&mut psi, 1.0, steps, Drive::Free)?;
        Ok(psi)
    };
    let (a, b, c) = (run(100)?, run(200)?, run(400)?);
    let ratio = a.sub(&b).norm() / b.sub(&c).norm();
    gate.line(
        "dt-halving convergence",
        (3.5..=4.5).contains(&ratio),
        format!("self-convergence ratio {ratio:.3}, required in [3.5, 4.5]"),
    );
    Ok(())
}

fn double_factorial(k: i64) -> f64 {
    if k <= 0 {
        1.0
    } else {
        k as f64 * double_factorial(k - 2)
    }
}

fn quadrature(gate: &mut Gate) -> anharm_core::Result<()> {
    let rule = QuadratureRule::gauss_hermite(experiments::EXPECTATION_RULE_ORDER)?;
    let mut worst: f64 = 0.0;
    // Exact through degree 47. Odd moments vanish; their rounding noise is
    // measured against the size of the neighbouring even moment.
    for k in 0..=23i32 {
        let exact = double_factorial(2 * k as i64 - 1) * PI.sqrt() / 2f64.powi(k);
        let got = rule.integrate(|x| x.powi(2 * k));
        worst = worst.max((got - exact).abs() / exact);
        let odd = rule.integrate(|x| x.powi(2 * k + 1));
        worst = worst.max(odd.abs() / exact);
    }
    gate.line(
        "quadrature exactness",
        worst <= 1e-12,
        format!("max relative error on monomials {worst:.2e}, required <= 1e-12"),
    );

    // Coherent state at z: Gaussian in (q, p) with covariance hbar/2.
    let hbar = 0.05;
    let z = PhasePoint::on_first_axis(1, 0.3, -0.6);
    let v = hbar / 2.0;
    let id = Mat::identity(2);
    let m = |a: &dyn Fn(&[f64], &[f64]) -> f64| expectation_observable(a, &z, &id, hbar, &rule);
    let cases: [(f64, f64); 5] = [
        (m(&|q, _| q[0]), 0.3),
        (m(&|_, p| p[0] * p[0]), 0.36 + v),
        (m(&|q, _| (q[0] - 0.3).powi(4)), 3.0 * v * v),
        (m(&|q, p| (q[0] - 0.3).powi(2) * (p[0] + 0.6).powi(2)), v * v),
        (m(&|_, p| (p[0] + 0.6).powi(6)), 15.0 * v * v * v),
    ];
    let worst = cases
        .iter()
        .map(|(got, want)| (got - want).abs() / want.abs())
        .fold(0.0f64, f64::max);
    gate.line(
        "gauss-hermite moments",
        worst <= 1e-12,
        format!("max relative error vs closed-form Gaussian moments {worst:.2e}, required <= 1e-12"),
    );
    Ok(())
}

fn golden_values(gate: &mut Gate) -> anharm_core::Result<()> {
    // exp(i p (x - q/2) / hbar) (pi hbar)^(-1/4) exp(-(x - q)^2 / (2 hbar))
    let hbar = 0.1;
    let (q, p) = (0.7, -0.4);
    let g = coherent_state(&PhasePoint::on_first_axis(1, q, p), hbar)?;
    let mut worst: f64 = 0.0;
    for x in [-0.3, 0.2, 0.7, 1.1, 1.6] {
        let amp = (PI * hbar).powf(-0.25) * (-(x - q) * (x - q) / (2.0 * hbar)).exp();
        let want = Complex64::from_polar(amp, p * (x - q / 2.0) / hbar);
        worst = worst.max((g.eval(&[x]) - want).norm());
    }
    // Frozen sample of the same state.
    let golden = Complex64::new(0.902_576_915_357_857_6, -0.617_486_090_155_814_7);
    let at = g.eval(&[0.5]);
    let drift = (at - golden).norm();
    gate.line(
        "coherent-state phase convention",
        worst <= 1e-14 && drift <= 1e-14,
        format!("max deviation from closed form {worst:.2e}, frozen sample drift {drift:.2e}"),
    );
    Ok(())
}

fn fd(f: &dyn Fn(f64) -> f64, x: f64, k: usize, h: f64) -> f64 {
    // k-th central difference
    let mut acc = 0.0;
    let mut binom = 1.0;
    for i in 0..=k {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(x + (k as f64 / 2.0 - i as f64) * h);
        binom = binom * (k - i) as f64 / (i + 1) as f64;
    }
    acc / h.powi(k as i32)
}

fn cutoffs(gate: &mut Gate) -> anharm_core::Result<()> {
    let params = ModelParams::new(2, 1, 0.5)?;
    let g1 = |y: f64| cutoff_g1(y, &params);
    let g2 = |y: f64| cutoff_g2(y, &params);
    // Layer profiles against the plain step function.
    let mut form: f64 = 0.0;
    for i in 0..=400 {
        let y = -2.0 + 4.0 * i as f64 / 400.0;
        form = form.max((g1(y) - (1.0 - smooth_step(2.0 * y.abs() - 1.0))).abs());
        form = form.max((g2(y) - smooth_step(y)).abs());
    }
    // Derivatives up to third order: stable under halving the stencil and
    // free of jumps between neighbouring points. A jump in the (k-1)-th
    // derivative would make the k-th one spike like 1/h.
    let mut smooth = true;
    for (f, lo, hi) in [(&g1 as &dyn Fn(f64) -> f64, 0.4, 1.1), (&g2, -0.1, 1.1)] {
        for k in 1..=3 {
            let h = 2e-3;
            let samples: Vec<(f64, f64)> = (0..=500)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / 500.0;
                    (fd(f, x, k, h), fd(f, x, k, h / 2.0))
                })
                .collect();
            let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.1.abs()));
            smooth &= peak < 1e4;
            for w in samples.windows(2) {
                smooth &= (w[1].0 - w[1].1).abs() <= 0.2 * (1.0 + w[1].1.abs());
                smooth &= (w[1].0 - w[0].0).abs() <= 0.1 * peak;
            }
        }
    }
    gate.line(
        "cutoff smoothness stencils",
        form <= 1e-14 && smooth,
        format!("max deviation from layer profile {form:.1e}, derivative stencils consistent: {smooth}"),
    );
    Ok(())
}

fn determinism(gate: &mut Gate, frozen: &Constants) {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return gate.errored("determinism", e),
    };
    let mut cfg = RunConfig::preset(Experiment::FlowNorm);
    cfg.output_dir = tmp.path().to_path_buf();
    let mut cls = RunConfig::preset(Experiment::ClassicalGrowth);
    cls.t_max = 2e3;
    cls.output_dir = tmp.path().to_path_buf();
    let mut identical = true;
    let mut compared = 0;
    for c in [&cfg, &cls] {
        let a = anharm_lab::run_with(c, Some(frozen));
        let b = anharm_lab::run_with(c, Some(frozen));
        let (a, b) = match (a, b) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return gate.errored("determinism", e),
        };
        for rel in &a.manifest.tables {
            let x = std::fs::read(a.dir.join(rel));
            let y = std::fs::read(b.dir.join(rel));
            identical &= matches!((x, y), (Ok(x), Ok(y)) if x == y);
            compared += 1;
        }
    }
    gate.line(
        "determinism",
        identical && compared > 0,
        format!("{compared} result files byte-identical across reruns: {identical}"),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    let Some(frozen) = constants::frozen(2) else {
        println!("FAIL frozen constants: none for l = 2");
        return ExitCode::FAILURE;
    };

    let (_, secs) = timed(|| {
        for (name, res) in [
            ("unitarity", unitarity_and_reversibility(&mut gate)),
            ("quadrature", quadrature(&mut gate)),
            ("golden values", golden_values(&mut gate)),
            ("cutoffs", cutoffs(&mut gate)),
        ] {
            if let Err(e) = res {
                gate.errored(name, e);
            }
        }
        determinism(&mut gate, &frozen);
    });
    gate.runtime("property suites", secs, 60.0);

    classical(&mut gate, &frozen);
    flow(&mut gate, &frozen);
    agreement(&mut gate);
    semiclassical(&mut gate, &frozen);
    sobolev(&mut gate, &frozen);

    if gate.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}

//! The five experiments. Each one computes everything in memory first and
//! returns a [`Report`]; nothing touches the disk until [`crate::run`] writes
//! the finished report, so a failing run never leaves partial output.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use anharm_core::classical::{
    energy_ledger, growth_report, integrate_forced, period_oracle, ClassicalTrajectory, PeriodLaw, TrajectoryOptions,
};
use anharm_core::fit::log_log_slope;
use anharm_core::flow::{
    ehrenfest_horizon, flow_bound_exponent, flow_log_power, integrate_f, sup_norm_f, FlowMatrixPath, HessianConvention,
};
use anharm_core::gaussian::GaussianPropagator;
use anharm_core::model::{forcing_f, potential_w};
use anharm_core::quadrature::QuadratureRule;
use anharm_core::quantum::{
    init_grid, run_comparison, sample_coherent, ComparisonConfig, Drive, GridSafety, Propagator, SplittingScheme,
    WaveFunction,
};
use anharm_core::{Error as CoreError, ModelParams, PhasePoint};
use rayon::prelude::*;

use crate::config::{Experiment, RunConfig};
use crate::constants::{sobolev_window_end, Constants, LOWER_SLACK, UPPER_SLACK};
use crate::error::{LabError, LabResult};
use crate::manifest::Check;
use crate::tables::{
    to_csv_string, AgreementRow, AmplitudeRow, BracketRow, CheckpointHeader, ConstantRow, ErrorRow, ExpectationRow,
    FlowNormRow, FlowRow, GrowthRow, PassageRow, Row, SobolevRow, TrajectoryRow,
};

/// Order of the Gauss-Hermite rule used for phase-space expectations.
pub const EXPECTATION_RULE_ORDER: usize = 24;
/// Values of hbar used to turn Ehrenfest horizons into the window constant.
pub const WINDOW_HBARS: [f64; 5] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];

/// The finished, not yet persisted, outcome of one experiment.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Values fitted from this run's data.
    pub fitted: BTreeMap<String, f64>,
    /// Constants the checks were evaluated with.
    pub used: BTreeMap<String, f64>,
    pub constants_source: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Relative path and contents of every file to write.
    pub files: Vec<(String, String)>,
    /// Set by calibration only.
    pub calibrated: Option<Constants>,
}

impl Report {
    fn table<R: Row>(&mut self, path: impl Into<String>, rows: &[R]) -> LabResult<()> {
        self.files.push((path.into(), to_csv_string(rows)?));
        Ok(())
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn file(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|(p, _)| p == path).map(|(_, s)| s.as_str())
    }

    /// Fold a stage report into this one under `prefix/`.
    fn absorb(&mut self, prefix: &str, stage: Report) {
        for (k, v) in stage.fitted {
            self.fitted.insert(format!("{prefix}/{k}"), v);
        }
        for mut c in stage.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.checks.push(c);
        }
        for n in stage.notes {
            self.notes.push(format!("{prefix}: {n}"));
        }
        for (p, body) in stage.files {
            self.files.push((format!("stages/{prefix}/{p}"), body));
        }
    }
}

pub fn compute(cfg: &RunConfig, frozen: Option<&Constants>) -> LabResult<Report> {
    cfg.validate()?;
    let frozen = frozen.filter(|c| c.l == cfg.l);
    match cfg.experiment {
        Experiment::ClassicalGrowth => classical_growth(cfg, frozen),
        Experiment::FlowNorm => flow_norm(cfg, frozen),
        Experiment::SemiclassicalError => semiclassical_error(cfg, frozen),
        Experiment::SobolevGrowth => sobolev_growth(cfg, frozen),
        Experiment::Calibrate => calibrate(cfg),
    }
}

fn model(cfg: &RunConfig, hbar: f64) -> LabResult<ModelParams> {
    Ok(ModelParams::new(cfg.l, cfg.d, hbar)?)
}

fn canonical_orbit(params: &ModelParams, t_max: f64, tol: f64, dense: bool) -> LabResult<ClassicalTrajectory> {
    let opts = TrajectoryOptions {
        tol,
        dense,
        sample_stride: 1,
        forcing: true,
    };
    Ok(integrate_forced(params, (1.0, 1.0), t_max, opts)?)
}

/// `interval, 2 interval, ...` up to `t_end`, always ending exactly at `t_end`.
pub fn checkpoint_times(t_end: f64, interval: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1u64;
    loop {
        let t = k as f64 * interval;
        if t > t_end * (1.0 - 1e-12) {
            break;
        }
        out.push(t);
        k += 1;
    }
    out.push(t_end);
    out
}

fn source(frozen: Option<&Constants>) -> String {
    match frozen {
        Some(c) => format!("frozen reference constants for l = {}", c.l),
        None => "fitted in this run (no frozen constants for this l)".to_owned(),
    }
}

fn energy(q: &[f64], p: &[f64], params: &ModelParams) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>() + potential_w(q, params)
}

fn log2(t: f64) -> f64 {
    (2.0 + t).ln().powi(2)
}

// ---------------------------------------------------------------- classical

pub fn classical_growth(cfg: &RunConfig, frozen: Option<&Constants>) -> LabResult<Report> {
    let params = model(cfg, cfg.hbar_list[0])?;
    let traj = canonical_orbit(&params, cfg.t_max, cfg.tol, false)?;
    let ledger = energy_ledger(&traj)?;
    let window = (cfg.growth_window_start, cfg.t_max);
    let rep = growth_report(&ledger, &traj, window)?;
    let law = PeriodLaw::new(&params)?;

    let mut out = Report {
        constants_source: source(frozen),
        ..Report::default()
    };
    out.fitted.insert("C1".into(), rep.energy_band.0);
    out.fitted.insert("C2".into(), rep.energy_band.1);
    out.fitted.insert("c".into(), rep.increment_floor);
    out.fitted.insert("c_K".into(), rep.increment_floor_k);
    out.fitted.insert("passage_band_lo".into(), rep.passage_band.0);
    out.fitted.insert("passage_band_hi".into(), rep.passage_band.1);
    out.fitted.insert("plateaus".into(), ledger.len() as f64);
    out.fitted.insert("max_plateau_drift".into(), ledger.max_plateau_drift);
    let c_used = frozen.map_or(LOWER_SLACK * rep.increment_floor, |f| f.c_increment);
    out.used.insert("c".into(), c_used);

    // Log-spaced rows keep the table small over five decades.
    let step = 10f64.powf(1.0 / 200.0);
    let mut growth = Vec::new();
    let mut next = 0.0;
    for s in &traj.samples {
        if s.t >= next {
            growth.push(GrowthRow {
                t: s.t,
                energy: s.energy,
                log2_ratio: s.energy / log2(s.t),
            });
            next = if s.t > 0.0 { s.t * step } else { 1e-2 };
        }
    }
    if let Some(last) = traj.samples.last() {
        if growth.last().is_some_and(|g| g.t < last.t) {
            growth.push(GrowthRow {
                t: last.t,
                energy: last.energy,
                log2_ratio: last.energy / log2(last.t),
            });
        }
    }

    let mut trajectory: Vec<TrajectoryRow> = traj
        .samples
        .iter()
        .step_by(cfg.trajectory_stride)
        .map(|s| TrajectoryRow {
            t: s.t,
            y: s.y,
            ydot: s.ydot,
            energy: s.energy,
            beta: forcing_f(s.y, s.ydot, &params),
        })
        .collect();
    if let Some(s) = traj.samples.last() {
        if trajectory.last().is_some_and(|r| r.t < s.t) {
            trajectory.push(TrajectoryRow {
                t: s.t,
                y: s.y,
                ydot: s.ydot,
                energy: s.energy,
                beta: forcing_f(s.y, s.ydot, &params),
            });
        }
    }

    let passages: Vec<PassageRow> = traj
        .passages
        .iter()
        .map(|ev| PassageRow {
            n: ev.n,
            t: ev.t,
            sign: ev.boundary.sign(),
            e_before: ev.e_before,
            e_after: ev.e_after,
        })
        .collect();

    let e = &ledger.e_n;
    let brackets: Vec<BracketRow> = (0..e.len() - 1)
        .map(|n| BracketRow {
            n,
            e_n: e[n],
            e_next: e[n + 1],
            increment: rep.increments[n],
            upper_bound: rep.upper_bounds[n],
            lower_bound: c_used * (-(2.0 * e[n + 1]).sqrt()).exp(),
            ratio: e[n + 1] / e[n],
            gap: ledger.t_2n[n + 1] - ledger.t_2n[n],
            gap_lo: 0.5 * law.period(e[n + 1]),
            gap_hi: law.period(e[n]),
        })
        .collect();

    let pairs = brackets.len() as f64;
    let lower_v = rep.lower_increment_violations(&ledger, c_used) as f64;
    out.checks.push(Check::at_most("energy-band-spread", rep.energy_spread(), 10.0));
    out.checks.push(Check::new(
        "energy-nondecreasing",
        rep.strictly_increasing,
        if rep.strictly_increasing { 1.0 } else { 0.0 },
        "every plateau energy exceeds the previous one",
    ));
    out.checks.push(Check::at_most(
        "increment-upper-violations",
        rep.upper_increment_violations as f64,
        0.0,
    ));
    out.checks.push(Check::at_most("increment-lower-violation-fraction", lower_v / pairs, 0.01));
    out.checks.push(Check::at_most("energy-ratio-violations", rep.ratio_violations as f64, 0.0));
    out.checks.push(Check::at_most("passage-gap-violations", rep.gap_violations as f64, 0.0));
    out.checks.push(Check::at_most("passage-law-spread", rep.passage_spread(), 5.0));
    if let Some(f) = frozen {
        out.used.insert("C1".into(), f.c1);
        out.used.insert("C2".into(), f.c2);
        let margin = (rep.energy_band.0 / f.c1).min(f.c2 / rep.energy_band.1);
        out.checks.push(Check::new(
            "energy-band-frozen",
            margin >= 1.0,
            margin,
            ">= 1 (C1 log^2(2+t) <= E(t) <= C2 log^2(2+t) on the window)",
        ));
    }
    out.notes.push(format!(
        "{} accepted steps, {} passages, E(t_max) = {}",
        traj.steps,
        traj.passages.len(),
        traj.final_energy()
    ));

    out.table("results.csv", &growth)?;
    out.table("brackets.csv", &brackets)?;
    out.table("passages.csv", &passages)?;
    out.table("trajectory.csv", &trajectory)?;
    Ok(out)
}

// ---------------------------------------------------------------- flow

fn flow_rows(path: &FlowMatrixPath) -> Vec<FlowRow> {
    let d = path.d;
    path.times
        .iter()
        .zip(&path.matrices)
        .zip(path.op_norms.iter().zip(&path.dets))
        .map(|((&t, m), (&opnorm, &det))| FlowRow {
            t,
            f11: m.get(0, 0),
            f12: m.get(0, d),
            f21: m.get(d, 0),
            f22: m.get(d, d),
            opnorm,
            det,
        })
        .collect()
}

fn max_det_defect_until(path: &FlowMatrixPath, t: f64) -> f64 {
    path.times
        .iter()
        .zip(&path.dets)
        .take_while(|(s, _)| **s <= t)
        .fold(0.0f64, |m, (_, d)| m.max((d - 1.0).abs()))
}

/// `T = 1, 1.5, 2, ...` up to `t_max`.
pub fn flow_t_grid(t_max: f64) -> Vec<f64> {
    if t_max < 1.0 {
        return vec![t_max];
    }
    let mut out: Vec<f64> = (0..).map(|k| 1.0 + 0.5 * k as f64).take_while(|&t| t <= t_max).collect();
    if out.last().is_some_and(|&t| t < t_max) {
        out.push(t_max);
    }
    out
}

pub fn flow_norm(cfg: &RunConfig, frozen: Option<&Constants>) -> LabResult<Report> {
    let params = model(cfg, cfg.hbar_list[0])?;
    let traj = canonical_orbit(&params, cfg.t_max, cfg.tol, true)?;
    let path = integrate_f(&traj, cfg.t_max, cfg.tol, HessianConvention::from(cfg.hessian))?;
    let sigma = flow_log_power(cfg.l);
    let grid = flow_t_grid(cfg.t_max);
    let c_fit = flow_bound_exponent(&path, &grid, sigma)?;
    let c_used = frozen.map_or(UPPER_SLACK * c_fit, |f| f.c_hat);

    let mut out = Report {
        constants_source: source(frozen),
        ..Report::default()
    };
    out.fitted.insert("c_hat".into(), c_fit);
    out.fitted.insert("sigma".into(), sigma);
    out.used.insert("c_hat".into(), c_used);
    out.used.insert("sigma".into(), sigma);

    let mut rows = Vec::with_capacity(grid.len());
    for &t in &grid {
        rows.push(FlowNormRow {
            t,
            sup_f: sup_norm_f(&path, t)?,
            bound_rhs: (c_used * t * (2.0 + t).ln().powf(sigma)).exp(),
            det_defect: max_det_defect_until(&path, t),
        });
    }
    let decreases = rows.windows(2).filter(|w| w[1].sup_f < w[0].sup_f).count();
    let worst = rows.iter().map(|r| r.sup_f / r.bound_rhs).fold(0.0f64, f64::max);
    out.checks.push(Check::at_most(
        "det-defect",
        max_det_defect_until(&path, cfg.t_max.min(30.0)),
        1e-6,
    ));
    out.checks.push(Check::at_most("supF-decreases", decreases as f64, 0.0));
    out.checks.push(Check::at_most("flow-bound-ratio", worst, 1.0));
    out.checks.push(Check::within(
        "sigma",
        sigma,
        2.0 * (1.0 - 1.0 / cfg.l as f64),
        2.0 * (1.0 - 1.0 / cfg.l as f64),
    ));
    out.notes.push(format!(
        "{} flow steps, |F|_T at T = {} is {}",
        path.times.len() - 1,
        cfg.t_max,
        path.sup_norms.last().copied().unwrap_or(f64::NAN)
    ));
    out.table("results.csv", &rows)?;
    out.table("flow.csv", &flow_rows(&path))?;
    Ok(out)
}

// ---------------------------------------------------------------- semiclassical

/// Closed-form Gaussian against the grid solution of the quadratic equation.
pub fn gaussian_grid_agreement(l: u32, hbar: f64, t_end: f64) -> LabResult<Vec<AgreementRow>> {
    const TOL: f64 = 1e-12;
    const DT: f64 = 1e-3;
    let params = ModelParams::new(l, 1, hbar)?;
    let traj = canonical_orbit(&params, t_end, TOL, true)?;
    let path = integrate_f(&traj, t_end, TOL, HessianConvention::Exact)?;
    let grid = Arc::new(init_grid(&params, &traj, t_end, &GridSafety::default())?);
    let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Yoshida4)?;
    let mut psi = sample_coherent(&PhasePoint::on_first_axis(1, 1.0, 1.0), hbar, grid.clone())?;
    let gp = GaussianPropagator::new(&traj, &path, hbar)?;
    let xs = grid.xs();
    let mut rows = Vec::new();
    for c in checkpoint_times(t_end, 0.25) {
        let n = ((c - psi.t) / DT).round().max(1.0) as usize;
        prop.advance_quadratic(&mut psi, c, n, &traj, HessianConvention::Exact)?;
        let g = gp.state_at(c)?;
        let w = WaveFunction {
            grid: grid.clone(),
            amplitudes: g.sample_1d(&xs),
            t: c,
        };
        rows.push(AgreementRow {
            t: c,
            l2_distance: psi.sub(&w).norm(),
            norm_gaussian: g.norm_sq().sqrt(),
        });
    }
    Ok(rows)
}

struct HbarRun {
    hbar: f64,
    n: usize,
    dt: f64,
    horizon: Option<f64>,
    curves: Vec<anharm_core::quantum::ErrorPoint>,
    expectations: Vec<(u32, ExpectationRow, f64)>,
}

fn expectation_powers(r_list: &[u32]) -> Vec<u32> {
    let set: BTreeSet<u32> = [1, 2].into_iter().chain(r_list.iter().copied().filter(|&r| r > 0)).collect();
    set.into_iter().collect()
}

fn expectation_times(t_max: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = (1..).map(|k| k as f64).take_while(|&t| t <= t_max).collect();
    if ts.last().map_or(true, |&t| t < t_max) {
        ts.push(t_max);
    }
    ts
}

fn hbar_run(cfg: &RunConfig, hbar: f64) -> LabResult<HbarRun> {
    let params = model(cfg, hbar)?;
    let t_max = cfg.t_max;
    let traj = canonical_orbit(&params, t_max, cfg.tol, true)?;
    let conv = HessianConvention::from(cfg.hessian);
    let path = integrate_f(&traj, t_max, cfg.tol, conv)?;
    let value = hbar.sqrt() * sup_norm_f(&path, t_max)?;
    if value > cfg.kappa {
        return Err(CoreError::HorizonViolated {
            t: t_max,
            value,
            kappa: cfg.kappa,
        }
        .into());
    }
    let horizon = ehrenfest_horizon(&path, hbar, cfg.kappa).ok();
    let grid = Arc::new(init_grid(&params, &traj, t_max, &GridSafety::default())?);
    let e_max = traj.samples.iter().map(|s| s.energy).fold(0.0, f64::max);
    let dt = Propagator::default_dt(hbar, e_max) * cfg.dt_factor;
    let cmp = ComparisonConfig {
        params,
        traj: &traj,
        path: &path,
        grid: grid.clone(),
        dt,
        scheme: cfg.scheme.into(),
        checkpoints: checkpoint_times(t_max, cfg.checkpoint_interval),
        r_list: cfg.r_list.clone(),
        kappa: cfg.kappa,
    };
    let curves = run_comparison(&cmp)?;

    let gp = GaussianPropagator::new(&traj, &path, hbar)?;
    let rule = QuadratureRule::gauss_hermite(EXPECTATION_RULE_ORDER)?;
    let mut expectations = Vec::new();
    for t in expectation_times(t_max) {
        let g = gp.state_at(t)?;
        let (y, v) = traj.state_at(t)?;
        let e_t = params.energy_1d(y, v);
        let f_t = path.at(t)?.op_norm();
        for r in expectation_powers(&cfg.r_list) {
            let obs = |q: &[f64], p: &[f64]| energy(q, p, &params).powi(r as i32);
            let value = g.expectation(&obs, &rule);
            let classical = e_t.powi(r as i32);
            let b = value - classical;
            let scale = hbar.sqrt() * f_t * (1.0 + e_t).powf(r as f64 - 1.0 / (2.0 * cfg.l as f64));
            expectations.push((
                r,
                ExpectationRow {
                    t,
                    hbar,
                    observable: format!("E^{r}"),
                    value,
                    classical_value: classical,
                    b_remainder: b,
                },
                scale,
            ));
        }
    }
    Ok(HbarRun {
        hbar,
        n: grid.n,
        dt,
        horizon,
        curves: curves.points,
        expectations,
    })
}

fn error_scale(hbar: f64, p: &anharm_core::quantum::ErrorPoint) -> f64 {
    let r = p.r as i32;
    hbar.sqrt() * p.sup_f.powi(3) * (1.0 + p.t).powi(r + 1) * (1.0 + p.energy_sup).powf(0.5 * p.r as f64)
}

pub fn semiclassical_error(cfg: &RunConfig, frozen: Option<&Constants>) -> LabResult<Report> {
    let mut hbars = cfg.hbar_list.clone();
    hbars.sort_by(|a, b| b.total_cmp(a));
    hbars.dedup();
    let runs: Vec<HbarRun> = hbars
        .par_iter()
        .map(|&h| hbar_run(cfg, h))
        .collect::<LabResult<Vec<_>>>()?;

    let mut out = Report {
        constants_source: source(frozen),
        ..Report::default()
    };

    let mut gamma_fit: BTreeMap<u32, f64> = BTreeMap::new();
    for run in &runs {
        for p in &run.curves {
            let g = gamma_fit.entry(p.r).or_insert(0.0);
            *g = g.max(p.err / error_scale(run.hbar, p));
        }
    }
    let gamma_used = |r: u32| -> f64 {
        frozen
            .and_then(|f| f.gamma.get(&r).copied())
            .unwrap_or(UPPER_SLACK * gamma_fit.get(&r).copied().unwrap_or(0.0))
    };

    let mut rows = Vec::new();
    let mut worst: BTreeMap<u32, f64> = BTreeMap::new();
    for run in &runs {
        for p in &run.curves {
            let rhs = gamma_used(p.r) * error_scale(run.hbar, p);
            let w = worst.entry(p.r).or_insert(0.0);
            *w = w.max(p.err / rhs);
            rows.push(ErrorRow {
                t: p.t,
                hbar: run.hbar,
                r: p.r,
                err: p.err,
                norm_full: p.norm_full,
                norm_quad: p.norm_quad,
                bound_rhs: rhs,
            });
        }
        out.notes.push(format!(
            "hbar = {}: N = {}, dt = {:e}, Ehrenfest horizon {}",
            run.hbar,
            run.n,
            run.dt,
            run.horizon.map_or("beyond the run".to_owned(), |t| format!("{t}"))
        ));
    }

    for &r in &cfg.r_list {
        let finals: Vec<f64> = runs
            .iter()
            .map(|run| run.curves.iter().rev().find(|p| p.r == r).map_or(f64::NAN, |p| p.err))
            .collect();
        let slope = log_log_slope(&hbars, &finals)?;
        out.fitted.insert(format!("slope_r{r}"), slope);
        out.fitted.insert(format!("Gamma_r{r}"), gamma_fit.get(&r).copied().unwrap_or(0.0));
        out.used.insert(format!("Gamma_r{r}"), gamma_used(r));
        out.checks.push(Check::within(format!("slope-r{r}"), slope, 0.35, 0.65));
        out.checks.push(Check::at_most(
            format!("error-bound-ratio-r{r}"),
            worst.get(&r).copied().unwrap_or(0.0),
            1.0,
        ));
    }

    let mut g1_fit: BTreeMap<u32, f64> = BTreeMap::new();
    for run in &runs {
        for (r, row, scale) in &run.expectations {
            let g = g1_fit.entry(*r).or_insert(0.0);
            *g = g.max(row.b_remainder.abs() / scale);
        }
    }
    let mut expectations = Vec::new();
    let mut g1_worst: BTreeMap<u32, f64> = BTreeMap::new();
    for run in &runs {
        for (r, row, scale) in &run.expectations {
            let used = frozen
                .and_then(|f| f.gamma_1.get(r).copied())
                .unwrap_or(UPPER_SLACK * g1_fit[r]);
            let w = g1_worst.entry(*r).or_insert(0.0);
            *w = w.max(row.b_remainder.abs() / (used * scale));
            expectations.push(row.clone());
        }
    }
    for (r, fit) in &g1_fit {
        out.fitted.insert(format!("Gamma_1_r{r}"), *fit);
        let used = frozen
            .and_then(|f| f.gamma_1.get(r).copied())
            .unwrap_or(UPPER_SLACK * fit);
        out.used.insert(format!("Gamma_1_r{r}"), used);
        out.checks.push(Check::at_most(
            format!("expectation-remainder-ratio-r{r}"),
            g1_worst[r],
            1.0,
        ));
    }

    let t_agree = cfg.t_max.min(3.0);
    let agreement = gaussian_grid_agreement(cfg.l, 1e-3, t_agree)?;
    let dist = agreement.iter().map(|a| a.l2_distance).fold(0.0f64, f64::max);
    out.fitted.insert("gaussian_grid_distance".into(), dist);
    out.checks.push(Check::at_most("gaussian-grid-agreement", dist, 1e-6));

    out.table("results.csv", &rows)?;
    out.table("expectations.csv", &expectations)?;
    out.table("agreement.csv", &agreement)?;
    Ok(out)
}

// ---------------------------------------------------------------- sobolev

/// Constants the Sobolev checks are evaluated with.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevBounds {
    pub k1: BTreeMap<u32, f64>,
    pub c_prime: BTreeMap<u32, f64>,
}

/// Mean of the piecewise-linear interpolant of `(ts, vs)` over `[a, b]`.
pub fn interval_mean(ts: &[f64], vs: &[f64], a: f64, b: f64) -> f64 {
    let lerp = |x: f64, k: usize| vs[k] + (vs[k + 1] - vs[k]) * (x - ts[k]) / (ts[k + 1] - ts[k]);
    let mut acc = 0.0;
    for k in 0..ts.len() - 1 {
        let lo = ts[k].max(a);
        let hi = ts[k + 1].min(b);
        if hi > lo {
            acc += 0.5 * (lerp(lo, k) + lerp(hi, k)) * (hi - lo);
        }
    }
    acc / (b - a)
}

/// Centred one-period moving average at every sample whose window fits
/// inside the data; returns `(t, mean)` pairs.
pub fn period_smoothed(ts: &[f64], vs: &[f64], period: &dyn Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    ts.iter()
        .filter_map(|&t| {
            let half = 0.5 * period(t);
            (t - half >= first && t + half <= last).then(|| (t, interval_mean(ts, vs, t - half, t + half)))
        })
        .collect()
}

struct SobolevRun {
    hbar: f64,
    window_end: f64,
    times: Vec<f64>,
    /// Norms per index, aligned with `times`.
    norms: BTreeMap<u32, Vec<f64>>,
    unit_defect: f64,
    period: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    checkpoint: (CheckpointHeader, Vec<AmplitudeRow>),
}

fn sobolev_run(cfg: &RunConfig, hbar: f64, window: (f64, f64)) -> LabResult<SobolevRun> {
    let window_end = sobolev_window_end(window.0, window.1, hbar);
    if window_end < 2.0 {
        return Err(LabError::config(
            "hbar_list",
            format!("growth window [2, {window_end}] is empty for hbar = {hbar}"),
        ));
    }
    let params = model(cfg, hbar)?;
    let t_max = cfg.t_max;
    let traj = canonical_orbit(&params, t_max, cfg.tol, true)?;
    let grid = Arc::new(init_grid(&params, &traj, t_max, &GridSafety::default())?);
    let e_max = traj.samples.iter().map(|s| s.energy).fold(0.0, f64::max);
    let dt = Propagator::default_dt(hbar, e_max) * cfg.dt_factor;
    let mut prop = Propagator::new(grid.clone(), &params, cfg.scheme.into())?;
    let mut psi = sample_coherent(&PhasePoint::on_first_axis(1, 1.0, 1.0), hbar, grid.clone())?;

    let mut indices: BTreeSet<u32> = cfg.r_list.iter().copied().collect();
    indices.insert(0);
    let mut times = vec![0.0];
    let mut norms: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &r in &indices {
        norms.entry(r).or_default().push(prop.sobolev_norm(&psi, r)?);
    }
    for c in checkpoint_times(t_max, cfg.checkpoint_interval) {
        let n = ((c - psi.t) / dt - 1e-9).ceil().max(1.0) as usize;
        prop.advance_full(&mut psi, c, n, Drive::Classical(&traj))?;
        times.push(c);
        for &r in &indices {
            norms.get_mut(&r).expect("index present").push(prop.sobolev_norm(&psi, r)?);
        }
    }
    let unit_defect = norms[&0].iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));

    // Period of the unkicked orbit at the current energy.
    let energies: Vec<(f64, f64)> = times.iter().map(|&t| (t, traj.energy_at(t).unwrap_or(f64::NAN))).collect();
    let l = cfg.l;
    let p1 = period_oracle(1.0, &params)?;
    let period = move |t: f64| {
        let k = energies.partition_point(|(s, _)| *s <= t).saturating_sub(1);
        let e = energies[k].1;
        p1 * e.powf(-(l as f64 - 1.0) / (2.0 * l as f64))
    };

    let header = CheckpointHeader {
        t: psi.t,
        hbar,
        l,
        n: grid.n,
        x_min: grid.x_min,
        x_max: grid.x_max,
        dt,
    };
    let amps = psi
        .amplitudes
        .iter()
        .enumerate()
        .map(|(j, a)| AmplitudeRow {
            x: grid.x(j),
            re: a.re,
            im: a.im,
        })
        .collect();
    Ok(SobolevRun {
        hbar,
        window_end,
        times,
        norms,
        unit_defect,
        period: Box::new(period),
        checkpoint: (header, amps),
    })
}

/// Propagate `phi_(1,1)` under the full equation and test the Sobolev bounds
/// on the window `[2, K2 sqrt(log(K3/hbar))]`. Without `bounds` the constants
/// are fitted from this run.
pub fn sobolev_stage(
    cfg: &RunConfig,
    window: (f64, f64),
    bounds: Option<&SobolevBounds>,
    constants_source: String,
) -> LabResult<Report> {
    let mut hbars = cfg.hbar_list.clone();
    hbars.sort_by(|a, b| b.total_cmp(a));
    hbars.dedup();
    let runs: Vec<SobolevRun> = hbars
        .par_iter()
        .map(|&h| sobolev_run(cfg, h, window))
        .collect::<LabResult<Vec<_>>>()?;

    let mut out = Report {
        constants_source,
        ..Report::default()
    };
    out.used.insert("K2".into(), window.0);
    out.used.insert("K3".into(), window.1);

    let in_window = |run: &SobolevRun, t: f64| t >= 2.0 && t <= run.window_end;
    let mut k1_fit: BTreeMap<u32, f64> = BTreeMap::new();
    let mut cp_fit: BTreeMap<u32, f64> = BTreeMap::new();
    for run in &runs {
        for &r in &cfg.r_list {
            let ns = &run.norms[&r];
            for (&t, &v) in run.times.iter().zip(ns) {
                if in_window(run, t) {
                    let k = k1_fit.entry(r).or_insert(f64::INFINITY);
                    *k = k.min(v / (2.0 + t).ln().powi(r as i32));
                }
                let c = cp_fit.entry(r).or_insert(0.0);
                *c = c.max(v / (1.0 + t).powi(r as i32));
            }
        }
    }
    let k1 = |r: u32| {
        bounds
            .and_then(|b| b.k1.get(&r).copied())
            .unwrap_or(LOWER_SLACK * k1_fit.get(&r).copied().unwrap_or(0.0))
    };
    let cp = |r: u32| {
        bounds
            .and_then(|b| b.c_prime.get(&r).copied())
            .unwrap_or(UPPER_SLACK * cp_fit.get(&r).copied().unwrap_or(0.0))
    };

    let mut rows = Vec::new();
    for run in &runs {
        let tag = format!("hbar{}", run.hbar);
        out.checks.push(Check::at_most(format!("unitarity-{tag}"), run.unit_defect, 1e-9));
        for &r in &cfg.r_list {
            let ns = &run.norms[&r];
            let (mut lower_margin, mut upper_worst) = (f64::INFINITY, 0.0f64);
            for (&t, &v) in run.times.iter().zip(ns) {
                let lower = k1(r) * (2.0 + t).ln().powi(r as i32);
                let upper = cp(r) * (1.0 + t).powi(r as i32);
                if in_window(run, t) {
                    lower_margin = lower_margin.min(v / lower);
                }
                upper_worst = upper_worst.max(v / upper);
                rows.push(SobolevRow {
                    t,
                    r,
                    norm: v,
                    lower_bound: lower,
                    upper_bound: upper,
                });
            }
            out.checks.push(Check::new(
                format!("lower-bound-{tag}-r{r}"),
                lower_margin >= 1.0,
                lower_margin,
                ">= 1 (norm / K1 log^r(2+t) on the window)",
            ));
            out.checks.push(Check::at_most(format!("upper-bound-{tag}-r{r}"), upper_worst, 1.0));
            if r > 0 {
                let smooth = period_smoothed(&run.times, ns, &*run.period);
                let gated: Vec<(f64, f64)> = smooth.into_iter().filter(|(t, _)| in_window(run, *t)).collect();
                let decreases = gated.windows(2).filter(|w| w[1].1 < w[0].1).count();
                let covered = gated.last().map_or(0.0, |g| g.0);
                out.checks.push(Check::new(
                    format!("trend-decreases-{tag}-r{r}"),
                    decreases == 0 && gated.len() >= 2,
                    decreases as f64,
                    format!("0 decreases of the one-period mean ({} points up to t = {covered})", gated.len()),
                ));
            }
        }
        out.fitted.insert(format!("window_end_{tag}"), run.window_end);
        if cfg.t_max < run.window_end {
            out.notes.push(format!(
                "{tag}: run stops at t = {} before the window end {}",
                cfg.t_max, run.window_end
            ));
        }
        let (header, amps) = &run.checkpoint;
        out.table(format!("checkpoints/psi_{tag}_final.meta.csv"), std::slice::from_ref(header))?;
        out.table(format!("checkpoints/psi_{tag}_final.csv"), amps)?;
    }
    for &r in &cfg.r_list {
        out.fitted.insert(format!("K1_r{r}"), k1_fit.get(&r).copied().unwrap_or(f64::NAN));
        out.fitted.insert(format!("C_prime_r{r}"), cp_fit.get(&r).copied().unwrap_or(f64::NAN));
        out.used.insert(format!("K1_r{r}"), k1(r));
        out.used.insert(format!("C_prime_r{r}"), cp(r));
    }
    // Results first so the main table is the first file written.
    out.files.insert(0, ("results.csv".into(), to_csv_string(&rows)?));
    Ok(out)
}

/// Window constants from the Ehrenfest horizon alone (used without frozen constants).
fn horizon_window(cfg: &RunConfig, kappa: f64) -> LabResult<(f64, f64)> {
    let params = model(cfg, cfg.hbar_list[0])?;
    let t_end = 200.0;
    let traj = canonical_orbit(&params, t_end, cfg.tol, true)?;
    let path = integrate_f(&traj, t_end, cfg.tol, HessianConvention::from(cfg.hessian))?;
    let k3 = kappa * kappa;
    let mut k2 = f64::INFINITY;
    for &h in &WINDOW_HBARS {
        let lg = (k3 / h).ln();
        if lg <= 0.0 {
            continue;
        }
        match ehrenfest_horizon(&path, h, kappa) {
            Ok(te) => k2 = k2.min(te / lg.sqrt()),
            Err(CoreError::HorizonExceedsPath { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if !k2.is_finite() {
        return Err(LabError::config("kappa", "no reference hbar gives a finite window"));
    }
    Ok((k2, k3))
}

pub fn sobolev_growth(cfg: &RunConfig, frozen: Option<&Constants>) -> LabResult<Report> {
    match frozen {
        Some(f) => {
            let bounds = SobolevBounds {
                k1: f.k1.clone(),
                c_prime: f.c_prime.clone(),
            };
            if let Some(r) = cfg.r_list.iter().find(|r| !f.k1.contains_key(r)) {
                return Err(LabError::config("r_list", format!("no frozen constants for r = {r}")));
            }
            sobolev_stage(cfg, (f.k2, f.k3), Some(&bounds), source(Some(f)))
        }
        None => {
            let window = horizon_window(cfg, cfg.kappa)?;
            sobolev_stage(cfg, window, None, source(None))
        }
    }
}

// ---------------------------------------------------------------- calibration

fn stage_config(cfg: &RunConfig, experiment: Experiment) -> RunConfig {
    let mut s = RunConfig::preset(experiment);
    s.l = cfg.l;
    s.d = cfg.d;
    s.kappa = cfg.kappa;
    s.output_dir = cfg.output_dir.clone();
    s.hessian = cfg.hessian;
    s
}

fn need(report: &Report, key: &str) -> LabResult<f64> {
    report
        .fitted
        .get(key)
        .copied()
        .filter(|v| v.is_finite())
        .ok_or_else(|| LabError::Other(format!("calibration stage did not produce `{key}`")))
}

/// Fit every constant at the reference settings of each experiment.
///
/// The classical stage uses `cfg.t_max`; the Sobolev stage uses
/// `cfg.hbar_list[0]` and `cfg.r_list`; the other stages use their presets.
pub fn calibrate(cfg: &RunConfig) -> LabResult<Report> {
    let l = cfg.l;
    let lf = l as f64;
    let mut out = Report {
        constants_source: "fitted by this calibration run".into(),
        ..Report::default()
    };

    let mut c_cfg = stage_config(cfg, Experiment::ClassicalGrowth);
    c_cfg.t_max = cfg.t_max;
    let classical = classical_growth(&c_cfg, None)?;
    let c1 = LOWER_SLACK * need(&classical, "C1")?;
    let c2 = UPPER_SLACK * need(&classical, "C2")?;
    let c_increment = LOWER_SLACK * need(&classical, "c")?;

    let flow = flow_norm(&stage_config(cfg, Experiment::FlowNorm), None)?;
    let c_hat = UPPER_SLACK * need(&flow, "c_hat")?;

    let mut s_cfg = stage_config(cfg, Experiment::SemiclassicalError);
    s_cfg.r_list = s_cfg.r_list.iter().chain(&cfg.r_list).copied().collect::<BTreeSet<_>>().into_iter().collect();
    let semi = semiclassical_error(&s_cfg, None)?;
    let mut gamma = BTreeMap::new();
    for &r in &s_cfg.r_list {
        gamma.insert(r, UPPER_SLACK * need(&semi, &format!("Gamma_r{r}"))?);
    }
    let mut gamma_1 = BTreeMap::new();
    for r in expectation_powers(&s_cfg.r_list) {
        gamma_1.insert(r, UPPER_SLACK * need(&semi, &format!("Gamma_1_r{r}"))?);
    }

    // Largest kappa for which the remainder cannot spoil the lower bound after t = 2.
    let mut kappa = cfg.kappa;
    for &r in cfg.r_list.iter().filter(|&&r| r > 0) {
        let g1 = gamma_1[&r];
        let k = c1 * 2f64.ln().powf(1.0 / lf) / (2.0 * g1 * c2.powf(r as f64 - 1.0 / (2.0 * lf)));
        kappa = kappa.min(k);
    }
    let mut w_cfg = stage_config(cfg, Experiment::SobolevGrowth);
    w_cfg.hbar_list = cfg.hbar_list.clone();
    w_cfg.r_list = cfg.r_list.clone();
    let (k2, k3) = horizon_window(&w_cfg, kappa)?;
    let c_tilde_2 = std::f64::consts::SQRT_2 * k2;
    let c_tilde_1: BTreeMap<u32, f64> = cfg.r_list.iter().map(|&r| (r, (c1.powi(r as i32) / 2.0).sqrt())).collect();

    // Run half a period past the window end so the trend check covers it.
    let h0 = cfg.hbar_list[0];
    let t_w = sobolev_window_end(k2, k3, h0);
    let params = model(cfg, h0)?;
    let orbit = canonical_orbit(&params, t_w + 10.0, 1e-12, true)?;
    let half = 0.5 * period_oracle(orbit.energy_at(t_w)?, &params)?;
    w_cfg.t_max = ((t_w + half) / w_cfg.checkpoint_interval).ceil() * w_cfg.checkpoint_interval + w_cfg.checkpoint_interval;
    let sob = sobolev_stage(&w_cfg, (k2, k3), None, "fitted by this calibration run".into())?;
    let mut k1 = BTreeMap::new();
    let mut c_prime = BTreeMap::new();
    for &r in &cfg.r_list {
        k1.insert(r, LOWER_SLACK * need(&sob, &format!("K1_r{r}"))?);
        c_prime.insert(r, UPPER_SLACK * need(&sob, &format!("C_prime_r{r}"))?);
    }

    let constants = Constants {
        l,
        c1,
        c2,
        c_increment,
        c_hat,
        sigma: flow_log_power(l),
        gamma,
        gamma_1,
        kappa,
        k1,
        k2,
        k3,
        c_tilde_1,
        c_tilde_2,
        c_prime,
        mu: 1.0,
        tau: 0.5,
        epsilon: 0.5,
    };
    let flat = constants.flatten();
    let bad: Vec<&String> = flat.iter().filter(|(_, v)| !(v.is_finite() && **v > 0.0)).map(|(k, _)| k).collect();
    out.checks.push(Check::new(
        "constants-complete",
        bad.is_empty(),
        bad.len() as f64,
        "every constant finite and positive",
    ));
    out.notes.push(format!("Sobolev stage ran to t = {} (window end {t_w})", w_cfg.t_max));

    out.absorb("classical-growth", classical);
    out.absorb("flow-norm", flow);
    out.absorb("semiclassical-error", semi);
    out.absorb("sobolev-growth", sob);

    let rows: Vec<ConstantRow> = flat
        .iter()
        .map(|(name, &value)| ConstantRow {
            name: name.clone(),
            value,
        })
        .collect();
    out.files.insert(0, ("results.csv".into(), to_csv_string(&rows)?));
    out.files.insert(1, ("calibration.json".into(), constants.to_json()));
    out.used = flat;
    out.calibrated = Some(constants);
    Ok(out)
}

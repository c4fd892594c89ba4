//! The kicked oscillator `y'' + y^(2l-1) = f(y, y')`: integration, passage
//! times, the energy ledger and the growth checks built on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{forcing_f, ModelParams, PhasePoint};
use crate::ode::{DenseOutput, Dop853, Integrator, OdeSystem};
use crate::quadrature::integrate_adaptive;

/// First-order form of the kicked oscillator on the first axis.
#[derive(Debug, Clone, Copy)]
pub struct ForcedOscillator {
    pub params: ModelParams,
    pub forcing: bool,
}

impl OdeSystem for ForcedOscillator {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, s: &[f64], ds: &mut [f64]) {
        let kick = if self.forcing {
            forcing_f(s[0], s[1], &self.params)
        } else {
            0.0
        };
        ds[0] = s[1];
        ds[1] = -self.params.trap_gradient(s[0]) + kick;
    }
}

/// The unkicked trap driven by a prescribed time-dependent force.
pub struct DrivenOscillator<'a> {
    pub params: ModelParams,
    pub drive: &'a dyn Fn(f64) -> f64,
}

impl OdeSystem for DrivenOscillator<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        ds[0] = s[1];
        ds[1] = -self.params.trap_gradient(s[0]) + (self.drive)(t);
    }
}

/// Settings for [`integrate_forced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    pub tol: f64,
    /// Keep the piecewise interpolant (needed by `beta_of_t`, the flow and
    /// the quantum drivers; costs `18 * 8` bytes per step).
    pub dense: bool,
    /// Record every `sample_stride`-th accepted step (the last step is always kept).
    pub sample_stride: usize,
    pub forcing: bool,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            dense: true,
            sample_stride: 1,
            forcing: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub y: f64,
    pub ydot: f64,
    pub energy: f64,
}

/// Which level an upward crossing went through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// `y = -1` with `y' > 0`: a kick window opens.
    Enter,
    /// `y = +1` with `y' > 0`: the window closes.
    Leave,
}

impl Boundary {
    pub fn sign(self) -> i32 {
        match self {
            Boundary::Enter => -1,
            Boundary::Leave => 1,
        }
    }

    pub fn from_sign(sign: i32) -> Option<Self> {
        match sign {
            -1 => Some(Boundary::Enter),
            1 => Some(Boundary::Leave),
            _ => None,
        }
    }

    fn level(self) -> f64 {
        self.sign() as f64
    }
}

/// Upward crossing of `y = +-1`. Odd `n` open a kick window, even `n` close one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageEvent {
    pub n: usize,
    pub t: f64,
    pub boundary: Boundary,
    pub ydot: f64,
    pub energy: f64,
    /// Energy when the surrounding kick window opened.
    pub e_before: f64,
    /// Energy when it closed (the final energy for a window still open at `t_max`).
    pub e_after: f64,
}

#[derive(Debug, Clone)]
pub struct ClassicalTrajectory {
    pub params: ModelParams,
    pub tol: f64,
    pub forcing: bool,
    pub samples: Vec<Sample>,
    pub passages: Vec<PassageEvent>,
    pub dense: Option<DenseOutput>,
    pub t_max: f64,
    pub steps: usize,
}

impl ClassicalTrajectory {
    pub fn dense(&self) -> Result<&DenseOutput> {
        self.dense.as_ref().ok_or(Error::DenseOutputUnavailable)
    }

    /// `(y, y')` at time `t` from the interpolant.
    pub fn state_at(&self, t: f64) -> Result<(f64, f64)> {
        let mut out = [0.0; 2];
        self.dense()?.eval(t, &mut out)?;
        Ok((out[0], out[1]))
    }

    pub fn energy_at(&self, t: f64) -> Result<f64> {
        let (y, v) = self.state_at(t)?;
        Ok(self.params.energy_1d(y, v))
    }

    /// Phase point `z_t` embedded on the first axis of `R^d`.
    pub fn phase_point(&self, t: f64) -> Result<PhasePoint> {
        let (y, v) = self.state_at(t)?;
        Ok(PhasePoint::on_first_axis(self.params.d, y, v))
    }

    pub fn final_energy(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.energy)
    }

    pub fn max_energy(&self) -> f64 {
        // Energy is nondecreasing up to integrator noise.
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.energy))
    }
}

/// Integrate the kicked oscillator on `[0, t_max]` from `z0` (first axis only).
///
/// The integration is stopped and restarted at every passage through
/// `y = +-1`, so no step straddles the edge of the forcing support.
pub fn integrate_forced(
    params: &ModelParams,
    z0: (f64, f64),
    t_max: f64,
    opts: TrajectoryOptions,
) -> Result<ClassicalTrajectory> {
    params.validate()?;
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(invalid("t_max", "must be positive and finite"));
    }
    if !(1e-13..=1e-6).contains(&opts.tol) {
        return Err(invalid("tol", "must lie in [1e-13, 1e-6]"));
    }
    if opts.sample_stride == 0 {
        return Err(invalid("sample_stride", "must be at least 1"));
    }
    if !(z0.0.is_finite() && z0.1.is_finite()) {
        return Err(Error::NonFiniteState { t: 0.0 });
    }
    let sys = ForcedOscillator {
        params: *params,
        forcing: opts.forcing,
    };
    let cfg = Dop853::with_tol(opts.tol);
    let mut it = Integrator::new(&sys, cfg, 0.0, &[z0.0, z0.1])?;
    let mut dense = opts.dense.then(|| DenseOutput::new(2));
    let e0 = params.energy_1d(z0.0, z0.1);
    let mut samples = vec![Sample {
        t: 0.0,
        y: z0.0,
        ydot: z0.1,
        energy: e0,
    }];
    let mut crossings: Vec<(f64, Boundary, f64, f64)> = Vec::new();
    let mut steps = 0usize;
    let mut interp = [0.0; 2];
    // Level the current segment started on; its root at the start is not a new event.
    let mut started_on: Option<f64> = (z0.0 == 1.0 || z0.0 == -1.0).then_some(z0.0);
    while it.step(t_max)? {
        steps += 1;
        let (t_old, h) = it.last_step();
        let prev = it.previous_state();
        let (y0, v0) = (prev[0], prev[1]);
        let (y1, v1) = (it.y()[0], it.y()[1]);
        if !(y1.is_finite() && v1.is_finite()) {
            return Err(Error::NonFiniteState { t: it.t() });
        }
        let first_of_segment = started_on.take();
        let reach = h * (v0.abs() + v1.abs());
        let mut event: Option<(f64, Boundary)> = None;
        for boundary in [Boundary::Enter, Boundary::Leave] {
            let level = boundary.level();
            let g0 = y0 - level;
            let g1 = y1 - level;
            if !(g0 * g1 <= 0.0 || g0.abs().min(g1.abs()) < reach) {
                continue;
            }
            // Scan the step on a fine grid for upward sign changes.
            const SUB: usize = 16;
            let mut ta = t_old;
            let mut ga = if first_of_segment == Some(level) { 0.0 } else { g0 };
            for j in 1..=SUB {
                let tb = if j == SUB { t_old + h } else { t_old + h * j as f64 / SUB as f64 };
                let gb = if j == SUB {
                    g1
                } else {
                    it.interpolate(tb, &mut interp);
                    interp[0] - level
                };
                if ga < 0.0 && gb >= 0.0 {
                    let tr = refine_root(&mut it, level, ta, ga, tb, gb, &mut interp);
                    if event.is_none_or(|(te, _)| tr < te) {
                        event = Some((tr, boundary));
                    }
                    break;
                }
                ta = tb;
                ga = gb;
            }
        }
        match event {
            None => {
                if let Some(store) = dense.as_mut() {
                    it.push_dense(store);
                }
                if steps % opts.sample_stride == 0 || it.t() >= t_max {
                    samples.push(Sample {
                        t: it.t(),
                        y: y1,
                        ydot: v1,
                        energy: params.energy_1d(y1, v1),
                    });
                }
            }
            Some((guess, boundary)) => {
                let level = boundary.level();
                let t_ev = polish_event(&sys, opts.tol, t_old, [y0, v0], guess, level)?;
                let state = land(&sys, opts.tol, t_old, [y0, v0], t_ev, dense.as_mut())?;
                let e = params.energy_1d(state[0], state[1]);
                if state[1] > 0.0 {
                    crossings.push((t_ev, boundary, state[1], e));
                }
                samples.push(Sample {
                    t: t_ev,
                    y: state[0],
                    ydot: state[1],
                    energy: e,
                });
                it = Integrator::new(&sys, cfg, t_ev, &state)?;
                started_on = Some(level);
            }
        }
    }
    let start = (z0.0 == 1.0 && z0.1 > 0.0).then_some(z0.1);
    let passages = number_passages(&crossings, start, e0, it_final_energy(&samples))?;
    Ok(ClassicalTrajectory {
        params: *params,
        tol: opts.tol,
        forcing: opts.forcing,
        samples,
        passages,
        dense,
        t_max,
        steps,
    })
}

fn it_final_energy(samples: &[Sample]) -> f64 {
    samples.last().map_or(0.0, |s| s.energy)
}

/// Integrate from a step start to `t` under step-size control, optionally
/// appending the interpolant of every sub-step.
fn land(
    sys: &ForcedOscillator,
    tol: f64,
    t0: f64,
    y0: [f64; 2],
    t: f64,
    mut store: Option<&mut DenseOutput>,
) -> Result<[f64; 2]> {
    if t <= t0 {
        return Ok(y0);
    }
    let mut it = Integrator::new(sys, Dop853::with_tol(tol), t0, &y0)?;
    while it.step(t)? {
        if let Some(s) = store.as_deref_mut() {
            it.push_dense(s);
        }
    }
    Ok([it.y()[0], it.y()[1]])
}

/// Newton-correct an interpolated root of `y = level` using landed states.
/// The order-7 interpolant is noticeably less accurate than step endpoints
/// where the cut-off layers are steep.
fn polish_event(
    sys: &ForcedOscillator,
    tol: f64,
    t0: f64,
    y0: [f64; 2],
    guess: f64,
    level: f64,
) -> Result<f64> {
    let mut t = guess;
    for _ in 0..5 {
        let state = land(sys, tol, t0, y0, t, None)?;
        if state[1] <= 0.0 {
            break;
        }
        let dt = (state[0] - level) / state[1];
        t = (t - dt).max(t0);
        if dt.abs() <= 1e-13 * t.abs().max(1.0) {
            break;
        }
    }
    Ok(t)
}

fn refine_root<S: OdeSystem>(
    it: &mut Integrator<'_, S>,
    level: f64,
    mut a: f64,
    mut ga: f64,
    mut b: f64,
    mut gb: f64,
    buf: &mut [f64; 2],
) -> f64 {
    // Illinois variant of regula falsi on the interpolant.
    let mut side = 0i32;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * b.abs().max(1.0) {
            break;
        }
        let c = if gb != ga { (a * gb - b * ga) / (gb - ga) } else { 0.5 * (a + b) };
        let c = if c <= a || c >= b { 0.5 * (a + b) } else { c };
        it.interpolate(c, buf);
        let gc = buf[0] - level;
        if gc == 0.0 {
            return c;
        }
        if gc < 0.0 {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    if ga.abs() < gb.abs() {
        a
    } else {
        b
    }
}

fn number_passages(
    crossings: &[(f64, Boundary, f64, f64)],
    start_velocity: Option<f64>,
    e0: f64,
    e_final: f64,
) -> Result<Vec<PassageEvent>> {
    let mut out = Vec::with_capacity(crossings.len() + 1);
    if let Some(ydot) = start_velocity {
        out.push(PassageEvent {
            n: 0,
            t: 0.0,
            boundary: Boundary::Leave,
            ydot,
            energy: e0,
            e_before: e0,
            e_after: e0,
        });
    }
    for (k, &(t, boundary, ydot, energy)) in crossings.iter().enumerate() {
        let n = match out.last() {
            Some(prev) => prev.n + 1,
            None => match boundary {
                Boundary::Enter => 1,
                Boundary::Leave => 0,
            },
        };
        let expected = if n % 2 == 1 { Boundary::Enter } else { Boundary::Leave };
        if boundary != expected {
            return Err(Error::EventOrderingViolation { n: k, t });
        }
        out.push(PassageEvent {
            n,
            t,
            boundary,
            ydot,
            energy,
            e_before: energy,
            e_after: energy,
        });
    }
    // Fill window energies: window [t_odd, t_even].
    let len = out.len();
    for i in 0..len {
        if out[i].boundary == Boundary::Enter {
            let open = out[i].energy;
            let close = if i + 1 < len { out[i + 1].energy } else { e_final };
            out[i].e_before = open;
            out[i].e_after = close;
            if i + 1 < len {
                out[i + 1].e_before = open;
                out[i + 1].e_after = close;
            }
        }
    }
    Ok(out)
}

/// Recompute passage events from a trajectory's samples and interpolant.
pub fn detect_passages(traj: &ClassicalTrajectory) -> Result<Vec<PassageEvent>> {
    if traj.dense.is_none() {
        return Ok(traj.passages.clone());
    }
    let dense = traj.dense()?;
    let sys = ForcedOscillator {
        params: traj.params,
        forcing: traj.forcing,
    };
    let mut crossings = Vec::new();
    let mut buf = [0.0; 2];
    for (i, (t0, h)) in dense.steps().enumerate() {
        for boundary in [Boundary::Enter, Boundary::Leave] {
            let level = boundary.level();
            let g = |t: f64, buf: &mut [f64; 2]| {
                dense.eval_in(i, t, buf);
                buf[0] - level
            };
            const SUB: usize = 16;
            let mut ta = t0;
            let mut ga = g(ta, &mut buf);
            for j in 1..=SUB {
                let tb = t0 + h * j as f64 / SUB as f64;
                let gb = g(tb, &mut buf);
                if ga < 0.0 && gb >= 0.0 {
                    let (mut a, mut b) = (ta, tb);
                    while (b - a) > 1e-13 * b.abs().max(1.0) {
                        let c = 0.5 * (a + b);
                        if g(c, &mut buf) < 0.0 {
                            a = c;
                        } else {
                            b = c;
                        }
                    }
                    dense.eval_in(i, t0, &mut buf);
                    let start = buf;
                    let tr = polish_event(&sys, traj.tol, t0, start, b, level)?;
                    let state = land(&sys, traj.tol, t0, start, tr, None)?;
                    if state[1] > 0.0 {
                        crossings.push((tr, boundary, state[1], traj.params.energy_1d(state[0], state[1])));
                    }
                }
                ta = tb;
                ga = gb;
            }
        }
    }
    crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
    // A root exactly on a step boundary is seen by both neighbouring steps.
    crossings.dedup_by(|a, b| a.1 == b.1 && (a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(1.0));
    let first = traj.samples.first().copied();
    let start = first.filter(|s| s.y == 1.0 && s.ydot > 0.0).map(|s| s.ydot);
    let e0 = first.map_or(0.0, |s| s.energy);
    number_passages(&crossings, start, e0, traj.final_energy())
}

/// Plateau energies `E_n = E(t_2n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub e_n: Vec<f64>,
    pub t_2n: Vec<f64>,
    /// Largest relative energy variation seen on a forcing-free plateau.
    pub max_plateau_drift: f64,
}

impl EnergyLedger {
    pub fn len(&self) -> usize {
        self.e_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_n.is_empty()
    }
}

/// Build the ledger and verify that energy is frozen on `[t_2n, t_2n+1]`.
pub fn energy_ledger(traj: &ClassicalTrajectory) -> Result<EnergyLedger> {
    let allowed_rel = 100.0 * traj.tol;
    let evs = &traj.passages;
    let mut e_n = Vec::new();
    let mut t_2n = Vec::new();
    let mut max_drift = 0.0f64;
    let mut cursor = 0usize;
    for (k, ev) in evs.iter().enumerate() {
        if ev.boundary != Boundary::Leave {
            continue;
        }
        let start = ev.t;
        let end = evs.get(k + 1).map_or(traj.t_max, |e| e.t);
        let en = ev.energy;
        let (mut lo, mut hi) = (en, en);
        while cursor < traj.samples.len() && traj.samples[cursor].t < start {
            cursor += 1;
        }
        let mut j = cursor;
        while j < traj.samples.len() && traj.samples[j].t <= end {
            let e = traj.samples[j].energy;
            lo = lo.min(e);
            hi = hi.max(e);
            j += 1;
        }
        if let Some(next) = evs.get(k + 1) {
            lo = lo.min(next.energy);
            hi = hi.max(next.energy);
        }
        let drift = (hi - lo) / en;
        max_drift = max_drift.max(drift);
        if drift > allowed_rel {
            return Err(Error::PlateauViolation {
                n: ev.n / 2,
                variation: hi - lo,
                allowed: allowed_rel * en,
            });
        }
        e_n.push(en);
        t_2n.push(ev.t);
    }
    Ok(EnergyLedger {
        e_n,
        t_2n,
        max_plateau_drift: max_drift,
    })
}

/// Forcing `beta(t) = f(y(t), y'(t))` along the stored trajectory.
pub fn beta_of_t(traj: &ClassicalTrajectory, t: f64) -> Result<f64> {
    if !traj.forcing {
        // Bounds are still enforced so callers see the same errors.
        traj.state_at(t)?;
        return Ok(0.0);
    }
    let (y, v) = traj.state_at(t)?;
    Ok(forcing_f(y, v, &traj.params))
}

/// `int_0^(pi/2) dtheta / sqrt(sum_{k<l} sin^(2k) theta)`, the energy-free
/// part of the period after `u = sin theta` in `int_0^1 du / sqrt(1 - u^(2l))`.
fn reduced_period_integral(l: u32) -> Result<f64> {
    let f = |theta: f64| {
        let s2 = theta.sin().powi(2);
        let mut acc = 0.0;
        let mut p = 1.0;
        for _ in 0..l {
            acc += p;
            p *= s2;
        }
        1.0 / acc.sqrt()
    };
    integrate_adaptive(f, 0.0, core::f64::consts::FRAC_PI_2, 1e-13)
}

/// Period of the unkicked trap at energy `energy`.
pub fn period_oracle(energy: f64, params: &ModelParams) -> Result<f64> {
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(invalid("energy", "must be positive"));
    }
    let two_l = 2.0 * params.l as f64;
    let y_max = (two_l * energy).powf(1.0 / two_l);
    Ok(4.0 * y_max / (2.0 * energy).sqrt() * reduced_period_integral(params.l)?)
}

/// Period law `T(E) = c_l E^(-(l-1)/(2l))` with `c_l = T(1)` precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodLaw {
    pub c_l: f64,
    pub exponent: f64,
}

impl PeriodLaw {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let l = params.l as f64;
        Ok(Self {
            c_l: period_oracle(1.0, params)?,
            exponent: -(l - 1.0) / (2.0 * l),
        })
    }

    pub fn period(&self, energy: f64) -> f64 {
        self.c_l * energy.powf(self.exponent)
    }
}

/// Per-index verdicts of the recurrence and passage-time laws.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    /// `E(t) / log^2(2+t)` over the sampled window.
    pub energy_band: (f64, f64),
    pub energy_window: (f64, f64),
    /// `E_n / log^2(2+n)`.
    pub ledger_band: (f64, f64),
    /// `t_2n log^((l-1)/l)(2+n) / n` for `n >= 1`.
    pub passage_band: (f64, f64),
    /// Smallest `(E_{n+1}-E_n) / exp(-sqrt(2 E_{n+1}))`.
    pub increment_floor: f64,
    /// Smallest `(E_{n+1}-E_n) / exp(-sqrt(2 K E_n))`, `K = 1 + 4l`.
    pub increment_floor_k: f64,
    pub upper_increment_violations: usize,
    pub ratio_violations: usize,
    pub gap_violations: usize,
    pub velocity_violations: usize,
    pub strictly_increasing: bool,
    pub above_floor: bool,
    pub increments: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

impl GrowthReport {
    pub fn energy_spread(&self) -> f64 {
        self.energy_band.1 / self.energy_band.0
    }

    pub fn passage_spread(&self) -> f64 {
        self.passage_band.1 / self.passage_band.0
    }

    /// Indices violating `c exp(-sqrt(2 E_{n+1})) <= E_{n+1} - E_n`.
    pub fn lower_increment_violations(&self, ledger: &EnergyLedger, c: f64) -> usize {
        (0..self.increments.len())
            .filter(|&n| self.increments[n] < c * (-(2.0 * ledger.e_n[n + 1]).sqrt()).exp())
            .count()
    }
}

pub fn increment_upper_bound(l: u32, e_n: f64) -> f64 {
    2.0 * (1.0 / l as f64).sqrt().exp() * (-(2.0 * e_n).sqrt()).exp()
}

/// Fit the growth bands and count violations of the constant-free bounds.
///
/// `t_window` restricts the `E(t)` band (the lower end is clamped to the data).
pub fn growth_report(
    ledger: &EnergyLedger,
    traj: &ClassicalTrajectory,
    t_window: (f64, f64),
) -> Result<GrowthReport> {
    const NEEDED: usize = 50;
    if ledger.len() < NEEDED {
        return Err(Error::InsufficientData {
            needed: NEEDED,
            got: ledger.len(),
        });
    }
    let params = &traj.params;
    let l = params.l;
    let lf = l as f64;
    let log2 = |t: f64| (2.0 + t).ln().powi(2);

    let mut band = (f64::INFINITY, 0.0f64);
    for s in traj.samples.iter().filter(|s| s.t >= t_window.0 && s.t <= t_window.1) {
        let r = s.energy / log2(s.t);
        band = (band.0.min(r), band.1.max(r));
    }
    if !band.0.is_finite() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }

    let e = &ledger.e_n;
    let mut lband = (f64::INFINITY, 0.0f64);
    for (n, &en) in e.iter().enumerate() {
        let r = en / log2(n as f64);
        lband = (lband.0.min(r), lband.1.max(r));
    }

    let pexp = (lf - 1.0) / lf;
    let mut pband = (f64::INFINITY, 0.0f64);
    for (n, &t) in ledger.t_2n.iter().enumerate().skip(1) {
        let nf = n as f64;
        let r = t * (2.0 + nf).ln().powf(pexp) / nf;
        pband = (pband.0.min(r), pband.1.max(r));
    }

    let k_ratio = 1.0 + 4.0 * lf;
    let law = PeriodLaw::new(params)?;
    let mut increments = Vec::with_capacity(e.len() - 1);
    let mut upper_bounds = Vec::with_capacity(e.len() - 1);
    let mut floor = f64::INFINITY;
    let mut floor_k = f64::INFINITY;
    let (mut up_v, mut ratio_v, mut gap_v) = (0, 0, 0);
    let mut increasing = true;
    for n in 0..e.len() - 1 {
        let de = e[n + 1] - e[n];
        let ub = increment_upper_bound(l, e[n]);
        increments.push(de);
        upper_bounds.push(ub);
        if de > ub {
            up_v += 1;
        }
        if de <= 0.0 {
            increasing = false;
        }
        floor = floor.min(de / (-(2.0 * e[n + 1]).sqrt()).exp());
        floor_k = floor_k.min(de / (-(2.0 * k_ratio * e[n]).sqrt()).exp());
        let ratio = e[n + 1] / e[n];
        if !(1.0..=k_ratio).contains(&ratio) {
            ratio_v += 1;
        }
        let gap = ledger.t_2n[n + 1] - ledger.t_2n[n];
        if gap < 0.5 * law.period(e[n + 1]) || gap > law.period(e[n]) {
            gap_v += 1;
        }
    }

    // Velocity bracket on each completed kick window [t_{2n+1}, t_{2n+2}].
    let mut vel_v = 0;
    let evs = &traj.passages;
    let mut cursor = 0usize;
    for w in evs.windows(2) {
        if w[0].boundary != Boundary::Enter {
            continue;
        }
        let (a, b) = (w[0].t, w[1].t);
        let lo = (2.0 * w[0].e_before - 1.0 / lf).max(0.0).sqrt();
        let hi = (2.0 * w[0].e_after).sqrt();
        let slack = 100.0 * traj.tol * hi.max(1.0);
        while cursor < traj.samples.len() && traj.samples[cursor].t < a {
            cursor += 1;
        }
        let mut j = cursor;
        while j < traj.samples.len() && traj.samples[j].t <= b {
            let v = traj.samples[j].ydot;
            if v < lo - slack || v > hi + slack {
                vel_v += 1;
            }
            j += 1;
        }
    }

    Ok(GrowthReport {
        energy_band: band,
        energy_window: t_window,
        ledger_band: lband,
        passage_band: pband,
        increment_floor: floor,
        increment_floor_k: floor_k,
        upper_increment_violations: up_v,
        ratio_violations: ratio_v,
        gap_violations: gap_v,
        velocity_violations: vel_v,
        strictly_increasing: increasing,
        above_floor: e.iter().all(|&v| v > 1.0 / (2.0 * lf)),
        increments,
        upper_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(l: u32) -> ModelParams {
        ModelParams::new(l, 1, 1.0).unwrap()
    }

    #[test]
    fn quartic_period_constant() {
        // 4 int_0^1 du / sqrt(1-u^4) = 4 K(-1) with K the complete elliptic integral.
        let t1 = period_oracle(1.0, &p(2)).unwrap();
        assert_relative_eq!(t1, 4.0 * 1.311_028_777_146_059_9, max_relative = 1e-12);
        assert_relative_eq!(period_oracle(16.0, &p(2)).unwrap() / t1, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn sextic_period_scaling() {
        let params = p(3);
        let t1 = period_oracle(1.0, &params).unwrap();
        for e in [8.0, 64.0] {
            let want = (e as f64).powf(-1.0 / 3.0);
            assert_relative_eq!(period_oracle(e, &params).unwrap() / t1, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn unforced_orbit_is_periodic_with_oracle_period() {
        let params = p(2);
        let e = params.energy_1d(1.0, 0.0);
        let period = period_oracle(e, &params).unwrap();
        let opts = TrajectoryOptions {
            tol: 1e-12,
            forcing: false,
            ..TrajectoryOptions::default()
        };
        let traj = integrate_forced(&params, (1.0, 0.0), period, opts).unwrap();
        let last = traj.samples.last().unwrap();
        assert!((last.y - 1.0).abs() < 1e-8 && last.ydot.abs() < 1e-8);
    }

    #[test]
    fn canonical_start_and_first_events() {
        let params = p(2);
        let traj = integrate_forced(&params, (1.0, 1.0), 60.0, TrajectoryOptions::default()).unwrap();
        assert_eq!(traj.passages[0].n, 0);
        assert_relative_eq!(traj.passages[0].energy, 0.75);
        assert_eq!(beta_of_t(&traj, 0.0).unwrap(), 0.0);
        for w in traj.passages.windows(2) {
            assert!(w[1].t > w[0].t);
            assert_eq!(w[1].n, w[0].n + 1);
        }
        for ev in &traj.passages[1..] {
            assert!(ev.ydot > 0.0);
            let (y, _) = traj.state_at(ev.t).unwrap();
            assert!((y - ev.boundary.level()).abs() < 1e-9);
        }
        let again = detect_passages(&traj).unwrap();
        assert_eq!(again.len(), traj.passages.len());
        for (a, b) in again.iter().zip(&traj.passages) {
            assert_eq!(a.boundary, b.boundary);
            assert!((a.t - b.t).abs() < 1e-10);
        }
        let ledger = energy_ledger(&traj).unwrap();
        assert_relative_eq!(ledger.e_n[0], 0.75);
        assert!(ledger.e_n.windows(2).all(|w| w[1] > w[0]));
        assert!(beta_of_t(&traj, 61.0).is_err());
    }

    #[test]
    fn unforced_passages_are_one_period_apart() {
        let params = p(2);
        let opts = TrajectoryOptions {
            forcing: false,
            ..TrajectoryOptions::default()
        };
        let traj = integrate_forced(&params, (1.0, 1.0), 40.0, opts).unwrap();
        let period = period_oracle(0.75, &params).unwrap();
        let leaves: Vec<f64> = traj
            .passages
            .iter()
            .filter(|e| e.boundary == Boundary::Leave)
            .map(|e| e.t)
            .collect();
        assert!(leaves.len() > 3);
        for w in leaves.windows(2) {
            assert!((w[1] - w[0] - period).abs() < 1e-8);
        }
        let ledger = energy_ledger(&traj).unwrap();
        assert!(ledger.e_n.iter().all(|&e| (e - 0.75).abs() < 1e-8));
    }

    #[test]
    fn small_orbit_has_no_passages() {
        let opts = TrajectoryOptions {
            forcing: false,
            ..TrajectoryOptions::default()
        };
        let traj = integrate_forced(&p(2), (0.5, 0.0), 30.0, opts).unwrap();
        assert!(traj.passages.is_empty());
        assert!(detect_passages(&traj).unwrap().is_empty());
    }

    #[test]
    fn growth_report_needs_data() {
        let traj = integrate_forced(&p(2), (1.0, 1.0), 1.0, TrajectoryOptions::default()).unwrap();
        let ledger = energy_ledger(&traj).unwrap();
        assert!(matches!(
            growth_report(&ledger, &traj, (0.0, 1.0)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn option_validation() {
        let opts = TrajectoryOptions {
            tol: 1e-3,
            ..TrajectoryOptions::default()
        };
        assert!(integrate_forced(&p(2), (1.0, 1.0), 1.0, opts).is_err());
        assert!(integrate_forced(&p(2), (1.0, 1.0), -1.0, TrajectoryOptions::default()).is_err());
    }
}

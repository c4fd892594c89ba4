//! Adaptive Dormand–Prince 8(5,3) integration with a continuous extension of
//! order 7, plus the flat dense-output store used by trajectories and flows.

mod tableau;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use tableau::*;

/// Right-hand side of `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]);
}

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dop853 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    pub safety: f64,
    /// Bounds on `h_new / h`: `1/fac1_inv <= ratio <= fac2`.
    pub fac_min: f64,
    pub fac_max: f64,
}

impl Dop853 {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

impl Default for Dop853 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            h_max: f64::INFINITY,
            max_steps: 200_000_000,
            safety: 0.9,
            fac_min: 0.333,
            fac_max: 6.0,
        }
    }
}

/// Coefficients of the order-7 interpolant on one accepted step.
///
/// `coeffs` holds eight consecutive blocks of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    pub coeffs: Vec<f64>,
}

impl DenseStep {
    pub fn dim(&self) -> usize {
        self.coeffs.len() / 8
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        eval_contd8(&self.coeffs, self.dim(), self.t0, self.h, t, out);
    }
}

#[inline]
fn eval_contd8(c: &[f64], n: usize, t0: f64, h: f64, t: f64, out: &mut [f64]) {
    let s = (t - t0) / h;
    let s1 = 1.0 - s;
    for i in 0..n {
        let conpar = c[4 * n + i] + s * (c[5 * n + i] + s1 * (c[6 * n + i] + s * c[7 * n + i]));
        out[i] = c[i] + s * (c[n + i] + s1 * (c[2 * n + i] + s * (c[3 * n + i] + s1 * conpar)));
    }
}

/// Piecewise order-7 interpolant over consecutive accepted steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseOutput {
    n: usize,
    t0: Vec<f64>,
    h: Vec<f64>,
    coeffs: Vec<f64>,
}

impl DenseOutput {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.t0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t0.is_empty()
    }

    pub fn t_min(&self) -> Option<f64> {
        self.t0.first().copied()
    }

    pub fn t_max(&self) -> Option<f64> {
        match (self.t0.last(), self.h.last()) {
            (Some(t), Some(h)) => Some(t + h),
            _ => None,
        }
    }

    pub fn push(&mut self, step: &DenseStep) {
        debug_assert_eq!(step.dim(), self.n);
        self.t0.push(step.t0);
        self.h.push(step.h);
        self.coeffs.extend_from_slice(&step.coeffs);
    }

    /// Start and length of every stored step.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t0.iter().copied().zip(self.h.iter().copied())
    }

    /// Index of the step covering `t`.
    pub fn locate(&self, t: f64) -> Result<usize> {
        let (lo, hi) = match (self.t_min(), self.t_max()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::DenseOutputUnavailable),
        };
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange {
                t,
                t_min: lo,
                t_max: hi,
            });
        }
        let idx = self.t0.partition_point(|&s| s <= t);
        Ok(idx.saturating_sub(1))
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let i = self.locate(t)?;
        self.eval_in(i, t, out);
        Ok(())
    }

    /// Evaluate using step `i` without searching (t should lie in that step).
    pub fn eval_in(&self, i: usize, t: f64, out: &mut [f64]) {
        let n = self.n;
        eval_contd8(
            &self.coeffs[8 * n * i..8 * n * (i + 1)],
            n,
            self.t0[i],
            self.h[i],
            t,
            out,
        );
    }
}

/// Counters for diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Stateful DOP853 stepper over a borrowed system.
pub struct Integrator<'s, S: OdeSystem> {
    sys: &'s S,
    cfg: Dop853,
    n: usize,
    t: f64,
    h: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    // Stage storage. After an accepted step these hold the stages of that step.
    k: [Vec<f64>; 12],
    y_old: Vec<f64>,
    k1_old: Vec<f64>,
    t_old: f64,
    h_old: f64,
    fac_old: f64,
    last_rejected: bool,
    dense_ready: bool,
    dense: Vec<f64>,
    tmp: Vec<f64>,
    stats: Stats,
}

impl<'s, S: OdeSystem> Integrator<'s, S> {
    pub fn new(sys: &'s S, cfg: Dop853, t0: f64, y0: &[f64]) -> Result<Self> {
        let n = sys.dim();
        if y0.len() != n {
            return Err(crate::error::invalid("y0", "length does not match the system dimension"));
        }
        if !(cfg.rtol > 0.0 && cfg.atol > 0.0) {
            return Err(crate::error::invalid("tol", "tolerances must be positive"));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t0 });
        }
        let mut k1 = vec![0.0; n];
        sys.rhs(t0, y0, &mut k1);
        let mut it = Self {
            sys,
            cfg,
            n,
            t: t0,
            h: 0.0,
            y: y0.to_vec(),
            k1,
            k: core::array::from_fn(|_| vec![0.0; n]),
            y_old: y0.to_vec(),
            k1_old: vec![0.0; n],
            t_old: t0,
            h_old: 0.0,
            fac_old: 1e-4,
            last_rejected: false,
            dense_ready: false,
            dense: vec![0.0; 8 * n],
            tmp: vec![0.0; n],
            stats: Stats {
                evals: 1,
                ..Stats::default()
            },
        };
        it.h = it.initial_step();
        Ok(it)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dydt(&self) -> &[f64] {
        &self.k1
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    /// Start and length of the last accepted step.
    pub fn last_step(&self) -> (f64, f64) {
        (self.t_old, self.h_old)
    }

    pub fn previous_state(&self) -> &[f64] {
        &self.y_old
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.cfg.atol + self.cfg.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.n as f64;
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..self.n {
            let sk = self.cfg.atol + self.cfg.rtol * self.y[i].abs();
            dnf += (self.k1[i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(self.cfg.h_max);
        for i in 0..self.n {
            self.tmp[i] = self.y[i] + h * self.k1[i];
        }
        let (tmp, k2) = (&self.tmp, &mut self.k[1]);
        self.sys.rhs(self.t + h, tmp, k2);
        self.stats.evals += 1;
        let mut der2 = 0.0;
        for i in 0..self.n {
            let sk = self.cfg.atol + self.cfg.rtol * self.y[i].abs();
            der2 += ((self.k[1][i] - self.k1[i]) / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.max((dnf / n).sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(1.0 / 8.0)
        };
        (100.0 * h).min(h1).min(self.cfg.h_max)
    }

    /// Stage combination `y + h * sum_j a_j k_j` into `self.tmp`.
    fn combine(&mut self, h: f64, coeffs: &[(usize, f64)]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for &(j, a) in coeffs {
                let kj = if j == 0 { self.k1[i] } else { self.k[j][i] };
                acc += a * kj;
            }
            self.tmp[i] = self.y[i] + h * acc;
        }
    }

    fn eval_stage(&mut self, slot: usize, t: f64) {
        let (tmp, k) = (&self.tmp, &mut self.k[slot]);
        self.sys.rhs(t, tmp, k);
        self.stats.evals += 1;
    }

    /// Take one accepted step without passing `t_end`.
    ///
    /// Returns `Ok(false)` if `t_end` was already reached.
    pub fn step(&mut self, t_end: f64) -> Result<bool> {
        if self.t >= t_end {
            return Ok(false);
        }
        loop {
            if self.stats.accepted + self.stats.rejected >= self.cfg.max_steps {
                return Err(Error::TooManySteps {
                    t: self.t,
                    max_steps: self.cfg.max_steps,
                });
            }
            let mut h = self.h.min(self.cfg.h_max);
            let remaining = t_end - self.t;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h <= 10.0 * f64::EPSILON * self.t.abs().max(1.0) && !last {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            let t = self.t;
            // Slots: k[1]..k[11] hold stages 2..12 (k[0] unused; k1 is separate).
            self.combine(h, &[(0, A21)]);
            self.eval_stage(1, t + C2 * h);
            self.combine(h, &[(0, A31), (1, A32)]);
            self.eval_stage(2, t + C3 * h);
            self.combine(h, &[(0, A41), (2, A43)]);
            self.eval_stage(3, t + C4 * h);
            self.combine(h, &[(0, A51), (2, A53), (3, A54)]);
            self.eval_stage(4, t + C5 * h);
            self.combine(h, &[(0, A61), (3, A64), (4, A65)]);
            self.eval_stage(5, t + C6 * h);
            self.combine(h, &[(0, A71), (3, A74), (4, A75), (5, A76)]);
            self.eval_stage(6, t + C7 * h);
            self.combine(h, &[(0, A81), (3, A84), (4, A85), (5, A86), (6, A87)]);
            self.eval_stage(7, t + C8 * h);
            self.combine(
                h,
                &[(0, A91), (3, A94), (4, A95), (5, A96), (6, A97), (7, A98)],
            );
            self.eval_stage(8, t + C9 * h);
            self.combine(
                h,
                &[
                    (0, A101),
                    (3, A104),
                    (4, A105),
                    (5, A106),
                    (6, A107),
                    (7, A108),
                    (8, A109),
                ],
            );
            self.eval_stage(9, t + C10 * h);
            self.combine(
                h,
                &[
                    (0, A111),
                    (3, A114),
                    (4, A115),
                    (5, A116),
                    (6, A117),
                    (7, A118),
                    (8, A119),
                    (9, A1110),
                ],
            );
            self.eval_stage(10, t + C11 * h);
            self.combine(
                h,
                &[
                    (0, A121),
                    (3, A124),
                    (4, A125),
                    (5, A126),
                    (6, A127),
                    (7, A128),
                    (8, A129),
                    (9, A1210),
                    (10, A1211),
                ],
            );
            let t_new = if last { t_end } else { t + h };
            self.eval_stage(11, t_new);

            // Stage indices in Hairer's notation: k1 = k1, k6 = k[5], .., k11 = k[10], k12 = k[11].
            let n = self.n;
            let mut err = 0.0;
            let mut err2 = 0.0;
            let mut y_new = core::mem::take(&mut self.y_old);
            for i in 0..n {
                let k = &self.k;
                let incr = B1 * self.k1[i]
                    + B6 * k[5][i]
                    + B7 * k[6][i]
                    + B8 * k[7][i]
                    + B9 * k[8][i]
                    + B10 * k[9][i]
                    + B11 * k[10][i]
                    + B12 * k[11][i];
                y_new[i] = self.y[i] + h * incr;
                let sk = self.scale(self.y[i], y_new[i]);
                let e2 = incr - BHH1 * self.k1[i] - BHH2 * k[8][i] - BHH3 * k[11][i];
                err2 += (e2 / sk).powi(2);
                let e1 = ER1 * self.k1[i]
                    + ER6 * k[5][i]
                    + ER7 * k[6][i]
                    + ER8 * k[7][i]
                    + ER9 * k[8][i]
                    + ER10 * k[9][i]
                    + ER11 * k[10][i]
                    + ER12 * k[11][i];
                err += (e1 / sk).powi(2);
            }
            let mut deno = err + 0.01 * err2;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = h.abs() * err * (1.0 / (deno * n as f64)).sqrt();

            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                self.y_old = y_new;
                if h <= 10.0 * f64::EPSILON * self.t.abs().max(1.0) {
                    return Err(Error::NonFiniteState { t: self.t });
                }
                self.h = h * 0.1;
                self.stats.rejected += 1;
                self.last_rejected = true;
                continue;
            }

            let expo = 1.0 / 8.0;
            let fac11 = err.powf(expo);
            let fac = (fac11 / self.cfg.safety).clamp(1.0 / self.cfg.fac_max, 1.0 / self.cfg.fac_min);
            if err <= 1.0 {
                self.fac_old = err.max(1e-4);
                let mut h_new = h / fac;
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                // Shift state: old <- current, current <- new.
                core::mem::swap(&mut self.y, &mut y_new);
                self.y_old = y_new;
                core::mem::swap(&mut self.k1_old, &mut self.k1);
                self.sys.rhs(t_new, &self.y, &mut self.k1);
                self.stats.evals += 1;
                self.t_old = t;
                self.h_old = t_new - t;
                self.t = t_new;
                if !last {
                    self.h = h_new;
                }
                self.last_rejected = false;
                self.dense_ready = false;
                self.stats.accepted += 1;
                return Ok(true);
            } else {
                self.y_old = y_new;
                self.h = h / (1.0 / self.cfg.fac_min).min(fac11 / self.cfg.safety);
                self.stats.rejected += 1;
                self.last_rejected = true;
            }
        }
    }

    /// Dense-output coefficients of the last accepted step (three extra
    /// function evaluations on first request).
    pub fn dense_step(&mut self) -> DenseStep {
        self.ensure_dense();
        DenseStep {
            t0: self.t_old,
            h: self.h_old,
            coeffs: self.dense.clone(),
        }
    }

    /// Evaluate the interpolant of the last accepted step at `t`.
    pub fn interpolate(&mut self, t: f64, out: &mut [f64]) {
        self.ensure_dense();
        eval_contd8(&self.dense, self.n, self.t_old, self.h_old, t, out);
    }

    pub fn push_dense(&mut self, store: &mut DenseOutput) {
        self.ensure_dense();
        store.t0.push(self.t_old);
        store.h.push(self.h_old);
        store.coeffs.extend_from_slice(&self.dense);
    }

    fn ensure_dense(&mut self) {
        if self.dense_ready {
            return;
        }
        let n = self.n;
        let h = self.h_old;
        let t = self.t_old;
        // Aliases for readability: stage s of the last step.
        // k1_old = k1, k[5] = k6, .., k[10] = k11, k[11] = k12, k1 (current) = k13 = f(t+h, y+h).
        let mut k14 = vec![0.0; n];
        let mut k15 = vec![0.0; n];
        let mut k16 = vec![0.0; n];
        {
            let k = &self.k;
            let k1 = &self.k1_old;
            let k13 = &self.k1;
            for i in 0..n {
                let ydiff = self.y[i] - self.y_old[i];
                let bspl = h * k1[i] - ydiff;
                self.dense[i] = self.y_old[i];
                self.dense[n + i] = ydiff;
                self.dense[2 * n + i] = bspl;
                self.dense[3 * n + i] = ydiff - h * k13[i] - bspl;
                self.dense[4 * n + i] = D41 * k1[i]
                    + D46 * k[5][i]
                    + D47 * k[6][i]
                    + D48 * k[7][i]
                    + D49 * k[8][i]
                    + D410 * k[9][i]
                    + D411 * k[10][i]
                    + D412 * k[11][i];
                self.dense[5 * n + i] = D51 * k1[i]
                    + D56 * k[5][i]
                    + D57 * k[6][i]
                    + D58 * k[7][i]
                    + D59 * k[8][i]
                    + D510 * k[9][i]
                    + D511 * k[10][i]
                    + D512 * k[11][i];
                self.dense[6 * n + i] = D61 * k1[i]
                    + D66 * k[5][i]
                    + D67 * k[6][i]
                    + D68 * k[7][i]
                    + D69 * k[8][i]
                    + D610 * k[9][i]
                    + D611 * k[10][i]
                    + D612 * k[11][i];
                self.dense[7 * n + i] = D71 * k1[i]
                    + D76 * k[5][i]
                    + D77 * k[6][i]
                    + D78 * k[7][i]
                    + D79 * k[8][i]
                    + D710 * k[9][i]
                    + D711 * k[10][i]
                    + D712 * k[11][i];
                self.tmp[i] = self.y_old[i]
                    + h * (A141 * k1[i]
                        + A147 * k[6][i]
                        + A148 * k[7][i]
                        + A149 * k[8][i]
                        + A1410 * k[9][i]
                        + A1411 * k[10][i]
                        + A1412 * k[11][i]
                        + A1413 * k13[i]);
            }
        }
        self.sys.rhs(t + C14 * h, &self.tmp, &mut k14);
        {
            let k = &self.k;
            let k1 = &self.k1_old;
            let k13 = &self.k1;
            for i in 0..n {
                self.tmp[i] = self.y_old[i]
                    + h * (A151 * k1[i]
                        + A156 * k[5][i]
                        + A157 * k[6][i]
                        + A158 * k[7][i]
                        + A1511 * k[10][i]
                        + A1512 * k[11][i]
                        + A1513 * k13[i]
                        + A1514 * k14[i]);
            }
        }
        self.sys.rhs(t + C15 * h, &self.tmp, &mut k15);
        {
            let k = &self.k;
            let k1 = &self.k1_old;
            let k13 = &self.k1;
            for i in 0..n {
                self.tmp[i] = self.y_old[i]
                    + h * (A161 * k1[i]
                        + A166 * k[5][i]
                        + A167 * k[6][i]
                        + A168 * k[7][i]
                        + A169 * k[8][i]
                        + A1613 * k13[i]
                        + A1614 * k14[i]
                        + A1615 * k15[i]);
            }
        }
        self.sys.rhs(t + C16 * h, &self.tmp, &mut k16);
        self.stats.evals += 3;
        let k13 = &self.k1;
        for i in 0..n {
            self.dense[4 * n + i] =
                h * (self.dense[4 * n + i] + D413 * k13[i] + D414 * k14[i] + D415 * k15[i] + D416 * k16[i]);
            self.dense[5 * n + i] =
                h * (self.dense[5 * n + i] + D513 * k13[i] + D514 * k14[i] + D515 * k15[i] + D516 * k16[i]);
            self.dense[6 * n + i] =
                h * (self.dense[6 * n + i] + D613 * k13[i] + D614 * k14[i] + D615 * k15[i] + D616 * k16[i]);
            self.dense[7 * n + i] =
                h * (self.dense[7 * n + i] + D713 * k13[i] + D714 * k14[i] + D715 * k15[i] + D716 * k16[i]);
        }
        self.dense_ready = true;
    }
}

/// Integrate from `t0` to `t_end` keeping the full dense output.
pub fn solve_dense<S: OdeSystem>(
    sys: &S,
    cfg: Dop853,
    t0: f64,
    y0: &[f64],
    t_end: f64,
) -> Result<(Vec<f64>, DenseOutput)> {
    let mut it = Integrator::new(sys, cfg, t0, y0)?;
    let mut dense = DenseOutput::new(sys.dim());
    while it.step(t_end)? {
        it.push_dense(&mut dense);
    }
    Ok((it.y().to_vec(), dense))
}

//! Linearised flow `F_t` along a classical orbit: `dF/dt = J M_t F`, `F_0 = I`.
//!
//! Matrices act on `(q_1..q_d, p_1..p_d)`. Some texts order the pair as
//! `(p, q)`; [`to_momentum_first`] converts.

use alloc::vec;
use alloc::vec::Vec;

use crate::classical::ClassicalTrajectory;
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::model::{ModelParams, PhasePoint};
use crate::ode::{DenseOutput, Dop853, Integrator, OdeSystem};

/// Which coefficient multiplies `q^(2l-2)` in the position block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianConvention {
    /// `(2l-1) q^(2l-2)`, the actual second derivative of the trap.
    #[default]
    Exact,
    /// `(2l-2) q^(2l-2)`, kept for side-by-side comparison.
    Literal,
}

impl HessianConvention {
    pub fn curvature(self, params: &ModelParams, q: f64) -> f64 {
        match self {
            HessianConvention::Exact => params.trap_curvature(q),
            HessianConvention::Literal => {
                let l = params.l as i32;
                (2 * l - 2) as f64 * q.powi(2 * l - 2)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HessianConvention::Exact => "exact",
            HessianConvention::Literal => "literal",
        }
    }
}

/// Second derivative of `|p|^2/2 + W_l(q)` at `z`.
pub fn hessian_m(z: &PhasePoint, params: &ModelParams) -> Mat {
    hessian_m_with(z, params, HessianConvention::Exact)
}

pub fn hessian_m_with(z: &PhasePoint, params: &ModelParams, conv: HessianConvention) -> Mat {
    let d = z.dim();
    let mut m = Mat::zeros(2 * d);
    for j in 0..d {
        m.set(j, j, conv.curvature(params, z.q[j]));
        m.set(d + j, d + j, 1.0);
    }
    m
}

/// Standard symplectic form on `(q, p)`.
pub fn symplectic_j(d: usize) -> Mat {
    let mut j = Mat::zeros(2 * d);
    for i in 0..d {
        j.set(i, d + i, 1.0);
        j.set(d + i, i, -1.0);
    }
    j
}

/// Reorder a `(q, p)` matrix to `(p, q)`.
pub fn to_momentum_first(m: &Mat) -> Mat {
    let n = m.n;
    let d = n / 2;
    let perm = |i: usize| if i < d { i + d } else { i - d };
    let mut out = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out.set(perm(i), perm(j), m.get(i, j));
        }
    }
    out
}

/// `|F^T J F - J|` measured in the max-entry norm.
pub fn symplectic_defect(f: &Mat) -> f64 {
    let j = symplectic_j(f.n / 2);
    f.transpose().mul(&j).mul(f).sub(&j).max_abs()
}

/// Variational equation with a prescribed curvature on the first axis and
/// zero curvature on the others.
struct Variational<'a> {
    d: usize,
    curvature: &'a dyn Fn(f64) -> f64,
}

impl OdeSystem for Variational<'_> {
    fn dim(&self) -> usize {
        4 * self.d * self.d
    }

    fn rhs(&self, t: f64, f: &[f64], df: &mut [f64]) {
        // rows 0..d:  dF_q = F_p;  rows d..2d: dF_p = -Upsilon F_q
        let d = self.d;
        let n = 2 * d;
        let ups = (self.curvature)(t);
        for j in 0..n {
            for i in 0..d {
                df[i * n + j] = f[(d + i) * n + j];
            }
            df[d * n + j] = -ups * f[j];
            for i in 1..d {
                df[(d + i) * n + j] = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowMatrixPath {
    pub d: usize,
    pub convention: HessianConvention,
    pub times: Vec<f64>,
    pub matrices: Vec<Mat>,
    pub op_norms: Vec<f64>,
    /// Running `sup_{s <= t} |F_s|` at each sample, interior maxima included.
    pub sup_norms: Vec<f64>,
    /// Time and value of the largest `|F|` inside the step ending at each sample.
    pub step_peaks: Vec<(f64, f64)>,
    pub dets: Vec<f64>,
    pub max_symplectic_defect: f64,
    pub dense: DenseOutput,
}

impl FlowMatrixPath {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn last(&self) -> &Mat {
        self.matrices.last().expect("path has at least one sample")
    }

    /// `F_t` from the interpolant.
    pub fn at(&self, t: f64) -> Result<Mat> {
        if t == self.t_start() {
            return Ok(self.matrices[0].clone());
        }
        let n = 2 * self.d;
        let mut a = vec![0.0; n * n];
        self.dense.eval(t, &mut a)?;
        Ok(Mat { n, a })
    }

    pub fn max_det_defect(&self) -> f64 {
        self.dets.iter().fold(0.0f64, |m, d| m.max((d - 1.0).abs()))
    }
}

/// Integrate `F` along `traj` on `[0, t_max]` starting from the identity.
pub fn integrate_f(
    traj: &ClassicalTrajectory,
    t_max: f64,
    tol: f64,
    convention: HessianConvention,
) -> Result<FlowMatrixPath> {
    let d = traj.params.d;
    integrate_f_from(traj, 0.0, &Mat::identity(2 * d), t_max, tol, convention)
}

/// Integrate `F` along `traj` on `[t0, t1]` from an arbitrary initial matrix.
pub fn integrate_f_from(
    traj: &ClassicalTrajectory,
    t0: f64,
    f0: &Mat,
    t1: f64,
    tol: f64,
    convention: HessianConvention,
) -> Result<FlowMatrixPath> {
    let dense = traj.dense()?;
    let (lo, hi) = (dense.t_min().unwrap_or(0.0), dense.t_max().unwrap_or(0.0));
    for t in [t0, t1] {
        if t < lo || t > hi {
            return Err(Error::OutOfRange { t, t_min: lo, t_max: hi });
        }
    }
    let params = traj.params;
    let curvature = move |t: f64| {
        let mut s = [0.0; 2];
        // t stays inside [t0, t1] which was checked above.
        let _ = dense.eval(t.clamp(lo, hi), &mut s);
        convention.curvature(&params, s[0])
    };
    integrate_with_curvature(params.d, &curvature, t0, f0, t1, tol, convention)
}

/// Integrate `F` for an arbitrary curvature history on the first axis.
pub fn integrate_with_curvature(
    d: usize,
    curvature: &dyn Fn(f64) -> f64,
    t0: f64,
    f0: &Mat,
    t1: f64,
    tol: f64,
    convention: HessianConvention,
) -> Result<FlowMatrixPath> {
    if f0.n != 2 * d {
        return Err(invalid("f0", "initial matrix must be 2d x 2d"));
    }
    if !(t1 > t0) {
        return Err(invalid("t_max", "must exceed the start time"));
    }
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(invalid("tol", "must lie in (0, 1e-6]"));
    }
    let sys = Variational { d, curvature };
    let mut it = Integrator::new(&sys, Dop853::with_tol(tol), t0, &f0.a)?;
    let mut path = FlowMatrixPath {
        d,
        convention,
        times: vec![t0],
        matrices: vec![f0.clone()],
        op_norms: vec![f0.op_norm()],
        sup_norms: vec![f0.op_norm()],
        step_peaks: vec![(t0, f0.op_norm())],
        dets: vec![f0.det()],
        max_symplectic_defect: symplectic_defect(f0),
        dense: DenseOutput::new(4 * d * d),
    };
    let base_det = f0.det();
    while it.step(t1)? {
        it.push_dense(&mut path.dense);
        let m = Mat {
            n: 2 * d,
            a: it.y().to_vec(),
        };
        let det = m.det();
        let defect = (det - base_det).abs();
        if defect > 1e-6 {
            return Err(Error::SymplecticityLoss { t: it.t(), defect });
        }
        let norm = m.op_norm();
        let t_prev = *path.times.last().expect("path has a start sample");
        let peak = step_peak(&path.dense, path.dense.len() - 1, 2 * d, t_prev, it.t(), norm);
        let sup = path.sup_norms.last().copied().unwrap_or(0.0).max(peak.1);
        path.max_symplectic_defect = path.max_symplectic_defect.max(symplectic_defect(&m));
        path.times.push(it.t());
        path.op_norms.push(norm);
        path.sup_norms.push(sup);
        path.step_peaks.push(peak);
        path.dets.push(det);
        path.matrices.push(m);
    }
    Ok(path)
}

/// Largest `|F|` on dense step `i` covering `[a, b]`: a scan over 16
/// subintervals followed by a golden-section refinement of the best node.
fn step_peak(dense: &DenseOutput, i: usize, n: usize, a: f64, b: f64, end_norm: f64) -> (f64, f64) {
    const NODES: usize = 16;
    let mut buf = vec![0.0; n * n];
    let mut norm_at = |t: f64| {
        dense.eval_in(i, t, &mut buf);
        Mat { n, a: buf.clone() }.op_norm()
    };
    let h = (b - a) / NODES as f64;
    let mut best = (b, end_norm);
    let mut best_j = NODES;
    for j in 1..NODES {
        let t = a + j as f64 * h;
        let v = norm_at(t);
        if v > best.1 {
            best = (t, v);
            best_j = j;
        }
    }
    if best_j == NODES {
        return best;
    }
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    let mut x1 = hi - gr * (hi - lo);
    let mut x2 = lo + gr * (hi - lo);
    let (mut f1, mut f2) = (norm_at(x1), norm_at(x2));
    for _ in 0..40 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = norm_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = norm_at(x2);
        }
    }
    for (t, v) in [(x1, f1), (x2, f2)] {
        if v > best.1 {
            best = (t, v);
        }
    }
    best
}

/// `|F|_T = sup_{0 <= t <= T} |F_t|`.
///
/// Inside a step the interpolated norm is capped by that step's peak, so the
/// result is nondecreasing in `T`.
pub fn sup_norm_f(path: &FlowMatrixPath, t: f64) -> Result<f64> {
    let (lo, hi) = (path.t_start(), path.t_end());
    if t < lo || t > hi {
        return Err(Error::OutOfRange { t, t_min: lo, t_max: hi });
    }
    let k = path.times.partition_point(|&s| s <= t);
    let mut sup = path.sup_norms[k.saturating_sub(1)];
    if k < path.times.len() && t > path.times[k - 1] {
        let (t_peak, v_peak) = path.step_peaks[k];
        let inside = if t_peak <= t { v_peak } else { path.at(t)?.op_norm().min(v_peak) };
        sup = sup.max(inside);
    }
    Ok(sup)
}

/// Largest `T` in the path with `sqrt(hbar) |F|_T <= kappa`.
pub fn ehrenfest_horizon(path: &FlowMatrixPath, hbar: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(invalid("kappa", "must lie in (0, 1]"));
    }
    if !(hbar > 0.0) {
        return Err(invalid("hbar", "must be positive"));
    }
    let limit = kappa / hbar.sqrt();
    // Tiny relative slack so that sqrt(hbar)*1 == kappa counts as satisfied.
    let over = |v: f64| v > limit * (1.0 + 1e-12);
    let Some(k) = path.sup_norms.iter().position(|&s| over(s)) else {
        return Err(Error::HorizonExceedsPath { t_end: path.t_end() });
    };
    if k == 0 {
        return Ok(path.t_start());
    }
    let (mut a, mut b) = (path.times[k - 1], path.step_peaks[k].0);
    for _ in 0..60 {
        let c = 0.5 * (a + b);
        if over(sup_norm_f(path, c)?) {
            b = c;
        } else {
            a = c;
        }
    }
    Ok(a)
}

/// Smallest `c` with `|F|_T <= exp(c T log^sigma(2+T))` on the given times.
pub fn flow_bound_exponent(path: &FlowMatrixPath, times: &[f64], sigma: f64) -> Result<f64> {
    let mut c = 0.0f64;
    for &t in times {
        if t <= 0.0 {
            continue;
        }
        let s = sup_norm_f(path, t)?;
        c = c.max(s.ln() / (t * (2.0 + t).ln().powf(sigma)));
    }
    Ok(c)
}

/// Exponent `2 (1 - 1/l)` of the logarithm in the flow bound.
pub fn flow_log_power(l: u32) -> f64 {
    2.0 * (1.0 - 1.0 / l as f64)
}

//! Squeezed Gaussian wave packets transported in closed form by the
//! quadratic propagator, and phase-space expectations through Gauss–Hermite
//! quadrature.
//!
//! A state is stored as
//!
//! ```text
//! psi(x) = a exp( (i/hbar) [ (x-q).Theta.(x-q)/2 + p.(x-q) + p.q/2 + S ] )
//! ```
//!
//! so the coherent state `exp(i p.(x - q/2)/hbar) phi_0(x - q)` has `Theta = i`,
//! `S = 0` and `a = (pi hbar)^(-d/4)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use num_complex::Complex64;

use crate::classical::ClassicalTrajectory;
use crate::error::{invalid, Error, Result};
use crate::flow::FlowMatrixPath;
use crate::linalg::{complex_det, complex_inverse, complex_mul, symmetric_eigenvalues, Mat};
use crate::model::{forcing_f, potential_w, ModelParams, PhasePoint};
use crate::quadrature::{gauss_legendre, QuadratureRule};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub center: PhasePoint,
    /// Complex symmetric `d x d` width, row-major.
    pub width: Vec<Complex64>,
    /// Phase `S` in action units.
    pub phase: f64,
    pub hbar: f64,
    /// `|a|`.
    pub norm_factor: f64,
    /// `arg a`, continued along the path.
    pub prefactor_arg: f64,
    /// Symplectic matrix mapping the initial coherent frame to this state.
    pub frame: Mat,
}

/// `phi_z = T(z) phi_0` with the Weyl-symmetric phase convention.
pub fn coherent_state(z: &PhasePoint, hbar: f64) -> Result<GaussianState> {
    if !(hbar > 0.0 && hbar <= 1.0) {
        return Err(invalid("hbar", "must lie in (0, 1]"));
    }
    let d = z.dim();
    let mut width = vec![Complex64::new(0.0, 0.0); d * d];
    for i in 0..d {
        width[i * d + i] = Complex64::new(0.0, 1.0);
    }
    Ok(GaussianState {
        center: z.clone(),
        width,
        phase: 0.0,
        hbar,
        norm_factor: (PI * hbar).powf(-(d as f64) / 4.0),
        prefactor_arg: 0.0,
        frame: Mat::identity(2 * d),
    })
}

impl GaussianState {
    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn prefactor(&self) -> Complex64 {
        Complex64::from_polar(self.norm_factor, self.prefactor_arg)
    }

    /// Real part of the width.
    pub fn width_real(&self) -> Mat {
        let d = self.dim();
        Mat {
            n: d,
            a: self.width.iter().map(|c| c.re).collect(),
        }
    }

    /// Imaginary part of the width.
    pub fn width_imag(&self) -> Mat {
        let d = self.dim();
        Mat {
            n: d,
            a: self.width.iter().map(|c| c.im).collect(),
        }
    }

    /// Smallest eigenvalue of `Im Theta`.
    pub fn min_width_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.width_imag())
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_width_symmetric(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..i).all(|j| (self.width[i * d + j] - self.width[j * d + i]).norm() <= tol))
    }

    /// Closed-form squared `L^2` norm.
    pub fn norm_sq(&self) -> f64 {
        let d = self.dim() as f64;
        let det_im = self.width_imag().det();
        self.norm_factor.powi(2) * (PI * self.hbar).powf(d / 2.0) / det_im.sqrt()
    }

    /// Pointwise value at `x` (length `d`).
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let d = self.dim();
        let q = &self.center.q;
        let p = &self.center.p;
        let mut quad = Complex64::new(0.0, 0.0);
        let mut lin = 0.0;
        let mut pq = 0.0;
        for i in 0..d {
            let yi = x[i] - q[i];
            for j in 0..d {
                quad += self.width[i * d + j] * (yi * (x[j] - q[j]));
            }
            lin += p[i] * yi;
            pq += p[i] * q[i];
        }
        let exponent = Complex64::new(0.0, 1.0 / self.hbar) * (0.5 * quad + lin + 0.5 * pq + self.phase);
        self.prefactor() * exponent.exp()
    }

    /// Values on a one-dimensional grid.
    pub fn sample_1d(&self, xs: &[f64]) -> Vec<Complex64> {
        xs.iter().map(|&x| self.eval(&[x])).collect()
    }
}

/// Closed-form quadratic propagation of the coherent state at the start of a
/// trajectory, driven by `(z_t, F_t)`.
pub struct GaussianPropagator<'a> {
    traj: &'a ClassicalTrajectory,
    path: &'a FlowMatrixPath,
    hbar: f64,
    /// Phase at the start of each trajectory interpolation step.
    phase_knots: Vec<f64>,
    step_starts: Vec<f64>,
    /// Continued `arg det Q` at each path sample.
    det_args: Vec<f64>,
    gl: (Vec<f64>, Vec<f64>),
}

/// `1/2 (p q' - q p') - H(t, z)` on the first axis, `H = p^2/2 + W - beta q`.
fn phase_rate(params: &ModelParams, forcing: bool, y: f64, v: f64) -> f64 {
    let beta = if forcing { forcing_f(y, v, params) } else { 0.0 };
    let qdot = v;
    let pdot = -params.trap_gradient(y) + beta;
    let h = 0.5 * v * v + potential_w(&[y], params) - beta * y;
    0.5 * (v * qdot - y * pdot) - h
}

/// `Q = A + iB` for `F = [[A, B], [C, D]]`.
fn q_block(f: &Mat) -> (Vec<Complex64>, Vec<Complex64>) {
    let d = f.n / 2;
    let mut q = vec![Complex64::new(0.0, 0.0); d * d];
    let mut p = vec![Complex64::new(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            q[i * d + j] = Complex64::new(f.get(i, j), f.get(i, d + j));
            p[i * d + j] = Complex64::new(f.get(d + i, j), f.get(d + i, d + j));
        }
    }
    (q, p)
}

/// `Theta = (C + iD)(A + iB)^-1` and `det(A + iB)` for `F = [[A, B], [C, D]]`.
pub fn width_from_flow(f: &Mat) -> Option<(Vec<Complex64>, Complex64)> {
    let d = f.n / 2;
    let (q, p) = q_block(f);
    let qinv = complex_inverse(d, &q)?;
    let mut width = complex_mul(d, &p, &qinv);
    // Symmetrise away rounding.
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (width[i * d + j] + width[j * d + i]);
            width[i * d + j] = s;
            width[j * d + i] = s;
        }
    }
    Some((width, complex_det(d, &q)))
}

fn unwrap_near(reference: f64, raw: f64) -> f64 {
    let k = ((reference - raw) / TAU).round();
    raw + k * TAU
}

impl<'a> GaussianPropagator<'a> {
    pub fn new(traj: &'a ClassicalTrajectory, path: &'a FlowMatrixPath, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar <= 1.0) {
            return Err(invalid("hbar", "must lie in (0, 1]"));
        }
        if path.d != traj.params.d {
            return Err(invalid("path", "dimension differs from the trajectory"));
        }
        if path.t_start() != 0.0 {
            return Err(invalid("path", "must start at t = 0"));
        }
        let dense = traj.dense()?;
        let gl = gauss_legendre(16);
        let mut phase_knots = Vec::with_capacity(dense.len() + 1);
        let mut step_starts = Vec::with_capacity(dense.len() + 1);
        let mut acc = 0.0;
        let mut buf = [0.0; 2];
        for (i, (t0, h)) in dense.steps().enumerate() {
            phase_knots.push(acc);
            step_starts.push(t0);
            for (x, w) in gl.0.iter().zip(&gl.1) {
                let t = t0 + 0.5 * h * (x + 1.0);
                dense.eval_in(i, t, &mut buf);
                acc += 0.5 * h * w * phase_rate(&traj.params, traj.forcing, buf[0], buf[1]);
            }
        }
        phase_knots.push(acc);
        step_starts.push(dense.t_max().unwrap_or(0.0));

        let d = path.d;
        let mut det_args = Vec::with_capacity(path.times.len());
        let mut prev = 0.0;
        for m in &path.matrices {
            let (q, _) = q_block(m);
            let raw = complex_det(d, &q).arg();
            prev = unwrap_near(prev, raw);
            det_args.push(prev);
        }
        Ok(Self {
            traj,
            path,
            hbar,
            phase_knots,
            step_starts,
            det_args,
            gl,
        })
    }

    /// Accumulated phase `S_t`.
    pub fn phase_at(&self, t: f64) -> Result<f64> {
        let dense = self.traj.dense()?;
        let i = dense.locate(t)?;
        let t0 = self.step_starts[i];
        let mut acc = self.phase_knots[i];
        let h = t - t0;
        if h > 0.0 {
            let mut buf = [0.0; 2];
            for (x, w) in self.gl.0.iter().zip(&self.gl.1) {
                let s = t0 + 0.5 * h * (x + 1.0);
                dense.eval_in(i, s, &mut buf);
                acc += 0.5 * h * w * phase_rate(&self.traj.params, self.traj.forcing, buf[0], buf[1]);
            }
        }
        Ok(acc)
    }

    /// `U_2(t, 0) phi_{z_0}`.
    pub fn state_at(&self, t: f64) -> Result<GaussianState> {
        let d = self.path.d;
        let f = self.path.at(t)?;
        let z = self.traj.phase_point(t)?;
        let (width, det_q) = width_from_flow(&f).ok_or(Error::SingularWidth { t })?;
        let k = self.path.times.partition_point(|&s| s <= t).saturating_sub(1);
        let arg = unwrap_near(self.det_args[k], det_q.arg());
        let norm_factor = (PI * self.hbar).powf(-(d as f64) / 4.0) / det_q.norm().sqrt();
        Ok(GaussianState {
            center: z,
            width,
            phase: self.phase_at(t)?,
            hbar: self.hbar,
            norm_factor,
            prefactor_arg: -0.5 * arg,
            frame: f,
        })
    }
}

/// Quadratic evolution of `state0` to time `t` along `(traj, path)`.
pub fn evolve_gaussian(
    state0: &GaussianState,
    traj: &ClassicalTrajectory,
    path: &FlowMatrixPath,
    t: f64,
) -> Result<GaussianState> {
    let (y0, v0) = traj.state_at(0.0)?;
    let z0 = PhasePoint::on_first_axis(traj.params.d, y0, v0);
    let d = state0.dim();
    let coherent = (0..d).all(|i| {
        (0..d).all(|j| {
            let want = if i == j { Complex64::new(0.0, 1.0) } else { Complex64::new(0.0, 0.0) };
            (state0.width[i * d + j] - want).norm() < 1e-14
        })
    });
    let same_centre = state0.center.q.iter().zip(&z0.q).all(|(a, b)| (a - b).abs() < 1e-12)
        && state0.center.p.iter().zip(&z0.p).all(|(a, b)| (a - b).abs() < 1e-12);
    if !(coherent && same_centre && state0.phase == 0.0) {
        return Err(invalid("state0", "must be the coherent state at the trajectory's initial point"));
    }
    if t == 0.0 {
        return Ok(state0.clone());
    }
    GaussianPropagator::new(traj, path, state0.hbar)?.state_at(t)
}

/// `pi^-d int a(sqrt(hbar) F zeta + z) exp(-|zeta|^2) d zeta` on the tensor rule.
pub fn expectation_observable(
    observable: &dyn Fn(&[f64], &[f64]) -> f64,
    center: &PhasePoint,
    frame: &Mat,
    hbar: f64,
    rule: &QuadratureRule,
) -> f64 {
    let d = center.dim();
    let n = 2 * d;
    let sh = hbar.sqrt();
    let mut q = vec![0.0; d];
    let mut p = vec![0.0; d];
    let mut acc = 0.0;
    rule.for_each_tensor(n, |zeta, w| {
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += frame.get(i, j) * zeta[j];
            }
            let v = sh * s;
            if i < d {
                q[i] = center.q[i] + v;
            } else {
                p[i - d] = center.p[i - d] + v;
            }
        }
        acc += w * observable(&q, &p);
    });
    acc / PI.powi(d as i32)
}

impl GaussianState {
    /// Expectation of a phase-space symbol in this state.
    pub fn expectation(&self, observable: &dyn Fn(&[f64], &[f64]) -> f64, rule: &QuadratureRule) -> f64 {
        expectation_observable(observable, &self.center, &self.frame, self.hbar, rule)
    }
}

/// `C1~ [log(2+t)]^r`.
pub fn predicted_sobolev_lower(t: f64, r: u32, c_tilde_1: f64) -> f64 {
    c_tilde_1 * (2.0 + t).ln().powi(r as i32)
}

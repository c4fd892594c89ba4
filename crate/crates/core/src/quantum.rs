//! Split-step Fourier propagation of the one-dimensional semiclassical
//! Schrödinger equation and of its quadratic comparison equation, with
//! spectral Sobolev norms `|| H_l^(r/2) psi ||`, `H_l = 1 - hbar^2 Laplacian + W_l`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

use crate::classical::{beta_of_t, ClassicalTrajectory};
use crate::error::{invalid, Error, Result};
use crate::fft::Fft;
use crate::flow::{sup_norm_f, FlowMatrixPath, HessianConvention};
use crate::gaussian::coherent_state;
use crate::model::{ModelParams, PhasePoint};

/// Periodic grid on `[x_min, x_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub dx: f64,
    pub hbar: f64,
    /// Angular wavenumbers in FFT order.
    pub k: Vec<f64>,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize, hbar: f64) -> Result<Self> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(invalid("grid", "need finite x_min < x_max"));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(invalid("grid", "N must be a power of two >= 4"));
        }
        if !(hbar > 0.0 && hbar <= 1.0) {
            return Err(invalid("hbar", "must lie in (0, 1]"));
        }
        let len = x_max - x_min;
        let dk = 2.0 * PI / len;
        let k = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                m * dk
            })
            .collect();
        Ok(Self {
            x_min,
            x_max,
            n,
            dx: len / n as f64,
            hbar,
            k,
        })
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Nyquist wavenumber `pi / dx`.
    pub fn k_max(&self) -> f64 {
        PI / self.dx
    }

    /// Largest momentum resolved with `c_res` of a wavelength per cell.
    pub fn resolved_momentum(&self, c_res: f64) -> f64 {
        c_res * 2.0 * PI * self.hbar / self.dx
    }
}

/// Sizing factors for [`init_grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSafety {
    /// `dx <= c_res 2 pi hbar / p_max`.
    pub c_res: f64,
    /// Packet width inflation: the buffer is `6 sqrt(hbar) inflation`.
    pub inflation: f64,
    /// Relative head-room on the maximal energy.
    pub energy_margin: f64,
    pub n_cap: usize,
}

impl Default for GridSafety {
    fn default() -> Self {
        Self {
            c_res: 0.125,
            inflation: 2.0,
            energy_margin: 0.1,
            n_cap: 1 << 20,
        }
    }
}

/// Turning point `(2l E)^(1/2l)` of the trap.
pub fn turning_point(l: u32, energy: f64) -> f64 {
    let two_l = 2.0 * l as f64;
    (two_l * energy.max(0.0)).powf(1.0 / two_l)
}

/// Sizing from an energy ceiling, the core of [`init_grid`].
pub fn grid_for_energy(params: &ModelParams, e_max: f64, safety: &GridSafety) -> Result<Grid> {
    if !(safety.c_res > 0.0 && safety.inflation >= 1.0 && safety.energy_margin >= 0.0) {
        return Err(invalid("safety", "need c_res > 0, inflation >= 1, energy_margin >= 0"));
    }
    if !(e_max > 0.0 && e_max.is_finite()) {
        return Err(invalid("e_max", "must be positive and finite"));
    }
    let hbar = params.hbar;
    let e = e_max * (1.0 + safety.energy_margin);
    let buffer = 6.0 * hbar.sqrt() * safety.inflation;
    let x_max = turning_point(params.l, e) + buffer;
    let p_max = (2.0 * e).sqrt() + buffer;
    let dx_req = safety.c_res * 2.0 * PI * hbar / p_max;
    let needed = (2.0 * x_max / dx_req).ceil() as usize;
    let n = needed.max(4).next_power_of_two();
    if n > safety.n_cap {
        return Err(Error::GridTooLarge {
            needed: n,
            cap: safety.n_cap,
        });
    }
    Grid::new(-x_max, x_max, n, hbar)
}

/// Grid covering the excursion of `traj` on `[0, t_end]`.
pub fn init_grid(params: &ModelParams, traj: &ClassicalTrajectory, t_end: f64, safety: &GridSafety) -> Result<Grid> {
    if t_end > traj.t_max || t_end < 0.0 {
        return Err(Error::OutOfRange {
            t: t_end,
            t_min: 0.0,
            t_max: traj.t_max,
        });
    }
    let mut e_max = traj.energy_at(0.0)?.max(traj.energy_at(t_end)?);
    for s in traj.samples.iter().take_while(|s| s.t <= t_end) {
        e_max = e_max.max(s.energy);
    }
    grid_for_energy(params, e_max, safety)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub grid: Arc<Grid>,
    pub amplitudes: Vec<Complex64>,
    pub t: f64,
}

impl WaveFunction {
    pub fn zeros(grid: Arc<Grid>, t: f64) -> Self {
        let n = grid.n;
        Self {
            grid,
            amplitudes: vec![Complex64::new(0.0, 0.0); n],
            t,
        }
    }

    pub fn from_fn(grid: Arc<Grid>, t: f64, f: impl Fn(f64) -> Complex64) -> Self {
        let amplitudes = (0..grid.n).map(|j| f(grid.x(j))).collect();
        Self { grid, amplitudes, t }
    }

    /// `<self, other> = dx sum conj(self) other`.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        let s: Complex64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.grid.dx
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.dx * self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sub(&self, other: &WaveFunction) -> WaveFunction {
        WaveFunction {
            grid: self.grid.clone(),
            amplitudes: self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a - b).collect(),
            t: self.t,
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.amplitudes {
            *a *= s;
        }
    }

    pub fn mean_position(&self) -> f64 {
        let g = &self.grid;
        g.dx * self.amplitudes.iter().enumerate().map(|(j, a)| g.x(j) * a.norm_sqr()).sum::<f64>() / self.norm_sq()
    }

    /// `<-i hbar d/dx>` from the spectrum.
    pub fn mean_momentum(&self, fft: &Fft) -> f64 {
        let mut spec = self.amplitudes.clone();
        fft.forward(&mut spec);
        let g = &self.grid;
        let total: f64 = spec.iter().map(|a| a.norm_sqr()).sum();
        g.hbar * spec.iter().zip(&g.k).map(|(a, k)| k * a.norm_sqr()).sum::<f64>() / total
    }

    /// Fraction of the `L^2` norm carried by the top tenth of `|k|`.
    pub fn spectral_tail(&self, fft: &Fft) -> f64 {
        let mut spec = self.amplitudes.clone();
        fft.forward(&mut spec);
        spectrum_tail(&spec, &self.grid)
    }

    /// Probability in the outer 5% of the domain on each side.
    pub fn edge_mass(&self) -> f64 {
        let g = &self.grid;
        let band = (g.n / 20).max(1);
        let edge: f64 = self.amplitudes[..band]
            .iter()
            .chain(&self.amplitudes[g.n - band..])
            .map(|a| a.norm_sqr())
            .sum();
        edge * g.dx / self.norm_sq()
    }
}

fn spectrum_tail(spec: &[Complex64], grid: &Grid) -> f64 {
    let cut = 0.9 * grid.k_max();
    let mut total = 0.0;
    let mut tail = 0.0;
    for (a, k) in spec.iter().zip(&grid.k) {
        let w = a.norm_sqr();
        total += w;
        if k.abs() >= cut {
            tail += w;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        (tail / total).sqrt()
    }
}

/// Grid samples of `phi_z`, same phase convention as the closed-form state.
pub fn sample_coherent(z: &PhasePoint, hbar: f64, grid: Arc<Grid>) -> Result<WaveFunction> {
    if z.dim() != 1 {
        return Err(invalid("z", "the grid solver is one-dimensional"));
    }
    let lo = grid.x_min + 6.0 * hbar.sqrt();
    let hi = grid.x_max - 6.0 * hbar.sqrt();
    if !(z.q[0] >= lo && z.q[0] <= hi) {
        return Err(Error::CenterOutOfDomain { q: z.q[0], lo, hi });
    }
    let g = coherent_state(z, hbar)?;
    Ok(WaveFunction::from_fn(grid, 0.0, |x| g.eval(&[x])))
}

/// Time-splitting composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplittingScheme {
    /// Second-order potential-kinetic-potential splitting.
    #[default]
    Strang,
    /// Fourth-order triple-jump composition of Strang steps.
    Yoshida4,
}

impl SplittingScheme {
    fn substeps(self) -> &'static [f64] {
        const CBRT2: f64 = 1.259_921_049_894_873_2;
        const W1: f64 = 1.0 / (2.0 - CBRT2);
        const W0: f64 = -CBRT2 / (2.0 - CBRT2);
        match self {
            Self::Strang => &[1.0],
            Self::Yoshida4 => &[W1, W0, W1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Strang => "strang",
            Self::Yoshida4 => "yoshida4",
        }
    }
}

/// Source of the forcing in the full equation.
#[derive(Clone, Copy)]
pub enum Drive<'a> {
    Free,
    Classical(&'a ClassicalTrajectory),
}

impl Drive<'_> {
    pub fn beta(&self, t: f64) -> Result<f64> {
        match self {
            Drive::Free => Ok(0.0),
            Drive::Classical(traj) => beta_of_t(traj, t),
        }
    }
}

#[derive(Clone, Copy)]
enum Potential<'a> {
    Full(Drive<'a>),
    Quadratic(&'a ClassicalTrajectory, HessianConvention),
}

/// Phase tables for one sub-step length.
struct StepTables {
    h: f64,
    kinetic: Vec<Complex64>,
    /// `exp(-i h W / (2 hbar))`.
    trap_half: Vec<Complex64>,
}

/// Writes `exp(i (a0 + a1 j + a2 j^2))`, reseeding the recurrence every 16 points.
fn chirp(out: &mut [Complex64], a0: f64, a1: f64, a2: f64) {
    const BLOCK: usize = 16;
    let rho = Complex64::from_polar(1.0, 2.0 * a2);
    for (b, chunk) in out.chunks_mut(BLOCK).enumerate() {
        let j0 = (b * BLOCK) as f64;
        let mut z = Complex64::from_polar(1.0, a0 + a1 * j0 + a2 * j0 * j0);
        let mut r = Complex64::from_polar(1.0, a1 + a2 * (2.0 * j0 + 1.0));
        for v in chunk.iter_mut() {
            *v = z;
            z *= r;
            r *= rho;
        }
    }
}

/// Owns the FFT plan and scratch buffers for stepping on one grid.
pub struct Propagator {
    grid: Arc<Grid>,
    params: ModelParams,
    fft: Fft,
    scheme: SplittingScheme,
    trap: Vec<f64>,
    tables: Vec<StepTables>,
    kick: Vec<Complex64>,
}

impl Propagator {
    pub fn new(grid: Arc<Grid>, params: &ModelParams, scheme: SplittingScheme) -> Result<Self> {
        if (grid.hbar - params.hbar).abs() > 1e-15 * params.hbar {
            return Err(invalid("grid", "grid and model use different hbar"));
        }
        let fft = Fft::new(grid.n)?;
        let trap = (0..grid.n).map(|j| params.trap(grid.x(j))).collect();
        Ok(Self {
            kick: vec![Complex64::new(1.0, 0.0); grid.n],
            grid,
            params: *params,
            fft,
            scheme,
            trap,
            tables: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn fft(&self) -> &Fft {
        &self.fft
    }

    pub fn scheme(&self) -> SplittingScheme {
        self.scheme
    }

    /// Default step `0.5 hbar / V_local` with `V_local` the larger of 1 and
    /// the energy ceiling.
    pub fn default_dt(hbar: f64, e_max: f64) -> f64 {
        0.5 * hbar / e_max.max(1.0)
    }

    fn tables_for(&mut self, h: f64) -> usize {
        if let Some(i) = self.tables.iter().position(|t| t.h == h) {
            return i;
        }
        if self.tables.len() >= 8 {
            self.tables.remove(0);
        }
        let hbar = self.grid.hbar;
        let kinetic = self
            .grid
            .k
            .iter()
            .map(|k| Complex64::from_polar(1.0, -0.5 * h * hbar * k * k))
            .collect();
        let trap_half = self
            .trap
            .iter()
            .map(|w| Complex64::from_polar(1.0, -0.5 * h * w / hbar))
            .collect();
        self.tables.push(StepTables { h, kinetic, trap_half });
        self.tables.len() - 1
    }

    /// Fills `self.kick` with the half-step factor; `false` means the cached
    /// trap factor applies unchanged.
    fn fill_kick(&mut self, kind: Potential<'_>, tau: f64, h: f64, table: usize) -> Result<bool> {
        let g = &self.grid;
        let s = -0.5 * h / g.hbar;
        match kind {
            Potential::Full(drive) => {
                let beta = drive.beta(tau)?;
                if beta == 0.0 {
                    return Ok(false);
                }
                chirp(&mut self.kick, -s * beta * g.x_min, -s * beta * g.dx, 0.0);
                for (k, t) in self.kick.iter_mut().zip(&self.tables[table].trap_half) {
                    *k *= t;
                }
            }
            Potential::Quadratic(traj, conv) => {
                let beta = beta_of_t(traj, tau)?;
                let (q, _) = traj.state_at(tau)?;
                let c0 = self.params.trap(q);
                let c1 = self.params.trap_gradient(q);
                let c2 = conv.curvature(&self.params, q);
                // V(x_min + j dx) as a polynomial in j.
                let y0 = g.x_min - q;
                let a0 = c0 + c1 * y0 + 0.5 * c2 * y0 * y0 - beta * g.x_min;
                let a1 = (c1 + c2 * y0 - beta) * g.dx;
                let a2 = 0.5 * c2 * g.dx * g.dx;
                chirp(&mut self.kick, s * a0, s * a1, s * a2);
            }
        }
        Ok(true)
    }

    fn half_kick(&self, psi: &mut WaveFunction, custom: bool, table: usize) {
        let factors = if custom { &self.kick } else { &self.tables[table].trap_half };
        for (a, f) in psi.amplitudes.iter_mut().zip(factors) {
            *a *= f;
        }
    }

    fn strang(&mut self, psi: &mut WaveFunction, h: f64, kind: Potential<'_>) -> Result<()> {
        let table = self.tables_for(h);
        let custom = self.fill_kick(kind, psi.t + 0.5 * h, h, table)?;
        self.half_kick(psi, custom, table);
        self.fft.forward(&mut psi.amplitudes);
        for (a, w) in psi.amplitudes.iter_mut().zip(&self.tables[table].kinetic) {
            *a *= w;
        }
        self.fft.inverse(&mut psi.amplitudes);
        self.half_kick(psi, custom, table);
        psi.t += h;
        Ok(())
    }

    fn step(&mut self, psi: &mut WaveFunction, dt: f64, kind: Potential<'_>) -> Result<()> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(invalid("dt", "must be finite and non-zero"));
        }
        let t_end = psi.t + dt;
        for &w in self.scheme.substeps() {
            self.strang(psi, w * dt, kind)?;
        }
        psi.t = t_end;
        if !psi.norm_sq().is_finite() {
            return Err(Error::NonFiniteAmplitudes { t: psi.t });
        }
        Ok(())
    }

    /// One step of `i hbar psi' = (-hbar^2 Laplacian/2 + W_l - beta(t) x) psi`,
    /// forcing at the midpoint of every sub-step. The sign makes `beta` push
    /// the packet the same way it pushes the classical orbit, `y'' = -W'(y) + beta`.
    pub fn step_full(&mut self, psi: &mut WaveFunction, dt: f64, drive: Drive<'_>) -> Result<()> {
        self.step(psi, dt, Potential::Full(drive))
    }

    /// One step of the equation with the potential replaced by its second-order
    /// Taylor polynomial around the classical position `q(t)`.
    pub fn step_quadratic(
        &mut self,
        psi: &mut WaveFunction,
        dt: f64,
        traj: &ClassicalTrajectory,
        convention: HessianConvention,
    ) -> Result<()> {
        self.step(psi, dt, Potential::Quadratic(traj, convention))
    }

    /// `steps` equal steps of the full equation from `psi.t` to `t_end`.
    pub fn advance_full(&mut self, psi: &mut WaveFunction, t_end: f64, steps: usize, drive: Drive<'_>) -> Result<()> {
        let t0 = psi.t;
        let h = (t_end - t0) / steps.max(1) as f64;
        for i in 0..steps.max(1) {
            self.step_full(psi, h, drive)?;
            psi.t = t0 + (i + 1) as f64 * h;
        }
        psi.t = t_end;
        Ok(())
    }

    pub fn advance_quadratic(
        &mut self,
        psi: &mut WaveFunction,
        t_end: f64,
        steps: usize,
        traj: &ClassicalTrajectory,
        convention: HessianConvention,
    ) -> Result<()> {
        let t0 = psi.t;
        let h = (t_end - t0) / steps.max(1) as f64;
        for i in 0..steps.max(1) {
            self.step_quadratic(psi, h, traj, convention)?;
            psi.t = t0 + (i + 1) as f64 * h;
        }
        psi.t = t_end;
        Ok(())
    }

    /// `(1 - hbar^2 Laplacian + W_l) psi`.
    pub fn apply_hl(&self, psi: &WaveFunction) -> Result<WaveFunction> {
        let hbar = self.grid.hbar;
        let mut spec = psi.amplitudes.clone();
        self.fft.forward(&mut spec);
        for (a, k) in spec.iter_mut().zip(&self.grid.k) {
            *a *= hbar * hbar * k * k;
        }
        self.fft.inverse(&mut spec);
        let amplitudes: Vec<Complex64> = psi
            .amplitudes
            .iter()
            .zip(&spec)
            .zip(&self.trap)
            .map(|((a, lap), w)| a * (1.0 + w) + lap)
            .collect();
        let out = WaveFunction {
            grid: psi.grid.clone(),
            amplitudes,
            t: psi.t,
        };
        let mut check = out.amplitudes.clone();
        self.fft.forward(&mut check);
        let tail = spectrum_tail(&check, &self.grid);
        if tail > 1e-8 {
            return Err(Error::AliasingDetected { tail });
        }
        Ok(out)
    }

    /// `|| H_l^(r/2) psi ||`; odd `r` through `Re <H^((r+1)/2) psi, H^((r-1)/2) psi>`.
    pub fn sobolev_norm(&self, psi: &WaveFunction, r: u32) -> Result<f64> {
        let tail = psi.spectral_tail(&self.fft);
        if tail > 1e-8 {
            return Err(Error::AliasingDetected { tail });
        }
        if r == 0 {
            return Ok(psi.norm());
        }
        let mut low = psi.clone();
        for _ in 0..r / 2 {
            low = self.apply_hl(&low)?;
        }
        if r % 2 == 0 {
            return Ok(low.norm());
        }
        let high = self.apply_hl(&low)?;
        Ok(high.inner(&low).re.max(0.0).sqrt())
    }

    /// Imaginary-time relaxation towards the unforced ground state.
    pub fn relax_ground_state(&mut self, psi: &mut WaveFunction, dtau: f64, steps: usize) {
        let hbar = self.grid.hbar;
        let decay: Vec<f64> = self.grid.k.iter().map(|k| (-0.5 * dtau * hbar * k * k).exp()).collect();
        let half: Vec<f64> = self.trap.iter().map(|w| (-0.5 * dtau * w / hbar).exp()).collect();
        for _ in 0..steps {
            for (a, h) in psi.amplitudes.iter_mut().zip(&half) {
                *a *= h;
            }
            self.fft.forward(&mut psi.amplitudes);
            for (a, d) in psi.amplitudes.iter_mut().zip(&decay) {
                *a *= d;
            }
            self.fft.inverse(&mut psi.amplitudes);
            for (a, h) in psi.amplitudes.iter_mut().zip(&half) {
                *a *= h;
            }
            let n = psi.norm();
            psi.scale(1.0 / n);
        }
    }
}

/// Inputs of [`run_comparison`].
#[derive(Clone)]
pub struct ComparisonConfig<'a> {
    pub params: ModelParams,
    pub traj: &'a ClassicalTrajectory,
    pub path: &'a FlowMatrixPath,
    pub grid: Arc<Grid>,
    pub dt: f64,
    pub scheme: SplittingScheme,
    /// Increasing checkpoint times in `(0, T]`.
    pub checkpoints: Vec<f64>,
    pub r_list: Vec<u32>,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPoint {
    pub t: f64,
    pub r: u32,
    pub err: f64,
    pub norm_full: f64,
    pub norm_quad: f64,
    /// `|F|_t` at the checkpoint.
    pub sup_f: f64,
    /// `sup_{s <= t} E(z_s)`.
    pub energy_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurves {
    pub hbar: f64,
    pub dt: f64,
    pub n: usize,
    pub points: Vec<ErrorPoint>,
}

impl ErrorCurves {
    /// Error at the last checkpoint for index `r`.
    pub fn final_error(&self, r: u32) -> Option<f64> {
        self.points.iter().rev().find(|p| p.r == r).map(|p| p.err)
    }
}

fn steps_between(t0: f64, t1: f64, dt: f64) -> usize {
    ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize
}

/// Propagates the coherent state at the trajectory's start under the full and
/// the quadratic equation and records `|| psi_full - psi_quad ||_r`.
pub fn run_comparison(cfg: &ComparisonConfig<'_>) -> Result<ErrorCurves> {
    if cfg.params.d != 1 {
        return Err(invalid("params.d", "the grid solver is one-dimensional"));
    }
    if !(cfg.dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if cfg.checkpoints.windows(2).any(|w| w[1] <= w[0]) || cfg.checkpoints.first().is_some_and(|&t| t < 0.0) {
        return Err(invalid("checkpoints", "must be increasing and non-negative"));
    }
    let hbar = cfg.grid.hbar;
    let (y0, v0) = cfg.traj.state_at(0.0)?;
    let z0 = PhasePoint::on_first_axis(1, y0, v0);
    let mut full = sample_coherent(&z0, hbar, cfg.grid.clone())?;
    let mut quad = full.clone();
    let mut prop = Propagator::new(cfg.grid.clone(), &cfg.params, cfg.scheme)?;
    let mut points = Vec::new();
    let mut energy_sup = cfg.traj.energy_at(0.0)?;
    let mut samples = cfg.traj.samples.iter().peekable();
    let mut t = 0.0;
    for &c in &cfg.checkpoints {
        let sup_f = sup_norm_f(cfg.path, c)?;
        let value = hbar.sqrt() * sup_f;
        if value > cfg.kappa {
            return Err(Error::HorizonViolated {
                t: c,
                value,
                kappa: cfg.kappa,
            });
        }
        if c > t {
            let n = steps_between(t, c, cfg.dt);
            prop.advance_full(&mut full, c, n, Drive::Classical(cfg.traj))?;
            prop.advance_quadratic(&mut quad, c, n, cfg.traj, cfg.path.convention)?;
            t = c;
        }
        while let Some(s) = samples.next_if(|s| s.t <= c) {
            energy_sup = energy_sup.max(s.energy);
        }
        energy_sup = energy_sup.max(cfg.traj.energy_at(c)?);
        let diff = full.sub(&quad);
        for &r in &cfg.r_list {
            points.push(ErrorPoint {
                t: c,
                r,
                err: prop.sobolev_norm(&diff, r)?,
                norm_full: prop.sobolev_norm(&full, r)?,
                norm_quad: prop.sobolev_norm(&quad, r)?,
                sup_f,
                energy_sup,
            });
        }
    }
    Ok(ErrorCurves {
        hbar,
        dt: cfg.dt,
        n: cfg.grid.n,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevPoint {
    pub t: f64,
    pub r: u32,
    pub norm: f64,
}

/// Sobolev norms of the fully evolved coherent state at the checkpoints.
pub fn sobolev_history(
    params: &ModelParams,
    traj: &ClassicalTrajectory,
    grid: Arc<Grid>,
    dt: f64,
    scheme: SplittingScheme,
    checkpoints: &[f64],
    r_list: &[u32],
) -> Result<Vec<SobolevPoint>> {
    if params.d != 1 {
        return Err(invalid("params.d", "the grid solver is one-dimensional"));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints.first().is_some_and(|&t| t < 0.0) {
        return Err(invalid("checkpoints", "must be increasing and non-negative"));
    }
    let (y0, v0) = traj.state_at(0.0)?;
    let mut psi = sample_coherent(&PhasePoint::on_first_axis(1, y0, v0), params.hbar, grid.clone())?;
    let mut prop = Propagator::new(grid, params, scheme)?;
    let mut out = Vec::with_capacity(checkpoints.len() * r_list.len());
    for &c in checkpoints {
        if c > psi.t {
            let n = steps_between(psi.t, c, dt);
            prop.advance_full(&mut psi, c, n, Drive::Classical(traj))?;
        }
        for &r in r_list {
            out.push(SobolevPoint {
                t: c,
                r,
                norm: prop.sobolev_norm(&psi, r)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(hbar: f64, e_max: f64) -> (ModelParams, Arc<Grid>) {
        let params = ModelParams::new(2, 1, hbar).unwrap();
        let grid = grid_for_energy(&params, e_max, &GridSafety::default()).unwrap();
        (params, Arc::new(grid))
    }

    #[test]
    fn grid_sizing_rules() {
        let params = ModelParams::new(2, 1, 1e-3).unwrap();
        let s = GridSafety {
            energy_margin: 0.0,
            ..GridSafety::default()
        };
        let g = grid_for_energy(&params, 15.0, &s).unwrap();
        assert!(g.x_max >= 60f64.powf(0.25));
        assert_relative_eq!(g.dx, (g.x_max - g.x_min) / g.n as f64);
        assert!(g.resolved_momentum(0.125) >= (30f64).sqrt());
        let half = grid_for_energy(&params.with_hbar(5e-4).unwrap(), 15.0, &s).unwrap();
        assert!(half.n >= 2 * g.n);
        let big = grid_for_energy(&params, 40.0, &s).unwrap();
        assert!(big.x_max > g.x_max);
        let tiny = GridSafety { n_cap: 1024, ..s };
        assert!(matches!(grid_for_energy(&params, 15.0, &tiny), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn coherent_samples_normalised_and_centred() {
        let (_, grid) = setup(1e-2, 2.0);
        let fft = Fft::new(grid.n).unwrap();
        let z = PhasePoint::on_first_axis(1, 0.4, -0.7);
        let psi = sample_coherent(&z, 1e-2, grid.clone()).unwrap();
        assert!((psi.norm_sq() - 1.0).abs() < 1e-10);
        assert!((psi.mean_position() - 0.4).abs() < 1e-10);
        assert!((psi.mean_momentum(&fft) + 0.7).abs() < 1e-10);
        let far = PhasePoint::on_first_axis(1, grid.x_max, 0.0);
        assert!(matches!(sample_coherent(&far, 1e-2, grid), Err(Error::CenterOutOfDomain { .. })));
    }

    #[test]
    fn coherent_mirror_and_conjugate() {
        let (_, grid) = setup(1e-2, 2.0);
        let n = grid.n;
        let a = sample_coherent(&PhasePoint::on_first_axis(1, 0.3, 0.8), 1e-2, grid.clone()).unwrap();
        let b = sample_coherent(&PhasePoint::on_first_axis(1, -0.3, -0.8), 1e-2, grid.clone()).unwrap();
        let c = sample_coherent(&PhasePoint::on_first_axis(1, 0.3, -0.8), 1e-2, grid).unwrap();
        for j in 1..n {
            assert!((b.amplitudes[j] - a.amplitudes[n - j]).norm() < 1e-12);
            assert!((c.amplitudes[j] - a.amplitudes[j].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn ground_state_energy_expectation() {
        let hbar = 1e-3;
        let (params, grid) = setup(hbar, 1.0);
        let psi = sample_coherent(&PhasePoint::origin(1), hbar, grid.clone()).unwrap();
        let prop = Propagator::new(grid, &params, SplittingScheme::Strang).unwrap();
        let h = prop.apply_hl(&psi).unwrap();
        let e = h.inner(&psi).re;
        assert_relative_eq!(e, 1.0 + hbar / 2.0 + 3.0 * hbar * hbar / 16.0, max_relative = 1e-12);
        assert_relative_eq!(prop.sobolev_norm(&psi, 0).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(prop.sobolev_norm(&psi, 1).unwrap(), e.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn spectral_laplacian_matches_finite_differences() {
        // Plane wave times a smooth window, compared with the 4th-order stencil.
        let mut errs = Vec::new();
        for n in [256usize, 512, 1024] {
            let grid = Arc::new(Grid::new(-8.0, 8.0, n, 1.0).unwrap());
            let f = |x: f64| Complex64::from_polar((-x * x).exp(), 3.0 * x);
            let psi = WaveFunction::from_fn(grid.clone(), 0.0, f);
            let fft = Fft::new(n).unwrap();
            let mut spec = psi.amplitudes.clone();
            fft.forward(&mut spec);
            for (a, k) in spec.iter_mut().zip(&grid.k) {
                *a *= -k * k;
            }
            fft.inverse(&mut spec);
            let h = grid.dx;
            let mut worst: f64 = 0.0;
            for j in 2..n - 2 {
                let u = &psi.amplitudes;
                let fd = (-u[j + 2] + 16.0 * u[j + 1] - 30.0 * u[j] + 16.0 * u[j - 1] - u[j - 2]) / (12.0 * h * h);
                worst = worst.max((fd - spec[j]).norm());
            }
            errs.push(worst);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn strang_step_is_unitary_and_reversible() {
        let hbar = 1e-2;
        let (params, grid) = setup(hbar, 3.0);
        let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang).unwrap();
        let psi0 = sample_coherent(&PhasePoint::on_first_axis(1, 0.5, 1.0), hbar, grid).unwrap();
        let mut psi = psi0.clone();
        for _ in 0..1000 {
            prop.step_full(&mut psi, 1e-3, Drive::Free).unwrap();
        }
        assert!((psi.norm_sq() - 1.0).abs() < 1e-10);
        for _ in 0..1000 {
            prop.step_full(&mut psi, -1e-3, Drive::Free).unwrap();
        }
        assert!(psi.sub(&psi0).norm() < 1e-9);
        assert!(psi.t.abs() < 1e-12);
    }

    #[test]
    fn parity_keeps_centred_state_centred() {
        let hbar = 1e-2;
        let (params, grid) = setup(hbar, 1.0);
        let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang).unwrap();
        let mut psi = sample_coherent(&PhasePoint::origin(1), hbar, grid).unwrap();
        for i in 0..400 {
            prop.step_full(&mut psi, 5e-3, Drive::Free).unwrap();
            if i % 50 == 0 {
                assert!(psi.mean_position().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relaxed_ground_state_is_stationary() {
        let hbar = 1e-2;
        let (params, grid) = setup(hbar, 1.0);
        let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang).unwrap();
        let mut psi = sample_coherent(&PhasePoint::origin(1), hbar, grid).unwrap();
        prop.relax_ground_state(&mut psi, 0.01, 4000);
        let before: Vec<f64> = (0..3).map(|r| prop.sobolev_norm(&psi, r).unwrap()).collect();
        for _ in 0..1000 {
            prop.step_full(&mut psi, 1e-2, Drive::Free).unwrap();
        }
        for (r, b) in before.iter().enumerate() {
            let a = prop.sobolev_norm(&psi, r as u32).unwrap();
            assert!((a - b).abs() <= 1e-6 * b, "r = {r}: {a} vs {b}");
        }
    }

    #[test]
    fn sobolev_inequalities() {
        let hbar = 1e-2;
        let (params, grid) = setup(hbar, 2.0);
        let prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang).unwrap();
        for (q, p) in [(0.0, 0.0), (0.5, -1.0), (-0.8, 0.3)] {
            let psi = sample_coherent(&PhasePoint::on_first_axis(1, q, p), hbar, grid.clone()).unwrap();
            let n: Vec<f64> = (0..4).map(|r| prop.sobolev_norm(&psi, r).unwrap()).collect();
            assert!((n[0] - 1.0).abs() < 1e-10);
            assert!(n[1] >= 1.0 && n[2] >= n[1] && n[3] >= n[2]);
            assert!(n[1] * n[1] <= n[0] * n[2] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dt_halving_is_second_order() {
        let hbar = 1e-2;
        let (params, grid) = setup(hbar, 3.0);
        let run = |steps: usize| {
            let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Strang).unwrap();
            let mut psi = sample_coherent(&PhasePoint::on_first_axis(1, 0.5, 1.0), hbar, grid.clone()).unwrap();
            prop.advance_full(&mut psi, 1.0, steps, Drive::Free).unwrap();
            psi
        };
        let a = run(100);
        let b = run(200);
        let c = run(400);
        let ratio = a.sub(&b).norm() / b.sub(&c).norm();
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn yoshida_is_fourth_order() {
        let hbar = 1e-2;
        let (params, grid) = setup(hbar, 3.0);
        let run = |steps: usize| {
            let mut prop = Propagator::new(grid.clone(), &params, SplittingScheme::Yoshida4).unwrap();
            let mut psi = sample_coherent(&PhasePoint::on_first_axis(1, 0.5, 1.0), hbar, grid.clone()).unwrap();
            prop.advance_full(&mut psi, 1.0, steps, Drive::Free).unwrap();
            psi
        };
        let a = run(50);
        let b = run(100);
        let c = run(200);
        let ratio = a.sub(&b).norm() / b.sub(&c).norm();
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

//! Static mathematics of the model: the anharmonic trap, the mechanical
//! energy, the smooth cut-offs and the kick forcing built from them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Parameters shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Anharmonicity exponent: the trap is `x^(2l) / (2l)`.
    pub l: u32,
    /// Spatial dimension of the classical system.
    pub d: usize,
    /// Semiclassical parameter.
    pub hbar: f64,
    /// Width `w` of the cut-off transition layers. `g1` falls from 1 to 0 on
    /// `1 - w <= |y| <= 1` and `g2` rises from 0 to 1 on `0 <= y <= 2w`; the
    /// default `w = 1/2` gives the layers `[1/2, 1]` and `[0, 1]`.
    pub cutoff_width: f64,
}

impl ModelParams {
    pub const DEFAULT_CUTOFF_WIDTH: f64 = 0.5;

    pub fn new(l: u32, d: usize, hbar: f64) -> Result<Self> {
        Self::with_cutoff_width(l, d, hbar, Self::DEFAULT_CUTOFF_WIDTH)
    }

    pub fn with_cutoff_width(l: u32, d: usize, hbar: f64, cutoff_width: f64) -> Result<Self> {
        let params = Self {
            l,
            d,
            hbar,
            cutoff_width,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(invalid("l", "anharmonicity exponent must be an integer >= 2"));
        }
        if self.l > 32 {
            return Err(invalid("l", "exponent above 32 overflows the trap in f64"));
        }
        if self.d < 1 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if !(self.hbar > 0.0 && self.hbar <= 1.0) {
            return Err(invalid("hbar", "must lie in (0, 1]"));
        }
        if !(self.cutoff_width > 0.0 && self.cutoff_width <= 1.0) {
            return Err(invalid("cutoff_width", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Same parameters with a different semiclassical parameter.
    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        let mut p = *self;
        p.hbar = hbar;
        p.validate()?;
        Ok(p)
    }

    #[inline]
    pub fn two_l(&self) -> i32 {
        2 * self.l as i32
    }

    /// One-dimensional trap `y^(2l) / (2l)`.
    #[inline]
    pub fn trap(&self, y: f64) -> f64 {
        y.powi(self.two_l()) / f64::from(2 * self.l)
    }

    /// `W'(y) = y^(2l-1)`.
    #[inline]
    pub fn trap_gradient(&self, y: f64) -> f64 {
        y.powi(self.two_l() - 1)
    }

    /// `W''(y) = (2l-1) y^(2l-2)`.
    #[inline]
    pub fn trap_curvature(&self, y: f64) -> f64 {
        f64::from(2 * self.l - 1) * y.powi(self.two_l() - 2)
    }

    /// Scalar mechanical energy `ydot^2/2 + y^(2l)/(2l)`.
    #[inline]
    pub fn energy_1d(&self, y: f64, ydot: f64) -> f64 {
        0.5 * ydot * ydot + self.trap(y)
    }
}

/// A point of phase space `(q, p)` in dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(invalid("phase point", "q and p must have the same non-zero length"));
        }
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("phase point", "entries must be finite"));
        }
        Ok(Self { q, p })
    }

    /// A point with only the first coordinate pair populated.
    pub fn on_first_axis(d: usize, q1: f64, p1: f64) -> Self {
        let mut q = vec![0.0; d.max(1)];
        let mut p = vec![0.0; d.max(1)];
        q[0] = q1;
        p[0] = p1;
        Self { q, p }
    }

    /// The canonical initial datum `q = (1, 0, ..), p = (1, 0, ..)`.
    pub fn canonical(d: usize) -> Self {
        Self::on_first_axis(d, 1.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn origin(d: usize) -> Self {
        Self {
            q: vec![0.0; d],
            p: vec![0.0; d],
        }
    }
}

/// Anharmonic trap `W_l(q) = (1/2l) sum_j q_j^(2l)`.
pub fn potential_w(q: &[f64], params: &ModelParams) -> f64 {
    q.iter().map(|&x| params.trap(x)).sum()
}

/// Mechanical energy `|p|^2/2 + W_l(q)`.
pub fn mech_energy(z: &PhasePoint, params: &ModelParams) -> f64 {
    let kinetic: f64 = z.p.iter().map(|p| 0.5 * p * p).sum();
    kinetic + potential_w(&z.q, params)
}

/// The `C^inf` smooth step `s(u) = h(u) / (h(u) + h(1-u))`, `h(u) = exp(-1/u)`
/// for `u > 0` and zero otherwise.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        // h(u)/(h(u)+h(1-u)) = 1/(1 + exp(1/u - 1/(1-u)))
        1.0 / (1.0 + (1.0 / u - 1.0 / (1.0 - u)).exp())
    }
}

/// Plateau cut-off: 1 on `|y| <= 1 - w`, 0 on `|y| >= 1`.
pub fn cutoff_g1(y: f64, params: &ModelParams) -> f64 {
    // 1 - s(u) = s(1 - u) keeps full relative precision in the tail.
    smooth_step((1.0 - y.abs()) / params.cutoff_width)
}

/// Switch-on cut-off: 0 on `y <= 0`, 1 on `y >= 2w`.
pub fn cutoff_g2(y: f64, params: &ModelParams) -> f64 {
    smooth_step(y / (2.0 * params.cutoff_width))
}

/// Kick forcing `f(y, ydot) = g1(y) g2(ydot) exp(-ydot)`.
pub fn forcing_f(y: f64, ydot: f64, params: &ModelParams) -> f64 {
    if ydot <= 0.0 || y.abs() >= 1.0 {
        return 0.0;
    }
    cutoff_g1(y, params) * cutoff_g2(ydot, params) * (-ydot).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p2() -> ModelParams {
        ModelParams::new(2, 1, 0.1).unwrap()
    }

    #[test]
    fn rejects_harmonic_and_bad_hbar() {
        assert!(ModelParams::new(1, 1, 0.1).is_err());
        assert!(ModelParams::new(2, 0, 0.1).is_err());
        assert!(ModelParams::new(2, 1, 0.0).is_err());
        assert!(ModelParams::new(2, 1, 1.5).is_err());
        assert!(ModelParams::new(2, 1, 1.0).is_ok());
    }

    #[test]
    fn potential_values() {
        assert_eq!(potential_w(&[0.0, 0.0], &p2()), 0.0);
        assert_relative_eq!(potential_w(&[1.0], &p2()), 0.25);
        let p3 = ModelParams::new(3, 1, 0.1).unwrap();
        assert_relative_eq!(potential_w(&[1.0], &p3), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn energy_values() {
        let params = p2();
        assert_eq!(mech_energy(&PhasePoint::origin(1), &params), 0.0);
        assert_relative_eq!(mech_energy(&PhasePoint::canonical(1), &params), 0.75);
        let z = PhasePoint::new(vec![0.0, 0.0], vec![1.5, -2.0]).unwrap();
        assert_relative_eq!(mech_energy(&z, &params), 0.5 * (2.25 + 4.0));
    }

    #[test]
    fn cutoff_plateaus() {
        let params = p2();
        assert_eq!(cutoff_g1(0.0, &params), 1.0);
        assert_eq!(cutoff_g1(0.5, &params), 1.0);
        assert_eq!(cutoff_g1(-0.5, &params), 1.0);
        assert_eq!(cutoff_g1(1.0, &params), 0.0);
        assert_eq!(cutoff_g1(2.0, &params), 0.0);
        assert_eq!(cutoff_g2(-1.0, &params), 0.0);
        assert_eq!(cutoff_g2(0.0, &params), 0.0);
        assert_eq!(cutoff_g2(1.0, &params), 1.0);
        assert_eq!(cutoff_g2(2.0, &params), 1.0);
    }

    #[test]
    fn cutoff_transition_values() {
        let params = p2();
        // s(1/2) = 1/2 exactly by symmetry of the profile.
        assert_relative_eq!(cutoff_g1(0.75, &params), 0.5, epsilon = 1e-15);
        assert_relative_eq!(cutoff_g2(0.5, &params), 0.5, epsilon = 1e-15);
        // s(1/4) = 1/(1 + e^(4 - 4/3)) evaluated by hand.
        let s_quarter = 1.0 / (1.0 + (8.0f64 / 3.0).exp());
        assert_relative_eq!(cutoff_g2(0.25, &params), s_quarter, epsilon = 1e-15);
        assert_relative_eq!(cutoff_g1(0.625, &params), 1.0 - s_quarter, epsilon = 1e-15);
        let mut prev = 1.0;
        for i in 1..100 {
            let y = 0.5 + 0.5 * i as f64 / 100.0;
            let g = cutoff_g1(y, &params);
            assert!(g <= prev && g > 0.0);
            prev = g;
            // Strict growth is visible in floating point on the lower half;
            // the upper half follows from s(u) + s(1 - u) = 1.
            let u = 0.5 * i as f64 / 100.0;
            assert!(smooth_step(u) < smooth_step(u + 0.0025));
            assert_relative_eq!(smooth_step(u) + smooth_step(1.0 - u), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn forcing_values() {
        let params = p2();
        assert_relative_eq!(forcing_f(0.0, 2.0, &params), (-2.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(forcing_f(0.0, 2.0, &params), 0.1353352832366127, epsilon = 1e-15);
        assert_eq!(forcing_f(3.0, 5.0, &params), 0.0);
        assert_eq!(forcing_f(0.0, -1.0, &params), 0.0);
        assert_eq!(forcing_f(1.0, 1.0, &params), 0.0);
    }

    /// Central finite-difference estimate of the k-th derivative.
    fn fd_derivative(f: &dyn Fn(f64) -> f64, x: f64, k: usize, h: f64) -> f64 {
        let stencils: [&[f64]; 5] = [
            &[0.0, 0.0, 1.0, 0.0, 0.0],
            &[0.0, -0.5, 0.0, 0.5, 0.0],
            &[0.0, 1.0, -2.0, 1.0, 0.0],
            &[-0.5, 1.0, 0.0, -1.0, 0.5],
            &[1.0, -4.0, 6.0, -4.0, 1.0],
        ];
        stencils[k]
            .iter()
            .enumerate()
            .map(|(i, c)| c * f(x + (i as f64 - 2.0) * h))
            .sum::<f64>()
            / h.powi(k as i32)
    }

    #[test]
    fn cutoffs_are_smooth_across_layers() {
        let params = p2();
        let g1 = |y: f64| cutoff_g1(y, &params);
        let g2 = |y: f64| cutoff_g2(y, &params);
        for (f, lo, hi) in [(&g1 as &dyn Fn(f64) -> f64, 0.4, 1.1), (&g2, -0.1, 1.1)] {
            for k in 1..=4 {
                let h = 1e-3;
                let samples: Vec<(f64, f64)> = (0..=700)
                    .map(|i| {
                        let x = lo + (hi - lo) * i as f64 / 700.0;
                        (fd_derivative(f, x, k, h), fd_derivative(f, x, k, h / 2.0))
                    })
                    .collect();
                // A jump in D^(k-1) would show up as D^k ~ h^-1 = 1e3 times
                // larger than the smooth profile allows.
                let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.0.abs()));
                assert!(peak < 1e5, "D^{k} peaks at {peak}");
                for w in samples.windows(2) {
                    let (coarse, fine) = w[1];
                    assert!((coarse - fine).abs() < 0.2 * (1.0 + fine.abs()), "D^{k} stencil drift");
                    assert!((coarse - w[0].0).abs() < 0.1 * peak, "jump in D^{k}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn forcing_bounded_by_envelope(y in -3.0f64..3.0, yd in -3.0f64..8.0) {
            let params = p2();
            let f = forcing_f(y, yd, &params);
            let envelope = if yd > 0.0 && y.abs() < 1.0 { (-yd).exp() } else { 0.0 };
            prop_assert!(f >= 0.0);
            prop_assert!(f <= envelope);
            prop_assert!(yd * f >= 0.0);
        }

        #[test]
        fn energy_is_even(q in -2.0f64..2.0, p in -2.0f64..2.0, l in 2u32..5) {
            let params = ModelParams::new(l, 1, 0.5).unwrap();
            let z = PhasePoint::new(vec![q], vec![p]).unwrap();
            let zm = PhasePoint::new(vec![-q], vec![-p]).unwrap();
            prop_assert_eq!(potential_w(&z.q, &params), potential_w(&zm.q, &params));
            prop_assert_eq!(mech_energy(&z, &params), mech_energy(&zm, &params));
        }
    }
}

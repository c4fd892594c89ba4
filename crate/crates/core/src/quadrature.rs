//! Gaussian rules and adaptive Gauss–Kronrod integration.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// One-dimensional rule for `int f(x) exp(-x^2) dx` over the real line,
/// replicated on every axis when used as a tensor product.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// Gauss–Hermite rule with `order` nodes (exact to degree `2 order - 1`).
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 || order > 200 {
            return Err(invalid("order", "Gauss-Hermite order must be in 1..=200"));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0;
        for i in 0..m {
            // Asymptotic initial guesses for the largest roots, then walk inwards.
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (p1, p2) = orthonormal_hermite(n, z, pim4);
                pp = (2.0 * n as f64).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, p2) = orthonormal_hermite(n, z, pim4);
            pp = if pp == 0.0 { 1.0 } else { (2.0 * n as f64).sqrt() * p2 };
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // Ascending order.
        nodes.reverse();
        weights.reverse();
        Ok(Self {
            nodes,
            weights,
            order,
        })
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Visit every node of the `dim`-fold tensor rule with its product weight.
    pub fn for_each_tensor(&self, dim: usize, mut visit: impl FnMut(&[f64], f64)) {
        let n = self.order;
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        loop {
            let mut w = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                point[k] = self.nodes[i];
                w *= self.weights[i];
            }
            visit(&point, w);
            let mut k = 0;
            loop {
                if k == dim {
                    return;
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Orthonormal Hermite values `(p_n(z), p_{n-1}(z))`.
fn orthonormal_hermite(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod (7, 15) integration to relative tolerance `rtol`.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> Result<f64> {
    let mut parts: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(&f, a, b);
    parts.push((a, b, v, e));
    let mut total = v;
    let mut err = e;
    for _ in 0..2000 {
        if err <= rtol * total.abs() || err <= 1e-300 {
            return Ok(total);
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let left = gk15(&f, lo, mid);
        let right = gk15(&f, mid, hi);
        parts.push((lo, mid, left.0, left.1));
        parts.push((mid, hi, right.0, right.1));
        total = parts.iter().map(|p| p.2).sum();
        err = parts.iter().map(|p| p.3).sum();
    }
    if err <= rtol * total.abs() {
        Ok(total)
    } else {
        Err(Error::QuadratureFailure { estimate: total, error: err })
    }
}

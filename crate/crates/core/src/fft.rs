//! In-place iterative radix-2 FFT.

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Precomputed bit-reversal table and per-stage twiddles for one
/// power-of-two length.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    rev: Vec<u32>,
    /// Stage with butterfly span `h` reads `twiddles[h - 1 .. 2h - 1]`.
    twiddles: Vec<Complex64>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() || n > (1 << 30) {
            return Err(invalid("n", "FFT length must be a power of two"));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        let mut twiddles = Vec::with_capacity(n.max(2) - 1);
        let mut half = 1;
        while half < n {
            for k in 0..half {
                let a = -PI * k as f64 / half as f64;
                twiddles.push(Complex64::new(a.cos(), a.sin()));
            }
            half <<= 1;
        }
        Ok(Self { n, rev, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `X_k = sum_j x_j exp(-2 pi i jk / n)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data);
    }

    /// Inverse transform including the `1/n` normalisation.
    pub fn inverse(&self, data: &mut [Complex64]) {
        // conj(F(conj x)) / n
        for v in data.iter_mut() {
            *v = v.conj();
        }
        self.transform(data);
        let s = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v = v.conj() * s;
        }
    }

    fn transform(&self, data: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(data.len(), n);
        for i in 0..n {
            let j = self.rev[i] as usize;
            if i < j {
                data.swap(i, j);
            }
        }
        if n >= 2 {
            for pair in data.chunks_exact_mut(2) {
                let (u, v) = (pair[0], pair[1]);
                pair[0] = u + v;
                pair[1] = u - v;
            }
        }
        let mut half = 2;
        while half < n {
            let tw = &self.twiddles[half - 1..2 * half - 1];
            for block in data.chunks_exact_mut(2 * half) {
                let (lo, hi) = block.split_at_mut(half);
                for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(tw) {
                    let v = *b * w;
                    let u = *a;
                    *a = u + v;
                    *b = u - v;
                }
            }
            half <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let a = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                        v * Complex64::new(a.cos(), a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for n in [1usize, 2, 4, 8, 64, 256] {
            let x: Vec<Complex64> = (0..n)
                .map(|j| Complex64::new((0.3 * j as f64).sin() + 0.1 * j as f64, (1.7 * j as f64).cos()))
                .collect();
            let mut y = x.clone();
            let plan = Fft::new(n).unwrap();
            plan.forward(&mut y);
            let want = naive_dft(&x);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).norm() < 1e-10 * (1.0 + b.norm()));
            }
            plan.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(12).is_err());
        assert!(Fft::new(0).is_err());
    }
}

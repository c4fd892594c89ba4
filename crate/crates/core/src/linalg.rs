//! Small dense matrices: products, LU determinants and inverses, the Jacobi
//! symmetric eigensolver and the spectral norm.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Zero;

/// Row-major square real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub n: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(n: usize, a: &[f64]) -> Self {
        assert_eq!(a.len(), n * n);
        Self { n, a: a.to_vec() }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.a[j * n + i] = self.a[i * n + j];
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * other.a[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.a[i * n + j] * v[j]).sum())
            .collect()
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        Mat {
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..i).all(|j| self.a[i * n + j] == self.a[j * n + i]))
    }

    pub fn det(&self) -> f64 {
        lu_det(self.n, self.a.clone())
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        let gram = self.transpose().mul(self);
        let eig = symmetric_eigenvalues(&gram);
        eig.iter().fold(0.0f64, |m, &v| m.max(v)).max(0.0).sqrt()
    }
}

fn lu_det(n: usize, mut a: Vec<f64>) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .unwrap_or(c);
        if a[piv * n + c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            for j in 0..n {
                a.swap(piv * n + j, c * n + j);
            }
            det = -det;
        }
        let d = a[c * n + c];
        det *= d;
        for i in c + 1..n {
            let f = a[i * n + c] / d;
            for j in c..n {
                a[i * n + j] -= f * a[c * n + j];
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.n;
    let mut a = m.a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Determinant of a complex row-major `n x n` matrix.
pub fn complex_det(n: usize, m: &[Complex64]) -> Complex64 {
    let mut a = m.to_vec();
    let mut det = Complex64::new(1.0, 0.0);
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i * n + c].norm().total_cmp(&a[j * n + c].norm()))
            .unwrap_or(c);
        if a[piv * n + c].is_zero() {
            return Complex64::zero();
        }
        if piv != c {
            for j in 0..n {
                a.swap(piv * n + j, c * n + j);
            }
            det = -det;
        }
        let d = a[c * n + c];
        det *= d;
        for i in c + 1..n {
            let f = a[i * n + c] / d;
            for j in c..n {
                let v = a[c * n + j];
                a[i * n + j] -= f * v;
            }
        }
    }
    det
}

/// Inverse of a complex matrix by Gauss–Jordan elimination, `None` if singular.
pub fn complex_inverse(n: usize, m: &[Complex64]) -> Option<Vec<Complex64>> {
    let mut a = m.to_vec();
    let mut inv = vec![Complex64::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.norm()));
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i * n + c].norm().total_cmp(&a[j * n + c].norm()))?;
        if a[piv * n + c].norm() <= 1e-14 * scale {
            return None;
        }
        for j in 0..n {
            a.swap(piv * n + j, c * n + j);
            inv.swap(piv * n + j, c * n + j);
        }
        let d = a[c * n + c];
        for j in 0..n {
            a[c * n + j] /= d;
            inv[c * n + j] /= d;
        }
        for i in 0..n {
            if i == c {
                continue;
            }
            let f = a[i * n + c];
            if f.is_zero() {
                continue;
            }
            for j in 0..n {
                let (ac, ic) = (a[c * n + j], inv[c * n + j]);
                a[i * n + j] -= f * ac;
                inv[i * n + j] -= f * ic;
            }
        }
    }
    Some(inv)
}

/// Complex product `A B` of row-major `n x n` matrices.
pub fn complex_mul(n: usize, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn determinant_and_norm_of_shear() {
        let t = 3.0;
        let m = Mat::from_rows(2, &[1.0, 0.0, t, 1.0]);
        assert_relative_eq!(m.det(), 1.0, max_relative = 1e-15);
        // sigma_max of [[1,0],[t,1]] = (t + sqrt(t^2+4)) / 2
        assert_relative_eq!(m.op_norm(), (t + (t * t + 4.0).sqrt()) / 2.0, max_relative = 1e-13);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m = Mat::from_rows(3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let mut e = symmetric_eigenvalues(&m);
        e.sort_by(f64::total_cmp);
        let s2 = 2f64.sqrt();
        assert_relative_eq!(e[0], 2.0 - s2, max_relative = 1e-13);
        assert_relative_eq!(e[1], 2.0, max_relative = 1e-13);
        assert_relative_eq!(e[2], 2.0 + s2, max_relative = 1e-13);
    }

    #[test]
    fn complex_inverse_roundtrip() {
        let c = |a: f64, b: f64| Complex64::new(a, b);
        let m = [c(1.0, 2.0), c(0.5, -1.0), c(-0.3, 0.1), c(2.0, 0.5)];
        let inv = complex_inverse(2, &m).unwrap();
        let id = complex_mul(2, &m, &inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[i * 2 + j] - c(want, 0.0)).norm() < 1e-14);
            }
        }
        let det = complex_det(2, &m);
        let direct = m[0] * m[3] - m[1] * m[2];
        assert!((det - direct).norm() < 1e-14);
        assert!(complex_inverse(2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]).is_none());
    }
}

//! Small dense square matrices (d <= 3) for Jacobian bookkeeping.

use crate::error::{Error, Result};

/// Row-major d x d matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMat {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        SquareMat { dim, data }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SquareMat::new(dim, vec![0.0; dim * dim]);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn zeros(dim: usize) -> Self {
        SquareMat::new(dim, vec![0.0; dim * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn matmul(&self, rhs: &SquareMat) -> SquareMat {
        assert_eq!(self.dim, rhs.dim);
        let d = self.dim;
        let mut out = SquareMat::zeros(d);
        for i in 0..d {
            for p in 0..d {
                let a = self.get(i, p);
                for j in 0..d {
                    out.data[i * d + j] += a * rhs.get(p, j);
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> SquareMat {
        let d = self.dim;
        let mut out = SquareMat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn det(&self) -> f64 {
        let m = &self.data;
        match self.dim {
            1 => m[0],
            2 => m[0] * m[3] - m[1] * m[2],
            3 => {
                m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                    + m[2] * (m[3] * m[7] - m[4] * m[6])
            }
            d => panic!("det not implemented for dim {d}"),
        }
    }

    /// Inverse; errors when |det| < 1e-12.
    pub fn inverse(&self) -> Result<SquareMat> {
        let det = self.det();
        if det.abs() < 1e-12 {
            return Err(Error::SingularJacobian { det });
        }
        let m = &self.data;
        let inv = match self.dim {
            1 => vec![1.0 / m[0]],
            2 => {
                let s = 1.0 / det;
                vec![m[3] * s, -m[1] * s, -m[2] * s, m[0] * s]
            }
            3 => {
                let s = 1.0 / det;
                vec![
                    (m[4] * m[8] - m[5] * m[7]) * s,
                    (m[2] * m[7] - m[1] * m[8]) * s,
                    (m[1] * m[5] - m[2] * m[4]) * s,
                    (m[5] * m[6] - m[3] * m[8]) * s,
                    (m[0] * m[8] - m[2] * m[6]) * s,
                    (m[2] * m[3] - m[0] * m[5]) * s,
                    (m[3] * m[7] - m[4] * m[6]) * s,
                    (m[1] * m[6] - m[0] * m[7]) * s,
                    (m[0] * m[4] - m[1] * m[3]) * s,
                ]
            }
            d => panic!("inverse not implemented for dim {d}"),
        };
        Ok(SquareMat::new(self.dim, inv))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sub(&self, rhs: &SquareMat) -> SquareMat {
        assert_eq!(self.dim, rhs.dim);
        SquareMat::new(
            self.dim,
            self.data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Largest singular value, by power iteration on J^T J.
    ///
    /// The start vector has irrational-ratio components so it is never exactly
    /// orthogonal to the leading singular direction of the fixtures we test.
    pub fn spectral_norm(&self, iterations: usize) -> f64 {
        let d = self.dim;
        if d == 1 {
            return self.data[0].abs();
        }
        let jtj = self.transpose().matmul(self);
        let seeds = [1.0, 0.7548776662466927, 0.5698402909980532];
        let mut v: Vec<f64> = (0..d).map(|i| seeds[i % seeds.len()]).collect();
        normalize(&mut v);
        for _ in 0..iterations {
            let mut w = jtj.apply(&v);
            let n = norm(&w);
            if n == 0.0 {
                return 0.0;
            }
            for x in &mut w {
                *x /= n;
            }
            v = w;
        }
        // Rayleigh quotient of J^T J at the converged direction.
        let jv = self.apply(&v);
        norm(&jv)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_inverse_2d() {
        let m = SquareMat::new(2, vec![2.0, 1.0, 0.0, 0.5]);
        assert_eq!(m.det(), 1.0);
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv);
        for (i, v) in prod.data().iter().enumerate() {
            let expect = if i % 3 == 0 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = SquareMat::new(2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(m.inverse(), Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn spectral_norm_of_identity_is_one() {
        assert!((SquareMat::identity(2).spectral_norm(50) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal_is_max_abs_entry() {
        let m = SquareMat::new(2, vec![2.0, 0.0, 0.0, 0.5]);
        assert!((m.spectral_norm(50) - 2.0).abs() < 1e-9);
        let neg = SquareMat::new(2, vec![-3.0, 0.0, 0.0, 1.0]);
        assert!((neg.spectral_norm(50) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd_formula_2x2() {
        // Closed form: sigma_max^2 is the larger eigenvalue of J^T J.
        let cases = [
            [1.3, -0.4, 0.2, 0.9],
            [0.0, 2.0, 0.5, 0.0],
            [1.0, 1.0, 0.0, 1.0],
            [-0.7, 0.1, 0.3, -0.2],
        ];
        for c in cases {
            let m = SquareMat::new(2, c.to_vec());
            let [a, b, cc, d] = c;
            let (p, q, r) = (a * a + cc * cc, a * b + cc * d, b * b + d * d);
            let tr = p + r;
            let disc = ((p - r) * (p - r) + 4.0 * q * q).sqrt();
            let expect = ((tr + disc) / 2.0).sqrt();
            let got = m.spectral_norm(50);
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
    }

    #[test]
    fn det_3d() {
        let m = SquareMat::new(3, vec![2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 4.0]);
        assert_eq!(m.det(), 24.0);
    }
}

//! Analytic test warps with closed-form Jacobians, used by the verification
//! suites as ground truth.

use crate::linalg::SquareMat;

use super::analysis::Transform;

/// x -> x.
#[derive(Debug, Clone)]
pub struct IdentityWarp {
    pub dim: usize,
}

impl Transform for IdentityWarp {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn jacobian(&self, _x: &[f64]) -> SquareMat {
        SquareMat::identity(self.dim)
    }
}

/// The full affine map x -> M x + c.
#[derive(Debug, Clone)]
pub struct LinearWarp {
    pub matrix: SquareMat,
    pub offset: Vec<f64>,
}

impl LinearWarp {
    pub fn diagonal(entries: &[f64]) -> Self {
        let d = entries.len();
        let mut m = SquareMat::zeros(d);
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        LinearWarp {
            matrix: m,
            offset: vec![0.0; d],
        }
    }
}

impl Transform for LinearWarp {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .apply(x)
            .iter()
            .zip(&self.offset)
            .map(|(v, c)| v + c)
            .collect()
    }
    fn jacobian(&self, _x: &[f64]) -> SquareMat {
        self.matrix.clone()
    }
}

/// x -> x + a sin(pi x) on the line. Derivative 1 + a pi cos(pi x); with
/// a = 2/pi the map folds exactly on |x| in (2/3, 1].
#[derive(Debug, Clone)]
pub struct SineWarp1d {
    pub amplitude: f64,
}

impl Transform for SineWarp1d {
    fn dim(&self) -> usize {
        1
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0] + self.amplitude * (std::f64::consts::PI * x[0]).sin()]
    }
    fn jacobian(&self, x: &[f64]) -> SquareMat {
        SquareMat::new(
            1,
            vec![1.0 + self.amplitude * std::f64::consts::PI * (std::f64::consts::PI * x[0]).cos()],
        )
    }
}

/// Composition applied left to right: parts[0] first.
pub struct ComposedWarp {
    pub parts: Vec<Box<dyn Transform + Send + Sync>>,
}

impl Transform for ComposedWarp {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut u = x.to_vec();
        for p in &self.parts {
            u = p.apply(&u);
        }
        u
    }
    fn jacobian(&self, x: &[f64]) -> SquareMat {
        let mut u = x.to_vec();
        let mut jac = SquareMat::identity(self.dim());
        for p in &self.parts {
            jac = p.jacobian(&u).matmul(&jac);
            u = p.apply(&u);
        }
        jac
    }
}

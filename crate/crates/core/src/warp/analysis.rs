//! Stability analysis of coordinate transformations: Lipschitz estimation by
//! spectral norms, composition bounds, folding detection, and per-sample
//! Jacobian reports.

use crate::error::Result;
use crate::linalg::SquareMat;

use super::stack::WarpStack;

/// Power-iteration depth for spectral norms throughout the analysis suite.
pub const SPECTRAL_NORM_ITERATIONS: usize = 50;

/// A differentiable coordinate map with a consistent Jacobian.
pub trait Transform {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> SquareMat;

    /// Batched Jacobians; implementations may override with a faster path.
    fn jacobians(&self, points: &[Vec<f64>]) -> Vec<SquareMat> {
        points.iter().map(|p| self.jacobian(p)).collect()
    }
}

impl Transform for WarpStack {
    fn dim(&self) -> usize {
        2
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        WarpStack::apply(self, &[x[0], x[1]])
            .expect("stack evaluation")
            .to_vec()
    }
    fn jacobian(&self, x: &[f64]) -> SquareMat {
        self.jacobians_reverse_mode(&[[x[0], x[1]]])
            .expect("stack jacobian")
            .pop()
            .unwrap()
    }
    fn jacobians(&self, points: &[Vec<f64>]) -> Vec<SquareMat> {
        let pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
        // Chunked so a dense verification grid does not hold one huge tape.
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(4096) {
            out.extend(self.jacobians_reverse_mode(chunk).expect("stack jacobian"));
        }
        out
    }
}

/// Largest sampled operator norm of the Jacobian: an empirical Lipschitz
/// constant (monotone nondecreasing in the sample set).
pub fn lipschitz_estimate(transform: &dyn Transform, points: &[Vec<f64>]) -> f64 {
    assert!(!points.is_empty(), "lipschitz_estimate needs samples");
    transform
        .jacobians(points)
        .iter()
        .map(|j| j.spectral_norm(SPECTRAL_NORM_ITERATIONS))
        .fold(0.0, f64::max)
}

/// Product of per-level Lipschitz bounds; 1 for the empty composition.
pub fn composition_bound(per_level: &[f64]) -> f64 {
    per_level.iter().product()
}

/// Fraction of sample points where det J <= 0.
pub fn folding_fraction(transform: &dyn Transform, points: &[Vec<f64>]) -> f64 {
    assert!(!points.is_empty(), "folding_fraction needs a nonempty grid");
    let folded = transform
        .jacobians(points)
        .iter()
        .filter(|j| j.det() <= 0.0)
        .count();
    folded as f64 / points.len() as f64
}

/// Per-sample Jacobian summary of a transform.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub points: Vec<Vec<f64>>,
    pub jacobians: Vec<SquareMat>,
    pub determinants: Vec<f64>,
    pub spectral_norms: Vec<f64>,
    pub folding_fraction: f64,
}

pub fn jacobian_report(transform: &dyn Transform, points: &[Vec<f64>]) -> JacobianReport {
    let jacobians = transform.jacobians(points);
    let determinants: Vec<f64> = jacobians.iter().map(|j| j.det()).collect();
    let spectral_norms: Vec<f64> = jacobians
        .iter()
        .map(|j| j.spectral_norm(SPECTRAL_NORM_ITERATIONS))
        .collect();
    let folded = determinants.iter().filter(|&&d| d <= 0.0).count();
    JacobianReport {
        points: points.to_vec(),
        jacobians,
        determinants,
        spectral_norms,
        folding_fraction: folded as f64 / points.len().max(1) as f64,
    }
}

impl JacobianReport {
    /// CSV rows of (coordinates..., det, spectral norm).
    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map(|p| p.len()).unwrap_or(0);
        let mut out = String::new();
        for i in 0..dim {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("det,spectral_norm\n");
        for ((p, d), s) in self
            .points
            .iter()
            .zip(&self.determinants)
            .zip(&self.spectral_norms)
        {
            for v in p {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{d},{s}\n"));
        }
        out
    }
}

/// Empirical check of the composition bound on a stack: per-level Lipschitz
/// estimates taken on the image of the preceding levels' grid, against the
/// composite estimate on the same grid.
#[derive(Debug, Clone)]
pub struct CompositionCheck {
    pub per_level: Vec<f64>,
    pub composite: f64,
    pub product_bound: f64,
}

impl CompositionCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.composite <= self.product_bound + slack
    }
}

pub fn composition_check(stack: &WarpStack, points: &[[f64; 2]]) -> Result<CompositionCheck> {
    let mut per_level = vec![0.0_f64; stack.level_count()];
    let mut composite = 0.0_f64;
    for p in points {
        let phis = stack.phis_at(p)?;
        let mut u = *p;
        let mut chain = SquareMat::identity(2);
        for (l, (level, phi)) in stack.levels.iter().zip(&phis).enumerate() {
            let jac = level.jacobian_plain(&u, phi);
            per_level[l] = per_level[l].max(jac.spectral_norm(SPECTRAL_NORM_ITERATIONS));
            chain = jac.matmul(&chain);
            u = level.apply_plain(&u, phi);
        }
        composite = composite.max(chain.spectral_norm(SPECTRAL_NORM_ITERATIONS));
    }
    Ok(CompositionCheck {
        product_bound: composition_bound(&per_level),
        per_level,
        composite,
    })
}

/// Pairwise Lipschitz verification: ||T(x) - T(x')|| <= lambda ||x - x'|| + eps
/// with lambda estimated on a dense grid.
#[derive(Debug, Clone)]
pub struct PairwiseLipschitzCheck {
    pub lipschitz: f64,
    pub pairs_checked: usize,
    pub worst_excess: f64,
    pub holds: bool,
}

pub fn pairwise_lipschitz_check(
    transform: &dyn Transform,
    dense_grid: &[Vec<f64>],
    pairs: &[(Vec<f64>, Vec<f64>)],
    eps_grid: f64,
) -> PairwiseLipschitzCheck {
    let lambda = lipschitz_estimate(transform, dense_grid);
    let mut worst_excess = f64::NEG_INFINITY;
    for (a, b) in pairs {
        let ta = transform.apply(a);
        let tb = transform.apply(b);
        let lhs = dist(&ta, &tb);
        let rhs = lambda * dist(a, b) + eps_grid;
        worst_excess = worst_excess.max(lhs - rhs);
    }
    PairwiseLipschitzCheck {
        lipschitz: lambda,
        pairs_checked: pairs.len(),
        worst_excess,
        holds: worst_excess <= 0.0,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Inclusive uniform grid over [-1, 1].
pub fn dense_grid_1d(n: usize) -> Vec<Vec<f64>> {
    assert!(n >= 2);
    (0..n)
        .map(|i| vec![-1.0 + 2.0 * i as f64 / (n - 1) as f64])
        .collect()
}

/// Inclusive uniform lattice over [-1, 1]^2 with n points per axis.
pub fn dense_grid_2d(n: usize) -> Vec<Vec<f64>> {
    assert!(n >= 2);
    let axis: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect();
    let mut out = Vec::with_capacity(n * n);
    for y in &axis {
        for x in &axis {
            out.push(vec![*x, *y]);
        }
    }
    out
}

//! Evaluation metrics: PSNR, single-scale SSIM, zero-level-set Chamfer
//! distance, and the eikonal residual of signed-distance fields.

use crate::error::{Error, Result};
use crate::grid::{pixel_to_domain, Grid2};
use crate::tasks::{analytic_sdf, analytic_sdf_gradient, Sdf2DTask, ShapeSpec};

/// Peak signal-to-noise ratio at peak 1: 10 log10(1 / mse). A zero residual
/// reports +infinity (serialized as "inf").
pub fn psnr(pred: &Grid2, target: &Grid2) -> f64 {
    assert_eq!(pred.width(), target.width());
    assert_eq!(pred.height(), target.height());
    let mse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Single-scale SSIM: 8x8 uniform sliding window (stride 1), C1 = 0.01^2 and
/// C2 = 0.03^2 at peak 1. Images smaller than the window use one window over
/// the full extent.
pub fn ssim(pred: &Grid2, target: &Grid2) -> f64 {
    assert_eq!(pred.width(), target.width());
    assert_eq!(pred.height(), target.height());
    const C1: f64 = 1e-4;
    const C2: f64 = 9e-4;
    let (w, h) = (pred.width(), pred.height());
    let win = 8.min(w).min(h);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..=(h - win) {
        for wx in 0..=(w - win) {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..win {
                for dx in 0..win {
                    let a = pred.get(wx + dx, wy + dy);
                    let b = target.get(wx + dx, wy + dy);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            total += ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            windows += 1;
        }
    }
    total / windows as f64
}

/// Zero-level-set points of a sampled field: for every grid edge whose ends
/// change sign, the linearly interpolated crossing (marching-squares vertex
/// placement) in domain coordinates.
pub fn extract_zero_set(field: &Grid2) -> Vec<[f64; 2]> {
    let (w, h) = (field.width(), field.height());
    let mut pts = Vec::new();
    let neg = |v: f64| v < 0.0;
    for iy in 0..h {
        for ix in 0..w {
            let v0 = field.get(ix, iy);
            let p0 = pixel_to_domain(ix, iy, w, h);
            if ix + 1 < w {
                let v1 = field.get(ix + 1, iy);
                if neg(v0) != neg(v1) {
                    let t = v0 / (v0 - v1);
                    let p1 = pixel_to_domain(ix + 1, iy, w, h);
                    pts.push([p0.0 + t * (p1.0 - p0.0), p0.1]);
                }
            }
            if iy + 1 < h {
                let v1 = field.get(ix, iy + 1);
                if neg(v0) != neg(v1) {
                    let t = v0 / (v0 - v1);
                    let p1 = pixel_to_domain(ix, iy + 1, w, h);
                    pts.push([p0.0, p0.1 + t * (p1.1 - p0.1)]);
                }
            }
        }
    }
    pts
}

/// Symmetric mean of squared nearest-neighbor distances between two point
/// sets (squared convention).
pub fn chamfer_points(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::NoZeroCrossing { side: "first" });
    }
    if b.is_empty() {
        return Err(Error::NoZeroCrossing { side: "second" });
    }
    let one_way = |from: &[[f64; 2]], to: &[[f64; 2]]| -> f64 {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    Ok((one_way(a, b) + one_way(b, a)) / 2.0)
}

/// A scalar field with a gradient, for Chamfer and eikonal evaluation.
pub trait SdfField {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
}

/// The analytic oracle as a field.
pub struct AnalyticSdf<'a>(pub &'a ShapeSpec);

impl SdfField for AnalyticSdf<'_> {
    fn value(&self, x: [f64; 2]) -> f64 {
        analytic_sdf(self.0, x)
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        analytic_sdf_gradient(self.0, x)
    }
}

/// Rasterize a field at pixel centers of a res x res grid over [-1, 1]^2.
pub fn rasterize_field(field: &dyn SdfField, res: usize) -> Grid2 {
    Grid2::from_fn(res, res, |x, y| field.value([x, y]))
}

/// Chamfer distance between the zero sets of a predicted field and a task's
/// analytic shape, both extracted at the given grid resolution.
pub fn chamfer_2d(pred: &dyn SdfField, task: &Sdf2DTask, grid_res: usize) -> Result<f64> {
    assert!(grid_res >= 32, "chamfer grid resolution must be >= 32");
    let pred_pts = extract_zero_set(&rasterize_field(pred, grid_res));
    let oracle = AnalyticSdf(&task.shape);
    let true_pts = extract_zero_set(&rasterize_field(&oracle, grid_res));
    if pred_pts.is_empty() {
        return Err(Error::NoZeroCrossing { side: "predicted" });
    }
    if true_pts.is_empty() {
        return Err(Error::NoZeroCrossing { side: "analytic" });
    }
    chamfer_points(&pred_pts, &true_pts)
}

/// Mean | ||grad f|| - 1 | over the samples.
pub fn eikonal_residual(field: &dyn SdfField, samples: &[[f64; 2]]) -> f64 {
    assert!(!samples.is_empty());
    samples
        .iter()
        .map(|&x| {
            let g = field.gradient(x);
            ((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs()
        })
        .sum::<f64>()
        / samples.len() as f64
}

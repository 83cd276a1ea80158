//! Local feature descriptor conditioning the hypernetworks: multiscale
//! gradient-magnitude maps of the target signal, sampled continuously.
//!
//! Features are computed once from the target signal and frozen; they carry
//! no dependence on model parameters.

use crate::error::{Error, Result};
use crate::grid::Grid2;

pub const DEFAULT_SCALES: [usize; 3] = [0, 1, 2];

/// Per-scale gradient-magnitude maps, each normalized to max 1.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    scales: Vec<usize>,
    maps: Vec<Grid2>,
}

impl FeaturePyramid {
    pub fn scale_count(&self) -> usize {
        self.maps.len()
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn map(&self, i: usize) -> &Grid2 {
        &self.maps[i]
    }

    /// g(x): bilinear sample of every scale map, clamped at the boundary.
    pub fn local_features(&self, x: f64, y: f64) -> Vec<f64> {
        self.maps
            .iter()
            .map(|m| m.sample_bilinear(x, y))
            .collect()
    }

    /// A pyramid whose maps are identically zero (used by tests and by tasks
    /// with no usable signal gradients).
    pub fn flat(width: usize, height: usize, scale_count: usize) -> Self {
        FeaturePyramid {
            scales: (0..scale_count).collect(),
            maps: (0..scale_count)
                .map(|_| Grid2::zeros(width, height))
                .collect(),
        }
    }
}

/// Box-smooth at each scale radius, take the central-difference gradient
/// magnitude, and normalize each map independently to max 1 (all-zero maps
/// stay zero).
pub fn build_feature_pyramid(signal: &Grid2, scales: &[usize]) -> Result<FeaturePyramid> {
    if signal.width() < 3 || signal.height() < 3 {
        return Err(Error::BadGrid {
            context: format!(
                "feature pyramid needs extents >= 3, got {}x{}",
                signal.width(),
                signal.height()
            ),
        });
    }
    let maps = scales
        .iter()
        .map(|&r| {
            let smooth = box_smooth(signal, r);
            let mut mag = gradient_magnitude(&smooth);
            let max = mag.max_abs();
            if max > 0.0 {
                for v in mag.data_mut() {
                    *v /= max;
                }
            }
            mag
        })
        .collect();
    Ok(FeaturePyramid {
        scales: scales.to_vec(),
        maps,
    })
}

/// Mean over a (2r+1)^2 window with clamped borders; r = 0 is the identity.
fn box_smooth(grid: &Grid2, radius: usize) -> Grid2 {
    if radius == 0 {
        return grid.clone();
    }
    let (w, h) = (grid.width(), grid.height());
    let r = radius as isize;
    let mut out = Grid2::zeros(w, h);
    for iy in 0..h as isize {
        for ix in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = (iy + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let sx = (ix + dx).clamp(0, w as isize - 1) as usize;
                    acc += grid.get(sx, sy);
                }
            }
            out.set(
                ix as usize,
                iy as usize,
                acc / ((2 * r + 1) * (2 * r + 1)) as f64,
            );
        }
    }
    out
}

/// sqrt(gx^2 + gy^2) with central differences inside and one-sided differences
/// on the borders (per-map normalization makes the absolute scale irrelevant).
fn gradient_magnitude(grid: &Grid2) -> Grid2 {
    let (w, h) = (grid.width(), grid.height());
    let mut out = Grid2::zeros(w, h);
    for iy in 0..h {
        for ix in 0..w {
            let gx = if ix == 0 {
                grid.get(1, iy) - grid.get(0, iy)
            } else if ix == w - 1 {
                grid.get(w - 1, iy) - grid.get(w - 2, iy)
            } else {
                (grid.get(ix + 1, iy) - grid.get(ix - 1, iy)) / 2.0
            };
            let gy = if iy == 0 {
                grid.get(ix, 1) - grid.get(ix, 0)
            } else if iy == h - 1 {
                grid.get(ix, h - 1) - grid.get(ix, h - 2)
            } else {
                (grid.get(ix, iy + 1) - grid.get(ix, iy - 1)) / 2.0
            };
            out.set(ix, iy, (gx * gx + gy * gy).sqrt());
        }
    }
    out
}

//! Row-major 2D grids and the pixel-center coordinate convention.
//!
//! Pixel (ix, iy) of a W x H grid sits at domain position
//! `x = -1 + 2 (ix + 0.5) / W`, `y = -1 + 2 (iy + 0.5) / H`, so the grid
//! covers [-1, 1]^2 with half-pixel margins at the borders.

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid2 {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Grid2 {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Grid2::new(width, height, vec![0.0; width * height])
    }

    /// Fill from a function of domain coordinates at pixel centers.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for iy in 0..height {
            for ix in 0..width {
                let (x, y) = pixel_to_domain(ix, iy, width, height);
                data.push(f(x, y));
            }
        }
        Grid2::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.data[iy * self.width + ix] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Bilinear sample at domain coordinates, clamped to the covered area.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let px = domain_to_pixel(x, self.width).clamp(0.0, (self.width - 1) as f64);
        let py = domain_to_pixel(y, self.height).clamp(0.0, (self.height - 1) as f64);
        let x0 = px.floor() as usize;
        let y0 = py.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = px - x0 as f64;
        let fy = py - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Domain coordinates of a pixel center.
pub fn pixel_to_domain(ix: usize, iy: usize, width: usize, height: usize) -> (f64, f64) {
    (
        -1.0 + 2.0 * (ix as f64 + 0.5) / width as f64,
        -1.0 + 2.0 * (iy as f64 + 0.5) / height as f64,
    )
}

/// Continuous pixel coordinate along one axis (inverse of the center map).
pub fn domain_to_pixel(x: f64, extent: usize) -> f64 {
    (x + 1.0) / 2.0 * extent as f64 - 0.5
}

//! Fitting targets: bundled images, synthetic patterns, and analytic 2D
//! signed-distance fields, with the pixel-center coordinate convention.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{build_feature_pyramid, FeaturePyramid, DEFAULT_SCALES};
use crate::grid::{pixel_to_domain, Grid2};
use crate::io;

/// The bundled 64x64 texture shipped with the repository.
pub const TEXTURE64_PGM: &[u8] = include_bytes!("../fixtures/texture64.pgm");

// ── Image tasks ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ImageTask {
    /// 1 (grayscale) or 3 (RGB) channels with values in [0, 1].
    pub channels: Vec<Grid2>,
    /// Path or generator spec, echoed into run configs.
    pub source: String,
}

impl ImageTask {
    pub fn from_grid(grid: Grid2, source: &str) -> Self {
        ImageTask {
            channels: vec![grid],
            source: source.to_string(),
        }
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    /// Grayscale view used for feature extraction (Rec. 709 luma for RGB).
    pub fn luminance(&self) -> Grid2 {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let (w, h) = (self.width(), self.height());
        let mut data = Vec::with_capacity(w * h);
        for i in 0..w * h {
            data.push(
                0.2126 * self.channels[0].data()[i]
                    + 0.7152 * self.channels[1].data()[i]
                    + 0.0722 * self.channels[2].data()[i],
            );
        }
        Grid2::new(w, h, data)
    }
}

/// Load an 8- or 16-bit PGM or PNG, scaled to [0, 1].
pub fn load_image(path: &Path) -> Result<ImageTask> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let channels = match ext.as_str() {
        "pgm" => vec![io::pgm_read(path)?],
        "png" => io::png_read(path)?,
        other => {
            return Err(Error::ImageLoad {
                path: path.display().to_string(),
                reason: format!("unsupported extension `{other}` (want pgm or png)"),
            })
        }
    };
    for g in &channels {
        if g.width() < 2 || g.height() < 2 {
            return Err(Error::ImageLoad {
                path: path.display().to_string(),
                reason: "extents must be >= 2".into(),
            });
        }
    }
    Ok(ImageTask {
        channels,
        source: path.display().to_string(),
    })
}

// ── Synthetic signals ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SyntheticSpec {
    /// `cells` x `cells` alternating 0/1 blocks; cell (0,0) is 0.
    Checkerboard { cells: usize },
    /// Radial frequency sweep: instantaneous radial frequency ramps from
    /// omega_min at the center to omega_max (cycles per domain extent),
    /// with a smooth amplitude taper toward the corners. Linear-FM spectra
    /// spread slightly past the instantaneous band; the bundled (2, 24)@64
    /// setting measures its 99% radial bandwidth within one bin of
    /// omega_max.
    RadialChirp { omega_min: f64, omega_max: f64 },
    /// Max-combined Gaussian bumps with peak value 1 at pixel centers.
    GaussianBumps { count: usize, sigma: f64 },
}

/// Deterministically rasterize a synthetic signal; `resolution` must be a
/// power of two so spectral measurements apply directly.
pub fn make_synthetic(spec: &SyntheticSpec, resolution: usize) -> Result<Grid2> {
    if !resolution.is_power_of_two() || resolution < 4 {
        return Err(Error::InvalidConfig {
            reason: format!("synthetic resolution must be a power of two >= 4, got {resolution}"),
        });
    }
    let n = resolution;
    Ok(match *spec {
        SyntheticSpec::Checkerboard { cells } => {
            if cells == 0 || cells > n {
                return Err(Error::InvalidConfig {
                    reason: format!("checkerboard cells must be in 1..={n}"),
                });
            }
            let mut data = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    let cx = ix * cells / n;
                    let cy = iy * cells / n;
                    data.push(((cx + cy) % 2) as f64);
                }
            }
            Grid2::new(n, n, data)
        }
        SyntheticSpec::RadialChirp {
            omega_min,
            omega_max,
        } => {
            if !(omega_min >= 0.0 && omega_max > omega_min) {
                return Err(Error::InvalidConfig {
                    reason: "radial chirp needs 0 <= omega_min < omega_max".into(),
                });
            }
            if omega_max >= n as f64 / 2.0 {
                return Err(Error::InvalidConfig {
                    reason: format!("omega_max {omega_max} reaches Nyquist at resolution {n}"),
                });
            }
            // Quadratic phase ramp in grid-fraction radius, reaching
            // omega_max at RAMP_END; smootherstep amplitude taper so the
            // non-periodic corners fade out.
            const RAMP_END: f64 = 0.6;
            const FADE_START: f64 = 0.45;
            const FADE_END: f64 = 0.68;
            let smootherstep = |t: f64| {
                let t = t.clamp(0.0, 1.0);
                t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
            };
            let mut data = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    let u = (ix as f64 + 0.5) / n as f64 - 0.5;
                    let v = (iy as f64 + 0.5) / n as f64 - 0.5;
                    let rho = (u * u + v * v).sqrt();
                    let r = rho.min(RAMP_END);
                    let phase = omega_min * r
                        + (omega_max - omega_min) * r * r / (2.0 * RAMP_END)
                        + omega_max * (rho - RAMP_END).max(0.0);
                    let amp = 1.0 - smootherstep((rho - FADE_START) / (FADE_END - FADE_START));
                    data.push(0.5 + 0.5 * amp * (2.0 * PI * phase).sin());
                }
            }
            Grid2::new(n, n, data)
        }
        SyntheticSpec::GaussianBumps { count, sigma } => {
            if count == 0 || sigma <= 0.0 {
                return Err(Error::InvalidConfig {
                    reason: "gaussian bumps need count >= 1 and sigma > 0".into(),
                });
            }
            // Bump centers snap to pixel centers so each peak samples to 1.
            let mut centers = Vec::with_capacity(count);
            if count == 1 {
                centers.push((n / 2, n / 2));
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(0x42);
                for _ in 0..count {
                    centers.push((rng.gen_range(0..n), rng.gen_range(0..n)));
                }
            }
            let mut data = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    let (x, y) = pixel_to_domain(ix, iy, n, n);
                    let mut v: f64 = 0.0;
                    for &(cx, cy) in &centers {
                        let (bx, by) = pixel_to_domain(cx, cy, n, n);
                        let r2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                        v = v.max((-r2 / (2.0 * sigma * sigma)).exp());
                    }
                    data.push(v);
                }
            }
            Grid2::new(n, n, data)
        }
    })
}

// ── Analytic signed distance fields ──────────────────────────────────

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ShapeSpec {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Rect {
        center: [f64; 2],
        half_extents: [f64; 2],
    },
    /// min(a, b); exact outside, approximate near interior seams.
    Union {
        a: Box<ShapeSpec>,
        b: Box<ShapeSpec>,
    },
    /// max(a, -b); approximate SDF, documented convention.
    Difference {
        a: Box<ShapeSpec>,
        b: Box<ShapeSpec>,
    },
}

impl ShapeSpec {
    pub fn primitive_count(&self) -> usize {
        match self {
            ShapeSpec::Circle { .. } | ShapeSpec::Rect { .. } => 1,
            ShapeSpec::Union { a, b } | ShapeSpec::Difference { a, b } => {
                a.primitive_count() + b.primitive_count()
            }
        }
    }
}

/// Signed distance: negative inside, positive outside, exact for primitives.
pub fn analytic_sdf(shape: &ShapeSpec, x: [f64; 2]) -> f64 {
    match shape {
        ShapeSpec::Circle { center, radius } => {
            let dx = x[0] - center[0];
            let dy = x[1] - center[1];
            (dx * dx + dy * dy).sqrt() - radius
        }
        ShapeSpec::Rect {
            center,
            half_extents,
        } => {
            let qx = (x[0] - center[0]).abs() - half_extents[0];
            let qy = (x[1] - center[1]).abs() - half_extents[1];
            let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
            outside + qx.max(qy).min(0.0)
        }
        ShapeSpec::Union { a, b } => analytic_sdf(a, x).min(analytic_sdf(b, x)),
        ShapeSpec::Difference { a, b } => analytic_sdf(a, x).max(-analytic_sdf(b, x)),
    }
}

/// Gradient of the signed distance, following the active branch. Unit norm
/// away from medial axes and centers.
pub fn analytic_sdf_gradient(shape: &ShapeSpec, x: [f64; 2]) -> [f64; 2] {
    match shape {
        ShapeSpec::Circle { center, .. } => {
            let dx = x[0] - center[0];
            let dy = x[1] - center[1];
            let r = (dx * dx + dy * dy).sqrt();
            if r == 0.0 {
                [1.0, 0.0]
            } else {
                [dx / r, dy / r]
            }
        }
        ShapeSpec::Rect {
            center,
            half_extents,
        } => {
            let rx = x[0] - center[0];
            let ry = x[1] - center[1];
            let qx = rx.abs() - half_extents[0];
            let qy = ry.abs() - half_extents[1];
            if qx > 0.0 || qy > 0.0 {
                let ox = qx.max(0.0) * rx.signum();
                let oy = qy.max(0.0) * ry.signum();
                let n = (ox * ox + oy * oy).sqrt();
                [ox / n, oy / n]
            } else if qx > qy {
                [rx.signum(), 0.0]
            } else {
                [0.0, ry.signum()]
            }
        }
        ShapeSpec::Union { a, b } => {
            if analytic_sdf(a, x) <= analytic_sdf(b, x) {
                analytic_sdf_gradient(a, x)
            } else {
                analytic_sdf_gradient(b, x)
            }
        }
        ShapeSpec::Difference { a, b } => {
            if analytic_sdf(a, x) >= -analytic_sdf(b, x) {
                analytic_sdf_gradient(a, x)
            } else {
                let g = analytic_sdf_gradient(b, x);
                [-g[0], -g[1]]
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sdf2DTask {
    pub shape: ShapeSpec,
    pub resolution: usize,
    /// Rasterized signed distances at pixel centers (feature extraction and
    /// evaluation use this grid).
    pub grid: Grid2,
    /// Pixel indices with |sdf| below the oversampling band.
    pub near_boundary: Vec<(usize, usize)>,
    pub source: String,
}

/// Fraction of the domain half-width that counts as "near the boundary" for
/// the 4:1 oversampling mixture.
pub const SDF_BOUNDARY_BAND: f64 = 0.1;

impl Sdf2DTask {
    pub fn new(shape: ShapeSpec, resolution: usize, source: &str) -> Result<Self> {
        if shape.primitive_count() > 4 {
            return Err(Error::InvalidConfig {
                reason: "sdf shapes are limited to 4 primitives".into(),
            });
        }
        let grid = Grid2::from_fn(resolution, resolution, |x, y| analytic_sdf(&shape, [x, y]));
        if !grid.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig {
                reason: "shape has empty interior within [-1,1]^2".into(),
            });
        }
        let mut near_boundary = Vec::new();
        for iy in 0..resolution {
            for ix in 0..resolution {
                if grid.get(ix, iy).abs() < SDF_BOUNDARY_BAND {
                    near_boundary.push((ix, iy));
                }
            }
        }
        if near_boundary.is_empty() {
            return Err(Error::InvalidConfig {
                reason: "no pixels near the zero level set".into(),
            });
        }
        Ok(Sdf2DTask {
            shape,
            resolution,
            grid,
            near_boundary,
            source: source.to_string(),
        })
    }
}

// ── The unified task type ────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum Task {
    Image(ImageTask),
    Sdf(Sdf2DTask),
}

impl Task {
    pub fn width(&self) -> usize {
        match self {
            Task::Image(t) => t.width(),
            Task::Sdf(t) => t.resolution,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Task::Image(t) => t.height(),
            Task::Sdf(t) => t.resolution,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Task::Image(t) => t.channels.len(),
            Task::Sdf(_) => 1,
        }
    }

    pub fn source(&self) -> &str {
        match self {
            Task::Image(t) => &t.source,
            Task::Sdf(t) => &t.source,
        }
    }

    pub fn is_sdf(&self) -> bool {
        matches!(self, Task::Sdf(_))
    }

    /// Target values at a pixel.
    pub fn target_at(&self, ix: usize, iy: usize) -> Vec<f64> {
        match self {
            Task::Image(t) => t.channels.iter().map(|c| c.get(ix, iy)).collect(),
            Task::Sdf(t) => vec![t.grid.get(ix, iy)],
        }
    }

    /// Draw one training pixel. Images sample uniformly; SDF tasks mix 4
    /// near-boundary draws per uniform draw.
    pub fn sample_pixel(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        match self {
            Task::Image(_) => (rng.gen_range(0..self.width()), rng.gen_range(0..self.height())),
            Task::Sdf(t) => {
                if rng.gen_range(0..5) < 4 {
                    t.near_boundary[rng.gen_range(0..t.near_boundary.len())]
                } else {
                    (rng.gen_range(0..self.width()), rng.gen_range(0..self.height()))
                }
            }
        }
    }

    /// Feature pyramid of the target signal (luminance for RGB, raw signed
    /// distances for SDF tasks).
    pub fn pyramid(&self) -> Result<Arc<FeaturePyramid>> {
        let grid = match self {
            Task::Image(t) => t.luminance(),
            Task::Sdf(t) => t.grid.clone(),
        };
        Ok(Arc::new(build_feature_pyramid(&grid, &DEFAULT_SCALES)?))
    }

    /// Grayscale target grid for metric evaluation (channel mean for RGB).
    pub fn target_grid(&self) -> Grid2 {
        match self {
            Task::Image(t) => {
                if t.channels.len() == 1 {
                    t.channels[0].clone()
                } else {
                    let (w, h) = (t.width(), t.height());
                    let mut data = vec![0.0; w * h];
                    for c in &t.channels {
                        for (acc, v) in data.iter_mut().zip(c.data()) {
                            *acc += v / t.channels.len() as f64;
                        }
                    }
                    Grid2::new(w, h, data)
                }
            }
            Task::Sdf(t) => t.grid.clone(),
        }
    }

    /// Stable fingerprint of the task contents (FNV-1a over the raster).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.source().as_bytes());
        match self {
            Task::Image(t) => {
                for c in &t.channels {
                    for v in c.data() {
                        eat(&v.to_le_bytes());
                    }
                }
            }
            Task::Sdf(t) => {
                for v in t.grid.data() {
                    eat(&v.to_le_bytes());
                }
            }
        }
        h
    }
}

/// Parse a task spec string.
///
/// Forms: `bundled:texture64`, `bundled:chirp64`, `bundled:bump16`,
/// `image:<path>`, `checker:<cells>@<res>`, `chirp:<min>-<max>@<res>`,
/// `bumps:<count>@<res>`, `sdf:circle`, `sdf:box`, `sdf:notched-box`.
pub fn parse_task_spec(spec: &str) -> Result<Task> {
    let bad = |reason: String| Error::InvalidConfig { reason };
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| bad(format!("task spec `{spec}` has no kind prefix")))?;
    match kind {
        "bundled" => match rest {
            "texture64" => Ok(Task::Image(ImageTask::from_grid(
                io::pgm_decode(TEXTURE64_PGM, "bundled:texture64")?,
                spec,
            ))),
            "chirp64" => Ok(Task::Image(ImageTask::from_grid(
                make_synthetic(
                    &SyntheticSpec::RadialChirp {
                        omega_min: 2.0,
                        omega_max: 24.0,
                    },
                    64,
                )?,
                spec,
            ))),
            "bump16" => Ok(Task::Image(ImageTask::from_grid(
                make_synthetic(
                    &SyntheticSpec::GaussianBumps {
                        count: 1,
                        sigma: 0.5,
                    },
                    16,
                )?,
                spec,
            ))),
            other => Err(bad(format!("unknown bundled task `{other}`"))),
        },
        "image" => load_image(Path::new(rest)).map(Task::Image),
        "checker" => {
            let (cells, res) = rest
                .split_once('@')
                .ok_or_else(|| bad(format!("want checker:<cells>@<res>, got `{rest}`")))?;
            let cells = cells.parse().map_err(|_| bad("bad cell count".into()))?;
            let res = res.parse().map_err(|_| bad("bad resolution".into()))?;
            Ok(Task::Image(ImageTask::from_grid(
                make_synthetic(&SyntheticSpec::Checkerboard { cells }, res)?,
                spec,
            )))
        }
        "chirp" => {
            let (range, res) = rest
                .split_once('@')
                .ok_or_else(|| bad(format!("want chirp:<min>-<max>@<res>, got `{rest}`")))?;
            let (lo, hi) = range
                .split_once('-')
                .ok_or_else(|| bad("want <min>-<max>".into()))?;
            Ok(Task::Image(ImageTask::from_grid(
                make_synthetic(
                    &SyntheticSpec::RadialChirp {
                        omega_min: lo.parse().map_err(|_| bad("bad min".into()))?,
                        omega_max: hi.parse().map_err(|_| bad("bad max".into()))?,
                    },
                    res.parse().map_err(|_| bad("bad resolution".into()))?,
                )?,
                spec,
            )))
        }
        "bumps" => {
            let (count, res) = rest
                .split_once('@')
                .ok_or_else(|| bad(format!("want bumps:<count>@<res>, got `{rest}`")))?;
            Ok(Task::Image(ImageTask::from_grid(
                make_synthetic(
                    &SyntheticSpec::GaussianBumps {
                        count: count.parse().map_err(|_| bad("bad count".into()))?,
                        sigma: 0.2,
                    },
                    res.parse().map_err(|_| bad("bad resolution".into()))?,
                )?,
                spec,
            )))
        }
        "sdf" => {
            let shape = match rest {
                "circle" => ShapeSpec::Circle {
                    center: [0.0, 0.0],
                    radius: 0.5,
                },
                "box" => ShapeSpec::Rect {
                    center: [0.0, 0.0],
                    half_extents: [0.45, 0.3],
                },
                "notched-box" => ShapeSpec::Difference {
                    a: Box::new(ShapeSpec::Rect {
                        center: [0.0, 0.0],
                        half_extents: [0.5, 0.35],
                    }),
                    b: Box::new(ShapeSpec::Circle {
                        center: [0.35, 0.25],
                        radius: 0.25,
                    }),
                },
                other => return Err(bad(format!("unknown sdf shape `{other}`"))),
            };
            Ok(Task::Sdf(Sdf2DTask::new(shape, 64, spec)?))
        }
        other => Err(bad(format!("unknown task kind `{other}`"))),
    }
}

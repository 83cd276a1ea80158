//! Discrete Fourier machinery: unitary radix-2 2D DFT, radial energy
//! bandwidth, the effective-bandwidth product, and the affine
//! change-of-variables verification on synthetic band-limited signals.
//!
//! Spectral grids sample u = (ix/W, iy/H) in [0,1)^2, so an integer
//! frequency vector is exactly periodic and lands on a single bin pair.
//! Frequencies are in cycles per domain extent.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::linalg::SquareMat;

/// Unitary 2D DFT coefficients (row-major, bin (kx, ky) at ky * width + kx).
#[derive(Debug, Clone)]
pub struct Spectrum {
    width: usize,
    height: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coeff(&self, kx: usize, ky: usize) -> (f64, f64) {
        let i = ky * self.width + kx;
        (self.re[i], self.im[i])
    }

    /// Coefficient at a signed frequency pair (wrapping negative bins).
    pub fn coeff_signed(&self, fx: i64, fy: i64) -> (f64, f64) {
        let kx = fx.rem_euclid(self.width as i64) as usize;
        let ky = fy.rem_euclid(self.height as i64) as usize;
        self.coeff(kx, ky)
    }

    pub fn energy(&self, kx: usize, ky: usize) -> f64 {
        let (re, im) = self.coeff(kx, ky);
        re * re + im * im
    }

    pub fn total_energy(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum()
    }

    /// Signed frequency of a bin index along an axis of extent n.
    pub fn signed_freq(k: usize, n: usize) -> i64 {
        if k <= n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    /// CSV rows of (f_x, f_y, |coeff|).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_x,freq_y,magnitude\n");
        for ky in 0..self.height {
            for kx in 0..self.width {
                let (re, im) = self.coeff(kx, ky);
                out.push_str(&format!(
                    "{},{},{}\n",
                    Self::signed_freq(kx, self.width),
                    Self::signed_freq(ky, self.height),
                    (re * re + im * im).sqrt()
                ));
            }
        }
        out
    }
}

fn is_pow2(n: usize) -> bool {
    n >= 2 && n.is_power_of_two()
}

/// Unitary 2D DFT. Extents must be powers of two, each >= 2.
pub fn dft2(signal: &Grid2) -> Result<Spectrum> {
    let (w, h) = (signal.width(), signal.height());
    if !is_pow2(w) || !is_pow2(h) {
        return Err(Error::NotPowerOfTwo { extents: vec![w, h] });
    }
    let mut re = signal.data().to_vec();
    let mut im = vec![0.0; w * h];
    fft2_inplace(&mut re, &mut im, w, h, false);
    let scale = 1.0 / ((w * h) as f64).sqrt();
    for v in re.iter_mut().chain(im.iter_mut()) {
        *v *= scale;
    }
    Ok(Spectrum {
        width: w,
        height: h,
        re,
        im,
    })
}

/// Inverse of [`dft2`]; returns the real part (imaginary residue is roundoff
/// for spectra of real signals).
pub fn idft2(spectrum: &Spectrum) -> Grid2 {
    let (w, h) = (spectrum.width, spectrum.height);
    let mut re = spectrum.re.clone();
    let mut im = spectrum.im.clone();
    fft2_inplace(&mut re, &mut im, w, h, true);
    let scale = 1.0 / ((w * h) as f64).sqrt();
    for v in &mut re {
        *v *= scale;
    }
    Grid2::new(w, h, re)
}

fn fft2_inplace(re: &mut [f64], im: &mut [f64], w: usize, h: usize, inverse: bool) {
    // Rows.
    for y in 0..h {
        fft_inplace(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], inverse);
    }
    // Columns, through a scratch buffer.
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            cr[y] = re[y * w + x];
            ci[y] = im[y * w + x];
        }
        fft_inplace(&mut cr, &mut ci, inverse);
        for y in 0..h {
            re[y * w + x] = cr[y];
            im[y * w + x] = ci[y];
        }
    }
}

/// Iterative radix-2 Cooley-Tukey, length a power of two.
fn fft_inplace(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cur_r, mut cur_i) = (1.0, 0.0);
            for k in 0..len / 2 {
                let a = i + k;
                let b = i + k + len / 2;
                let tr = re[b] * cur_r - im[b] * cur_i;
                let ti = re[b] * cur_i + im[b] * cur_r;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let nr = cur_r * wr - cur_i * wi;
                cur_i = cur_r * wi + cur_i * wr;
                cur_r = nr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Smallest radius R such that bins with ||f|| <= R hold at least `p` of the
/// total energy. Zero spectra report 0.
pub fn radial_bandwidth(spectrum: &Spectrum, energy_fraction: f64) -> f64 {
    assert!(
        energy_fraction > 0.0 && energy_fraction < 1.0,
        "energy fraction must be in (0, 1)"
    );
    let total = spectrum.total_energy();
    if total == 0.0 {
        return 0.0;
    }
    // Group bins by exact squared radius so ties accumulate together.
    let mut by_r2: Vec<(i64, f64)> = Vec::new();
    for ky in 0..spectrum.height {
        let fy = Spectrum::signed_freq(ky, spectrum.height);
        for kx in 0..spectrum.width {
            let fx = Spectrum::signed_freq(kx, spectrum.width);
            by_r2.push((fx * fx + fy * fy, spectrum.energy(kx, ky)));
        }
    }
    by_r2.sort_by_key(|(r2, _)| *r2);
    let mut cum = 0.0;
    let mut i = 0;
    while i < by_r2.len() {
        let r2 = by_r2[i].0;
        while i < by_r2.len() && by_r2[i].0 == r2 {
            cum += by_r2[i].1;
            i += 1;
        }
        if cum >= energy_fraction * total {
            return (r2 as f64).sqrt();
        }
    }
    (by_r2.last().unwrap().0 as f64).sqrt()
}

/// The effective-bandwidth product: operator norm of the inverse-map Jacobian
/// (transposed) times the signal bandwidth.
pub fn effective_bandwidth(inverse_jacobian_norm: f64, signal_bandwidth: f64) -> f64 {
    assert!(inverse_jacobian_norm >= 0.0 && signal_bandwidth >= 0.0);
    inverse_jacobian_norm * signal_bandwidth
}

/// Pointwise variant over a set of forward-map Jacobians: each sample maps to
/// ||J^-T||_2 * bandwidth, with the inverse taken where det is nonzero.
pub fn effective_bandwidth_field(
    jacobians: &[SquareMat],
    signal_bandwidth: f64,
    spectral_iterations: usize,
) -> Result<Vec<f64>> {
    jacobians
        .iter()
        .map(|j| {
            let inv = j.inverse()?;
            // The spectral norm is transpose-invariant.
            Ok(effective_bandwidth(
                inv.spectral_norm(spectral_iterations),
                signal_bandwidth,
            ))
        })
        .collect()
}

/// One sinusoidal component of a synthetic band-limited signal.
#[derive(Debug, Clone, Copy)]
pub struct Tone {
    /// Integer-valued frequency vector in cycles per domain.
    pub freq: [f64; 2],
    pub amplitude: f64,
    pub phase: f64,
}

/// Evaluate a tone list at an arbitrary point of the unit domain.
pub fn tones_at(tones: &[Tone], u: [f64; 2]) -> f64 {
    tones
        .iter()
        .map(|t| t.amplitude * (2.0 * PI * (t.freq[0] * u[0] + t.freq[1] * u[1]) + t.phase).sin())
        .sum()
}

/// Sample a tone list on the spectral grid.
pub fn tone_grid(width: usize, height: usize, tones: &[Tone]) -> Grid2 {
    let mut data = Vec::with_capacity(width * height);
    for iy in 0..height {
        for ix in 0..width {
            data.push(tones_at(
                tones,
                [ix as f64 / width as f64, iy as f64 / height as f64],
            ));
        }
    }
    Grid2::new(width, height, data)
}

/// The bundled two-tone band-limited fixture used by the verification suite.
pub fn bundled_two_tone() -> (usize, Vec<Tone>) {
    (
        64,
        vec![
            Tone {
                freq: [4.0, 0.0],
                amplitude: 1.0,
                phase: 0.3,
            },
            Tone {
                freq: [0.0, 8.0],
                amplitude: 0.5,
                phase: 1.1,
            },
        ],
    )
}

/// Verify the change-of-variables identity for an affine warp T(x) = A x on a
/// band-limited tone signal at grid resolution n.
///
/// The warped signal s~ = s o T^-1 is evaluated analytically from the tone
/// list (no interpolation), so each tone of frequency f moves to A^-T f
/// exactly. For periodic unit tones the |det J| density factor of the
/// continuous identity cancels against the resampling measure, so mapped-bin
/// coefficients must match one-to-one; the returned value is the largest
/// relative coefficient error, folded together with the relative off-bin
/// residual energy.
pub fn affine_cov_check(n: usize, tones: &[Tone], a: &SquareMat) -> Result<f64> {
    assert_eq!(a.dim(), 2);
    let a_inv = a.inverse()?;
    let a_inv_t = a_inv.transpose();

    // Predicted frequency mapping f -> A^-T f; must stay strictly below
    // Nyquist and land on integer bins for an exact statement.
    let nyquist = n as f64 / 2.0;
    let mut mapped = Vec::with_capacity(tones.len());
    for t in tones {
        let f = a_inv_t.apply(&t.freq);
        for c in &f {
            if c.abs() >= nyquist {
                return Err(Error::NyquistViolation {
                    freq: c.abs(),
                    nyquist,
                });
            }
            if (c - c.round()).abs() > 1e-9 {
                return Err(Error::InvalidConfig {
                    reason: format!("mapped frequency {c} does not land on a bin"),
                });
            }
        }
        mapped.push([f[0].round() as i64, f[1].round() as i64]);
    }
    for t in tones {
        for c in &t.freq {
            if c.abs() >= nyquist {
                return Err(Error::NyquistViolation {
                    freq: c.abs(),
                    nyquist,
                });
            }
        }
    }

    let original = dft2(&tone_grid(n, n, tones))?;
    // s~(u) = s(A^-1 u), evaluated exactly from the tone list.
    let mut warped_data = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let u = [ix as f64 / n as f64, iy as f64 / n as f64];
            let v = a_inv.apply(&u);
            warped_data.push(tones_at(tones, [v[0], v[1]]));
        }
    }
    let warped = dft2(&Grid2::new(n, n, warped_data))?;

    let mut max_rel = 0.0_f64;
    let mut predicted_energy = 0.0;
    for (t, fm) in tones.iter().zip(&mapped) {
        let fo = [t.freq[0].round() as i64, t.freq[1].round() as i64];
        for conj in [1i64, -1] {
            let (or, oi) = original.coeff_signed(conj * fo[0], conj * fo[1]);
            let (wr, wi) = warped.coeff_signed(conj * fm[0], conj * fm[1]);
            let denom = (or * or + oi * oi).sqrt().max(1e-30);
            let diff = ((wr - or).powi(2) + (wi - oi).powi(2)).sqrt();
            max_rel = max_rel.max(diff / denom);
            let (pr, pi) = warped.coeff_signed(conj * fm[0], conj * fm[1]);
            predicted_energy += pr * pr + pi * pi;
        }
    }
    let residual = (warped.total_energy() - predicted_energy).abs();
    let total = warped.total_energy().max(1e-30);
    Ok(max_rel.max((residual / total).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_grid_has_single_dc_coefficient() {
        let n = 16;
        let c = 0.7;
        let s = dft2(&Grid2::new(n, n, vec![c; n * n])).unwrap();
        let (re, im) = s.coeff(0, 0);
        assert!((re - c * n as f64).abs() < 1e-10);
        assert!(im.abs() < 1e-10);
        let off_dc: f64 = s.total_energy() - s.energy(0, 0);
        assert!(off_dc.abs() < 1e-18);
    }

    #[test]
    fn pure_sinusoid_concentrates_at_its_radius() {
        let g = tone_grid(
            64,
            64,
            &[Tone {
                freq: [4.0, 0.0],
                amplitude: 1.0,
                phase: 0.0,
            }],
        );
        let s = dft2(&g).unwrap();
        let at_bins = s.energy(4, 0) + s.energy(60, 0);
        let total = s.total_energy();
        assert!(at_bins / total > 1.0 - 1e-12, "{}", at_bins / total);
        assert_eq!(radial_bandwidth(&s, 0.5), 4.0);
        assert_eq!(radial_bandwidth(&s, 0.99), 4.0);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let g = Grid2::new(12, 16, vec![0.0; 192]);
        assert!(matches!(dft2(&g), Err(Error::NotPowerOfTwo { .. })));
    }

    #[test]
    fn round_trip_recovers_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid2::new(32, 32, (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let back = idft2(&dft2(&g).unwrap());
        let max_err = g
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_err < 1e-10, "{max_err}");
    }

    #[test]
    fn parseval_holds_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..25 {
            let g = Grid2::new(16, 16, (0..256).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let sig: f64 = g.data().iter().map(|v| v * v).sum();
            let spec = dft2(&g).unwrap().total_energy();
            assert!((sig - spec).abs() <= 1e-9 * sig.max(1.0), "{sig} vs {spec}");
        }
    }

    #[test]
    fn constant_signal_has_zero_bandwidth() {
        let s = dft2(&Grid2::new(8, 8, vec![2.0; 64])).unwrap();
        assert_eq!(radial_bandwidth(&s, 0.99), 0.0);
    }

    #[test]
    fn all_zero_spectrum_reports_zero() {
        let s = dft2(&Grid2::new(8, 8, vec![0.0; 64])).unwrap();
        assert_eq!(radial_bandwidth(&s, 0.5), 0.0);
    }

    #[test]
    fn two_tone_bandwidth_uses_the_outer_tone() {
        // Equal-energy tones at radii 2 and 8, p = 0.99 -> 8.
        let g = tone_grid(
            64,
            64,
            &[
                Tone {
                    freq: [2.0, 0.0],
                    amplitude: 1.0,
                    phase: 0.2,
                },
                Tone {
                    freq: [0.0, 8.0],
                    amplitude: 1.0,
                    phase: 0.9,
                },
            ],
        );
        let s = dft2(&g).unwrap();
        assert_eq!(radial_bandwidth(&s, 0.99), 8.0);
        // And p small enough to be satisfied by the inner tone alone.
        assert_eq!(radial_bandwidth(&s, 0.4), 2.0);
    }

    #[test]
    fn bandwidth_is_monotone_in_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid2::new(32, 32, (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let s = dft2(&g).unwrap();
        let mut last = 0.0;
        for p in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let b = radial_bandwidth(&s, p);
            assert!(b >= last);
            last = b;
        }
    }

    #[test]
    fn effective_bandwidth_is_the_product() {
        assert_eq!(effective_bandwidth(1.0, 10.0), 10.0);
        assert_eq!(effective_bandwidth(0.5, 10.0), 5.0);
        assert_eq!(effective_bandwidth(2.0, 3.0), 6.0);
    }

    #[test]
    fn effective_bandwidth_field_inverts_the_jacobian() {
        let j = SquareMat::new(2, vec![0.5, 0.0, 0.0, 1.0]);
        let field = effective_bandwidth_field(&[j], 10.0, 50).unwrap();
        // ||J^-1|| = 2 -> 20.
        assert!((field[0] - 20.0).abs() < 1e-9);
        let singular = SquareMat::new(2, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(effective_bandwidth_field(&[singular], 1.0, 50).is_err());
    }

    #[test]
    fn identity_affine_check_is_exact() {
        let (n, tones) = bundled_two_tone();
        let err = affine_cov_check(n, &tones, &SquareMat::identity(2)).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn halving_map_doubles_the_dominant_radius() {
        // T(x) = x/2, so the warped signal is s(2x): radius 4 -> 8.
        let tones = [Tone {
            freq: [4.0, 0.0],
            amplitude: 1.0,
            phase: 0.0,
        }];
        let a = SquareMat::new(2, vec![0.5, 0.0, 0.0, 0.5]);
        let err = affine_cov_check(64, &tones, &a).unwrap();
        assert!(err < 1e-9, "{err}");
        // Direct spectral confirmation of the predicted bin shift.
        let mut warped = Vec::new();
        for iy in 0..64 {
            for ix in 0..64 {
                warped.push(tones_at(
                    &tones,
                    [2.0 * ix as f64 / 64.0, 2.0 * iy as f64 / 64.0],
                ));
            }
        }
        let s = dft2(&Grid2::new(64, 64, warped)).unwrap();
        assert_eq!(radial_bandwidth(&s, 0.5), 8.0);
    }

    #[test]
    fn anisotropic_stretch_matches_predictions() {
        let (n, tones) = bundled_two_tone();
        let a = SquareMat::new(2, vec![2.0, 0.0, 0.0, 1.0]);
        let err = affine_cov_check(n, &tones, &a).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn nyquist_violation_is_detected_before_computing() {
        let tones = [Tone {
            freq: [20.0, 0.0],
            amplitude: 1.0,
            phase: 0.0,
        }];
        // A^-T scales frequencies by 4: 80 >= Nyquist 32.
        let a = SquareMat::new(2, vec![0.25, 0.0, 0.0, 0.25]);
        assert!(matches!(
            affine_cov_check(64, &tones, &a),
            Err(Error::NyquistViolation { .. })
        ));
    }

    /// Bandwidth contraction: resampling through T(x) = s x with s < 1
    /// contracts the measured bandwidth accordingly (one-bin slack).
    #[test]
    fn bandwidth_contraction_property() {
        let tones = [
            Tone {
                freq: [8.0, 0.0],
                amplitude: 1.0,
                phase: 0.1,
            },
            Tone {
                freq: [0.0, 12.0],
                amplitude: 0.7,
                phase: 0.8,
            },
            Tone {
                freq: [4.0, 4.0],
                amplitude: 0.4,
                phase: 1.7,
            },
        ];
        let n = 64;
        let original = dft2(&tone_grid(n, n, &tones)).unwrap();
        let omega = radial_bandwidth(&original, 0.99);
        for scale in [0.25, 0.5] {
            let mut data = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    data.push(tones_at(
                        &tones,
                        [scale * ix as f64 / n as f64, scale * iy as f64 / n as f64],
                    ));
                }
            }
            let warped = dft2(&Grid2::new(n, n, data)).unwrap();
            let warped_bw = radial_bandwidth(&warped, 0.99);
            assert!(
                warped_bw <= scale * omega + 1.0,
                "scale {scale}: {warped_bw} vs {}",
                scale * omega + 1.0
            );
        }
    }
}

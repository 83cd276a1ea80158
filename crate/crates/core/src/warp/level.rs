//! One warp level: a residual, tanh-bounded displacement field whose
//! parameters come from a small hypernetwork conditioned on local features.
//!
//! Displacement form at level l (base frequency w_l = 2^(l-1) pi):
//!
//!   x' = x + alpha_l * tanh( A x + b + sum_f c_f sin(w_l <k_f, x> + p_f) )
//!
//! with fixed unit directions k_f and (A, b, c_f, p_f) packed into the
//! parameter vector phi. phi = 0 gives x' = x exactly. Linear mode (a test
//! mode) drops the tanh bound so that with zero atom amplitudes the map is
//! exactly `x' = x + (A x + b)`, and with a single atom it realizes the
//! analytic sine-warp fixtures without clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::SquareMat;

/// Warp coordinate dimension. All bundled tasks are planar.
pub const DIM: usize = 2;

/// Fixed unit atom directions: axis-aligned plus the two diagonals.
pub const ATOM_DIRECTIONS: [[f64; 2]; 4] = [
    [1.0, 0.0],
    [0.0, 1.0],
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
];

/// Packed parameter width for one level: A (4) + b (2) + amplitudes (2F) +
/// phases (F).
pub fn phi_dim(atom_count: usize) -> usize {
    DIM * DIM + DIM + atom_count * (DIM + 1)
}

/// Base angular frequency of the sinusoidal atoms at a 1-based level index.
pub fn base_frequency(index: usize) -> f64 {
    (1u64 << (index - 1)) as f64 * std::f64::consts::PI
}

/// Two affine layers with a tanh in between; the output layer starts at zero
/// so predictions vanish at initialization.
#[derive(Debug, Clone)]
pub struct HyperNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl HyperNet {
    pub fn init(input_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (input_dim + hidden) as f64).sqrt();
        let w1: Vec<f64> = (0..input_dim * hidden)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let b1: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-limit..limit)).collect();
        HyperNet {
            w1: Tensor::new(vec![input_dim, hidden], w1),
            b1: Tensor::new(vec![hidden], b1),
            w2: Tensor::zeros(vec![hidden, output_dim]),
            b2: Tensor::zeros(vec![output_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w1.numel() + self.b1.numel() + self.w2.numel() + self.b2.numel()
    }

    /// Forward pass on the tape. `g` is [B, input_dim]. The stored tensors
    /// act as constants; to train, build a copy whose tensors are tracked
    /// leaves and call this on the copy.
    pub fn predict_tape(&self, tape: &mut Tape, g: &Tensor) -> Result<Tensor> {
        let h = tape.matmul(g, &self.w1)?;
        let h = tape.bias_add(&h, &self.b1)?;
        let h = tape.tanh(&h)?;
        let out = tape.matmul(&h, &self.w2)?;
        tape.bias_add(&out, &self.b2)
    }

    /// Copy whose tensors are tracked leaves on the tape.
    pub fn tracked(&self, tape: &mut Tape) -> HyperNet {
        HyperNet {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }

    /// Plain forward pass for one feature vector.
    pub fn predict_plain(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "hyper-predict",
                lhs: vec![g.len()],
                rhs: vec![self.input_dim()],
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "hypernetwork input features".into(),
            });
        }
        let hidden = self.b1.numel();
        let out_dim = self.output_dim();
        let mut h = self.b1.data().to_vec();
        for (p, &gv) in g.iter().enumerate() {
            let row = &self.w1.data()[p * hidden..(p + 1) * hidden];
            for (hv, &wv) in h.iter_mut().zip(row) {
                *hv += gv * wv;
            }
        }
        for v in &mut h {
            *v = v.tanh();
        }
        let mut out = self.b2.data().to_vec();
        for (p, &hv) in h.iter().enumerate() {
            let row = &self.w2.data()[p * out_dim..(p + 1) * out_dim];
            for (ov, &wv) in out.iter_mut().zip(row) {
                *ov += hv * wv;
            }
        }
        Ok(out)
    }
}

/// Where a level's displacement parameters come from.
#[derive(Debug, Clone)]
pub enum ParamSource {
    /// Predicted per sample from local features.
    Hyper(HyperNet),
    /// A fixed parameter vector (analytic and linear-mode test warps).
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct WarpLevel {
    /// 1-based level index; sets the atom base frequency.
    pub index: usize,
    /// Displacement amplitude cap.
    pub alpha: f64,
    pub atom_count: usize,
    /// Test mode: displacement is exactly `A x + b`.
    pub linear: bool,
    pub source: ParamSource,
}

impl WarpLevel {
    pub fn phi_dim(&self) -> usize {
        phi_dim(self.atom_count)
    }

    /// phi for one point (hyper-predicted or fixed).
    pub fn phi_at(&self, g: &[f64]) -> Result<Vec<f64>> {
        match &self.source {
            ParamSource::Hyper(h) => h.predict_plain(g),
            ParamSource::Fixed(phi) => Ok(phi.clone()),
        }
    }

    /// Plain application of the level map at one point for a given phi.
    pub fn apply_plain(&self, u: &[f64; DIM], phi: &[f64]) -> [f64; DIM] {
        let p = PhiView::new(phi, self.atom_count);
        let inner = self.inner(u, &p);
        let mut out = *u;
        if self.linear {
            for i in 0..DIM {
                out[i] += inner[i];
            }
        } else {
            for i in 0..DIM {
                out[i] += self.alpha * inner[i].tanh();
            }
        }
        out
    }

    /// Analytic Jacobian of the level map w.r.t. its input, phi held fixed.
    pub fn jacobian_plain(&self, u: &[f64; DIM], phi: &[f64]) -> SquareMat {
        let p = PhiView::new(phi, self.atom_count);
        let w = base_frequency(self.index);
        // d inner_i / d u_j
        let mut dinner = [[0.0; DIM]; DIM];
        for i in 0..DIM {
            for j in 0..DIM {
                dinner[i][j] = p.a(i, j);
            }
        }
        for f in 0..self.atom_count {
            let k = ATOM_DIRECTIONS[f];
            let arg = w * (k[0] * u[0] + k[1] * u[1]) + p.phase(f);
            let c = w * arg.cos();
            for i in 0..DIM {
                for j in 0..DIM {
                    dinner[i][j] += p.amp(f, i) * k[j] * c;
                }
            }
        }
        let mut jac = SquareMat::identity(DIM);
        if self.linear {
            for i in 0..DIM {
                for j in 0..DIM {
                    jac.set(i, j, jac.get(i, j) + dinner[i][j]);
                }
            }
        } else {
            let inner = self.inner(u, &p);
            for i in 0..DIM {
                let tp = 1.0 - inner[i].tanh().powi(2);
                for j in 0..DIM {
                    jac.set(i, j, jac.get(i, j) + self.alpha * tp * dinner[i][j]);
                }
            }
        }
        jac
    }

    fn inner(&self, u: &[f64; DIM], p: &PhiView<'_>) -> [f64; DIM] {
        let w = base_frequency(self.index);
        let mut inner = [0.0; DIM];
        for i in 0..DIM {
            inner[i] = p.b(i) + p.a(i, 0) * u[0] + p.a(i, 1) * u[1];
        }
        for f in 0..self.atom_count {
            let k = ATOM_DIRECTIONS[f];
            let s = (w * (k[0] * u[0] + k[1] * u[1]) + p.phase(f)).sin();
            for i in 0..DIM {
                inner[i] += p.amp(f, i) * s;
            }
        }
        inner
    }
}

/// Index helper over the packed phi layout.
struct PhiView<'a> {
    phi: &'a [f64],
    atoms: usize,
}

impl<'a> PhiView<'a> {
    fn new(phi: &'a [f64], atoms: usize) -> Self {
        assert_eq!(phi.len(), phi_dim(atoms), "phi length mismatch");
        PhiView { phi, atoms }
    }
    fn a(&self, i: usize, j: usize) -> f64 {
        self.phi[i * DIM + j]
    }
    fn b(&self, i: usize) -> f64 {
        self.phi[DIM * DIM + i]
    }
    fn amp(&self, f: usize, i: usize) -> f64 {
        self.phi[DIM * DIM + DIM + f * DIM + i]
    }
    fn phase(&self, f: usize) -> f64 {
        self.phi[DIM * DIM + DIM + self.atoms * DIM + f]
    }
}

/// Tape nodes produced while applying one level; reused by the differentiable
/// Jacobian penalty so forward work is shared.
pub struct LevelTrace {
    /// The level's input coordinates [B, 2].
    pub input: Tensor,
    /// Packed phi [B, phi_dim].
    pub phi: Tensor,
    /// sin arguments per atom [B, 1].
    pub sin_args: Vec<Tensor>,
    /// Pre-tanh displacement components, one [B, 1] per axis.
    pub inner: Vec<Tensor>,
    /// The level's output coordinates [B, 2].
    pub output: Tensor,
}

/// Batched tape application: `u` is [B, 2], `phi` is [B, phi_dim]. Either may
/// be tracked (geometry passes track `u`; training tracks the hypernetwork
/// parameters feeding `phi`).
pub fn level_apply_tape(
    tape: &mut Tape,
    level: &WarpLevel,
    u: &Tensor,
    phi: &Tensor,
) -> Result<LevelTrace> {
    let w = base_frequency(level.index);
    let f_count = level.atom_count;
    let ux = tape.slice(u, 0, 1)?;
    let uy = tape.slice(u, 1, 1)?;

    let mut sin_args = Vec::with_capacity(f_count);
    let mut sins = Vec::with_capacity(f_count);
    for f in 0..f_count {
        let k = ATOM_DIRECTIONS[f];
        let kx = tape.scalar_mul(&ux, k[0] * w)?;
        let ky = tape.scalar_mul(&uy, k[1] * w)?;
        let dot = tape.add(&kx, &ky)?;
        let phase = tape.slice(phi, DIM * DIM + DIM + f_count * DIM + f, 1)?;
        let arg = tape.add(&dot, &phase)?;
        sins.push(tape.sin(&arg)?);
        sin_args.push(arg);
    }

    let mut inner = Vec::with_capacity(DIM);
    for i in 0..DIM {
        let ai0 = tape.slice(phi, i * DIM, 1)?;
        let ai1 = tape.slice(phi, i * DIM + 1, 1)?;
        let bi = tape.slice(phi, DIM * DIM + i, 1)?;
        let t0 = tape.mul(&ai0, &ux)?;
        let t1 = tape.mul(&ai1, &uy)?;
        let mut acc = tape.add(&t0, &t1)?;
        acc = tape.add(&acc, &bi)?;
        for f in 0..f_count {
            let amp = tape.slice(phi, DIM * DIM + DIM + f * DIM + i, 1)?;
            let term = tape.mul(&amp, &sins[f])?;
            acc = tape.add(&acc, &term)?;
        }
        inner.push(acc);
    }

    let output = if level.linear {
        let disp = tape.concat(&[&inner[0], &inner[1]])?;
        tape.add(u, &disp)?
    } else {
        let stacked = tape.concat(&[&inner[0], &inner[1]])?;
        let bounded = tape.tanh(&stacked)?;
        let scaled = tape.scalar_mul(&bounded, level.alpha)?;
        tape.add(u, &scaled)?
    };

    Ok(LevelTrace {
        input: u.clone(),
        phi: phi.clone(),
        sin_args,
        inner,
        output,
    })
}

/// Differentiable squared Frobenius norm of the level Jacobian over the
/// batch, `deviation` mode measuring ||J - I||_F^2 and `literal` measuring
/// ||J||_F^2. Returns a scalar tensor (mean over the batch).
pub fn level_jacobian_frobenius_tape(
    tape: &mut Tape,
    level: &WarpLevel,
    trace: &LevelTrace,
    deviation: bool,
) -> Result<Tensor> {
    let w = base_frequency(level.index);
    let f_count = level.atom_count;

    // cos of the shared sin arguments, for d inner / d u.
    let coses: Vec<Tensor> = trace
        .sin_args
        .iter()
        .map(|arg| tape.cos(arg))
        .collect::<Result<_>>()?;

    // tanh'(inner_i) = 1 - tanh(inner_i)^2 per axis (nonlinear mode only).
    let mut tanh_primes = Vec::with_capacity(DIM);
    if !level.linear {
        for i in 0..DIM {
            let t = tape.tanh(&trace.inner[i])?;
            let sq = tape.square(&t)?;
            let neg = tape.scalar_mul(&sq, -1.0)?;
            tanh_primes.push(tape.scalar_add(&neg, 1.0)?);
        }
    }

    let mut total: Option<Tensor> = None;
    for i in 0..DIM {
        for j in 0..DIM {
            // d inner_i / d u_j = A_ij + sum_f amp_fi * k_fj * w * cos_f
            let aij = tape.slice(&trace.phi, i * DIM + j, 1)?;
            let mut dinner = aij;
            for f in 0..f_count {
                let amp = tape.slice(&trace.phi, DIM * DIM + DIM + f * DIM + i, 1)?;
                let prod = tape.mul(&amp, &coses[f])?;
                let term = tape.scalar_mul(&prod, ATOM_DIRECTIONS[f][j] * w)?;
                dinner = tape.add(&dinner, &term)?;
            }
            // Off-diagonal deviation entry; diagonal gains +1 in literal mode.
            let dev = if level.linear {
                dinner
            } else {
                let scaled = tape.mul(&tanh_primes[i], &dinner)?;
                tape.scalar_mul(&scaled, level.alpha)?
            };
            let entry = if deviation || i != j {
                dev
            } else {
                tape.scalar_add(&dev, 1.0)?
            };
            let sq = tape.square(&entry)?;
            let m = tape.mean(&sq)?;
            total = Some(match total {
                Some(t) => tape.add(&t, &m)?,
                None => m,
            });
        }
    }
    Ok(total.expect("DIM >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fixed_level(phi: Vec<f64>, linear: bool) -> WarpLevel {
        WarpLevel {
            index: 1,
            alpha: 0.3,
            atom_count: 4,
            linear,
            source: ParamSource::Fixed(phi),
        }
    }

    #[test]
    fn zero_phi_is_the_identity() {
        let level = fixed_level(vec![0.0; phi_dim(4)], false);
        for u in [[0.0, 0.0], [0.5, -0.7], [-1.0, 1.0]] {
            assert_eq!(level.apply_plain(&u, &vec![0.0; phi_dim(4)]), u);
        }
    }

    #[test]
    fn zero_init_hypernetwork_predicts_zero_phi() {
        let h = HyperNet::init(3, 8, phi_dim(4), 99);
        let phi = h.predict_plain(&[0.3, 0.9, 0.1]).unwrap();
        assert!(phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hyper_predict_is_deterministic_and_matches_scalar_reference() {
        let mut h = HyperNet::init(3, 4, 5, 7);
        // Give the output layer nonzero weights so the bias path is exercised.
        h.w2 = Tensor::new(vec![4, 5], (0..20).map(|i| 0.01 * i as f64).collect());
        h.b2 = Tensor::new(vec![5], vec![0.1, -0.2, 0.3, 0.0, 0.5]);
        let g = [0.0, 0.0, 0.0];
        let phi = h.predict_plain(&g).unwrap();
        let phi2 = h.predict_plain(&g).unwrap();
        assert_eq!(phi, phi2);
        // Straight-line re-evaluation: tanh(b1) through w2 plus b2.
        let hidden: Vec<f64> = h.b1.data().iter().map(|v| v.tanh()).collect();
        for j in 0..5 {
            let mut acc = h.b2.data()[j];
            for (p, hv) in hidden.iter().enumerate() {
                acc += hv * h.w2.data()[p * 5 + j];
            }
            assert!((phi[j] - acc).abs() < 1e-15);
        }
    }

    #[test]
    fn hyper_predict_rejects_wrong_feature_length() {
        let h = HyperNet::init(3, 4, 5, 7);
        assert!(h.predict_plain(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn linear_mode_is_exact_affine() {
        let mut phi = vec![0.0; phi_dim(4)];
        phi[4] = 0.1; // b_x
        let level = fixed_level(phi.clone(), true);
        let out = level.apply_plain(&[0.0, 0.0], &phi);
        assert_eq!(out, [0.1, 0.0]);
    }

    #[test]
    fn one_dimensional_sine_section_matches_analytic_value() {
        // x + a sin(pi x) along the first axis: amplitude on atom 0 only.
        let a = 2.0 / std::f64::consts::PI;
        let mut phi = vec![0.0; phi_dim(4)];
        phi[6] = a; // atom 0, x component
        let level = WarpLevel {
            index: 1,
            alpha: 1.0,
            atom_count: 4,
            linear: true, // unbounded, so the section is exactly x + a sin(pi x)
            source: ParamSource::Fixed(phi.clone()),
        };
        let out = level.apply_plain(&[0.5, 0.0], &phi);
        assert!((out[0] - (0.5 + a)).abs() < 1e-15, "{}", out[0]);
    }

    #[test]
    fn plain_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..50 {
            let phi: Vec<f64> = (0..phi_dim(4)).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let level = WarpLevel {
                index: 1 + trial % 3,
                alpha: 0.3,
                atom_count: 4,
                linear: trial % 5 == 0,
                source: ParamSource::Fixed(phi.clone()),
            };
            let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let jac = level.jacobian_plain(&u, &phi);
            let h = 1e-6;
            for j in 0..DIM {
                let mut up = u;
                up[j] += h;
                let mut dn = u;
                dn[j] -= h;
                let fp = level.apply_plain(&up, &phi);
                let fm = level.apply_plain(&dn, &phi);
                for i in 0..DIM {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!(
                        (jac.get(i, j) - fd).abs() < 1e-7,
                        "trial {trial} J[{i}][{j}]: {} vs {}",
                        jac.get(i, j),
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn tape_apply_matches_plain_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let phi: Vec<f64> = (0..phi_dim(4)).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let level = fixed_level(phi.clone(), false);
        let batch = 6;
        let pts: Vec<f64> = (0..batch * DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let u = Tensor::new(vec![batch, DIM], pts.clone());
        let mut phi_b = Vec::with_capacity(batch * phi.len());
        for _ in 0..batch {
            phi_b.extend_from_slice(&phi);
        }
        let phi_t = Tensor::new(vec![batch, phi.len()], phi_b);
        let trace = level_apply_tape(&mut tape, &level, &u, &phi_t).unwrap();
        for s in 0..batch {
            let u_s = [pts[s * DIM], pts[s * DIM + 1]];
            let expect = level.apply_plain(&u_s, &phi);
            for i in 0..DIM {
                let got = trace.output.data()[s * DIM + i];
                assert!((got - expect[i]).abs() < 1e-14, "{got} vs {}", expect[i]);
            }
        }
    }

    #[test]
    fn frobenius_penalty_matches_plain_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let phi: Vec<f64> = (0..phi_dim(4)).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let level = fixed_level(phi.clone(), false);
        let batch = 5;
        let pts: Vec<f64> = (0..batch * DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let u = Tensor::new(vec![batch, DIM], pts.clone());
        let mut phi_b = Vec::with_capacity(batch * phi.len());
        for _ in 0..batch {
            phi_b.extend_from_slice(&phi);
        }
        let phi_t = Tensor::new(vec![batch, phi.len()], phi_b);
        let trace = level_apply_tape(&mut tape, &level, &u, &phi_t).unwrap();

        for deviation in [true, false] {
            let pen = level_jacobian_frobenius_tape(&mut tape, &level, &trace, deviation)
                .unwrap()
                .item();
            let mut expect = 0.0;
            for s in 0..batch {
                let u_s = [pts[s * DIM], pts[s * DIM + 1]];
                let jac = level.jacobian_plain(&u_s, &phi);
                let m = if deviation {
                    jac.sub(&SquareMat::identity(DIM)).frobenius_sq()
                } else {
                    jac.frobenius_sq()
                };
                expect += m;
            }
            expect /= batch as f64;
            assert!((pen - expect).abs() < 1e-12, "dev={deviation}: {pen} vs {expect}");
        }
    }
}

//! The implicit field network: a compact sinusoidal MLP with optional FiLM
//! modulation, plus a ReLU MLP over positional encodings as the baseline.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderVariant {
    Sinusoidal,
    ReluPositionalEncoding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    /// Number of affine layers; the last one is linear, the rest feed the
    /// activation. Must be >= 2.
    pub depth: usize,
    pub output_dim: usize,
    /// Frequency scale applied to every sine pre-activation.
    pub omega0: f64,
    pub variant: DecoderVariant,
    /// Frequency count K of the positional encoding (baseline variant only).
    pub pe_frequency_count: usize,
    /// Documented proxy for the maximum representable frequency of the
    /// decoder. Metadata only; never used in computation.
    pub nominal_bandwidth: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            input_dim: 2,
            hidden_width: 128,
            depth: 4,
            output_dim: 1,
            omega0: 30.0,
            variant: DecoderVariant::Sinusoidal,
            pe_frequency_count: 6,
            nominal_bandwidth: 0.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("decoder depth must be >= 2, got {}", self.depth),
            });
        }
        if self.hidden_width == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig {
                reason: "decoder extents must be positive".into(),
            });
        }
        if self.omega0 <= 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("omega0 must be positive, got {}", self.omega0),
            });
        }
        if self.variant == DecoderVariant::ReluPositionalEncoding && self.pe_frequency_count == 0 {
            return Err(Error::InvalidConfig {
                reason: "positional encoding needs at least one frequency".into(),
            });
        }
        Ok(())
    }

    /// Width of the first affine layer's input.
    pub fn first_layer_input(&self) -> usize {
        match self.variant {
            DecoderVariant::Sinusoidal => self.input_dim,
            DecoderVariant::ReluPositionalEncoding => {
                2 * self.input_dim * self.pe_frequency_count
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut fan_in = self.first_layer_input();
        for l in 0..self.depth {
            let fan_out = if l == self.depth - 1 {
                self.output_dim
            } else {
                self.hidden_width
            };
            total += fan_in * fan_out + fan_out;
            fan_in = fan_out;
        }
        total
    }
}

/// Decoder parameters: one (weight [in, out], bias [out]) pair per layer.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Per-layer modulation: pre-activation `p` becomes `gamma ⊙ p + beta` after
/// the affine map and before the sine. Batched: each tensor is [B, width].
#[derive(Debug, Clone)]
pub struct FilmParams {
    pub gammas: Vec<Tensor>,
    pub betas: Vec<Tensor>,
}

impl FilmParams {
    pub fn layer_count(&self) -> usize {
        self.gammas.len()
    }
}

/// Sample decoder parameters.
///
/// Sinusoidal variant: first layer uniform in [-1/d, 1/d], later layers
/// uniform in [-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0]. Baseline
/// variant: uniform in +-sqrt(6/fan_in). Biases follow the weight ranges.
pub fn init_decoder(config: &DecoderConfig, seed: u64) -> Result<Decoder> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(config.depth);
    let mut fan_in = config.first_layer_input();
    for l in 0..config.depth {
        let fan_out = if l == config.depth - 1 {
            config.output_dim
        } else {
            config.hidden_width
        };
        let limit = match config.variant {
            DecoderVariant::Sinusoidal => {
                if l == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / config.omega0
                }
            }
            DecoderVariant::ReluPositionalEncoding => (6.0 / fan_in as f64).sqrt(),
        };
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        layers.push((
            Tensor::new(vec![fan_in, fan_out], w),
            Tensor::new(vec![fan_out], b),
        ));
        fan_in = fan_out;
    }
    Ok(Decoder {
        config: config.clone(),
        layers,
    })
}

/// sin(2^k pi x_i), cos(2^k pi x_i) for k = 0..K-1, concatenated per
/// coordinate (coordinate-major, then frequency, sin before cos).
pub fn positional_encode(x: &[f64], num_freqs: usize) -> Vec<f64> {
    assert!(num_freqs >= 1);
    let mut out = Vec::with_capacity(2 * x.len() * num_freqs);
    for &xi in x {
        for k in 0..num_freqs {
            let arg = (1u64 << k) as f64 * PI * xi;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Positional encoding of a batched coordinate tensor [B, d] on the tape,
/// matching the scalar layout of [`positional_encode`].
pub fn positional_encode_tape(tape: &mut Tape, z: &Tensor, num_freqs: usize) -> Result<Tensor> {
    let d = *z.shape().last().unwrap();
    let mut parts = Vec::with_capacity(2 * d * num_freqs);
    for i in 0..d {
        let zi = tape.slice(z, i, 1)?;
        for k in 0..num_freqs {
            let arg = tape.scalar_mul(&zi, (1u64 << k) as f64 * PI)?;
            parts.push(tape.sin(&arg)?);
            parts.push(tape.cos(&arg)?);
        }
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    tape.concat(&refs)
}

/// Forward pass on the tape. `z` is [B, input_dim]; layer tensors may be
/// tracked leaves (training) or constants (inference). FiLM, when present,
/// must carry depth-1 layer pairs.
pub fn decode(
    tape: &mut Tape,
    config: &DecoderConfig,
    layers: &[(Tensor, Tensor)],
    z: &Tensor,
    film: Option<&FilmParams>,
) -> Result<Tensor> {
    if z.shape().last() != Some(&config.input_dim) {
        return Err(Error::ShapeMismatch {
            op: "decode",
            lhs: z.shape().to_vec(),
            rhs: vec![config.input_dim],
        });
    }
    if let Some(f) = film {
        if f.layer_count() != config.depth - 1 {
            return Err(Error::ShapeMismatch {
                op: "decode-film",
                lhs: vec![f.layer_count()],
                rhs: vec![config.depth - 1],
            });
        }
    }
    let mut h = match config.variant {
        DecoderVariant::Sinusoidal => z.clone(),
        DecoderVariant::ReluPositionalEncoding => {
            positional_encode_tape(tape, z, config.pe_frequency_count)?
        }
    };
    for (l, (w, b)) in layers.iter().enumerate() {
        let affine = tape.matmul(&h, w)?;
        let mut pre = tape.bias_add(&affine, b)?;
        if l == config.depth - 1 {
            return Ok(pre);
        }
        if let Some(f) = film {
            let scaled = tape.mul(&f.gammas[l], &pre)?;
            pre = tape.add(&scaled, &f.betas[l])?;
        }
        h = match config.variant {
            DecoderVariant::Sinusoidal => {
                let arg = tape.scalar_mul(&pre, config.omega0)?;
                tape.sin(&arg)?
            }
            DecoderVariant::ReluPositionalEncoding => tape.relu(&pre)?,
        };
    }
    unreachable!("depth >= 2 guarantees the loop returns at the final layer");
}

/// Plain (tape-free) forward pass for one sample. Used by evaluation sweeps;
/// tests verify it against the tape path and against a straight-line oracle.
pub fn decode_plain(
    config: &DecoderConfig,
    layers: &[(Tensor, Tensor)],
    z: &[f64],
    film: Option<&[(Vec<f64>, Vec<f64>)]>,
) -> Vec<f64> {
    let mut h = match config.variant {
        DecoderVariant::Sinusoidal => z.to_vec(),
        DecoderVariant::ReluPositionalEncoding => {
            positional_encode(z, config.pe_frequency_count)
        }
    };
    for (l, (w, b)) in layers.iter().enumerate() {
        let fan_in = w.shape()[0];
        let fan_out = w.shape()[1];
        let mut pre = b.data().to_vec();
        for (p, &hv) in h.iter().enumerate().take(fan_in) {
            let row = &w.data()[p * fan_out..(p + 1) * fan_out];
            for (o, &wv) in pre.iter_mut().zip(row) {
                *o += hv * wv;
            }
        }
        if l == config.depth - 1 {
            return pre;
        }
        if let Some(f) = film {
            let (gamma, beta) = &f[l];
            for (i, v) in pre.iter_mut().enumerate() {
                *v = gamma[i] * *v + beta[i];
            }
        }
        h = pre
            .iter()
            .map(|&v| match config.variant {
                DecoderVariant::Sinusoidal => (config.omega0 * v).sin(),
                DecoderVariant::ReluPositionalEncoding => v.max(0.0),
            })
            .collect();
    }
    unreachable!()
}

//! The hierarchical coordinate transformation: an ordered composition of
//! warp levels, each conditioned on local features of the original point.
//!
//! Features are looked up once per sample at the original x and enter the
//! tape as constants, so coordinate Jacobians are taken with the per-point
//! warp parameters held fixed (the conditioning field varies on the feature
//! grid scale and is treated as locally constant). The reverse-mode Jacobian
//! and the finite-difference oracle both differentiate that same map.

use std::sync::Arc;

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::features::FeaturePyramid;
use crate::linalg::SquareMat;

use super::level::{
    level_apply_tape, level_jacobian_frobenius_tape, phi_dim, HyperNet, LevelTrace, ParamSource,
    WarpLevel, DIM,
};

/// How the penalty treats the per-level Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// ||J - I||_F^2: penalizes deviation from the identity (default).
    Deviation,
    /// ||J||_F^2: the literal form, kept for fidelity experiments.
    Literal,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WarpStackConfig {
    /// Number of levels L; 0 means the identity transform.
    pub levels: usize,
    /// Feature vector length the hypernetworks consume.
    pub feature_dim: usize,
    /// Hidden width of each level's hypernetwork.
    pub hyper_hidden: usize,
    /// Sinusoidal atoms per level (1..=4).
    pub atom_count: usize,
    /// Displacement caps per level; halving defaults are appended as needed.
    pub alphas: Vec<f64>,
    /// Per-level regularization weights.
    pub lambdas: Vec<f64>,
    /// Test mode: unbounded displacement (exact affine maps).
    pub linear_mode: bool,
}

impl Default for WarpStackConfig {
    fn default() -> Self {
        WarpStackConfig {
            levels: 3,
            feature_dim: 3,
            hyper_hidden: 12,
            atom_count: 4,
            alphas: vec![],
            lambdas: vec![],
            linear_mode: false,
        }
    }
}

impl WarpStackConfig {
    /// Coarse levels move more: 0.3, 0.15, 0.075, ...
    pub fn alpha_for(&self, index: usize) -> f64 {
        self.alphas
            .get(index - 1)
            .copied()
            .unwrap_or(0.3 / (1u64 << (index - 1)) as f64)
    }

    pub fn lambda_for(&self, index: usize) -> f64 {
        self.lambdas.get(index - 1).copied().unwrap_or(1e-3)
    }
}

#[derive(Debug, Clone)]
pub struct WarpStack {
    pub config: WarpStackConfig,
    pub levels: Vec<WarpLevel>,
    pub pyramid: Arc<FeaturePyramid>,
}

/// Fresh stack with zero-initialized hypernetwork output layers, so the
/// whole transform is exactly the identity.
pub fn init_warp_stack(
    config: &WarpStackConfig,
    pyramid: Arc<FeaturePyramid>,
    seed: u64,
) -> WarpStack {
    assert!(
        (1..=4).contains(&config.atom_count),
        "atom count must be in 1..=4"
    );
    let levels = (1..=config.levels)
        .map(|index| WarpLevel {
            index,
            alpha: config.alpha_for(index),
            atom_count: config.atom_count,
            linear: config.linear_mode,
            source: ParamSource::Hyper(HyperNet::init(
                config.feature_dim,
                config.hyper_hidden,
                phi_dim(config.atom_count),
                // Independent parameter streams per level.
                seed ^ (0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(index as u64)),
            )),
        })
        .collect();
    WarpStack {
        config: config.clone(),
        levels,
        pyramid,
    }
}

/// Stack built from fixed per-level parameter vectors (test warps).
pub fn fixed_warp_stack(
    levels: Vec<(usize, Vec<f64>, f64, bool)>,
    atom_count: usize,
    pyramid: Arc<FeaturePyramid>,
) -> WarpStack {
    let levels = levels
        .into_iter()
        .map(|(index, phi, alpha, linear)| WarpLevel {
            index,
            alpha,
            atom_count,
            linear,
            source: ParamSource::Fixed(phi),
        })
        .collect();
    WarpStack {
        config: WarpStackConfig::default(),
        levels,
        pyramid,
    }
}

impl WarpStack {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn param_count(&self) -> usize {
        self.levels
            .iter()
            .map(|l| match &l.source {
                ParamSource::Hyper(h) => h.param_count(),
                ParamSource::Fixed(_) => 0,
            })
            .sum()
    }

    /// g(x) for one point; the empty vector when the stack has no levels.
    pub fn features_at(&self, x: &[f64; DIM]) -> Vec<f64> {
        self.pyramid.local_features(x[0], x[1])
    }

    /// Per-level phi vectors for one point, conditioning on g(original x).
    pub fn phis_at(&self, x: &[f64; DIM]) -> Result<Vec<Vec<f64>>> {
        let g = self.features_at(x);
        self.levels.iter().map(|l| l.phi_at(&g)).collect()
    }

    /// z = T(x) plus per-level intermediates x_0 = x, x_1, ..., x_L = z.
    pub fn apply_with_intermediates(&self, x: &[f64; DIM]) -> Result<([f64; DIM], Vec<[f64; DIM]>)> {
        let phis = self.phis_at(x)?;
        let mut u = *x;
        let mut intermediates = Vec::with_capacity(self.levels.len() + 1);
        intermediates.push(u);
        for (level, phi) in self.levels.iter().zip(&phis) {
            u = level.apply_plain(&u, phi);
            intermediates.push(u);
        }
        Ok((u, intermediates))
    }

    pub fn apply(&self, x: &[f64; DIM]) -> Result<[f64; DIM]> {
        Ok(self.apply_with_intermediates(x)?.0)
    }

    /// Chain-product Jacobian of the frozen-parameter composition at x,
    /// evaluated in closed form. Matches the reverse-mode path to roundoff.
    pub fn jacobian_closed_form(&self, x: &[f64; DIM]) -> Result<SquareMat> {
        let phis = self.phis_at(x)?;
        let mut u = *x;
        let mut jac = SquareMat::identity(DIM);
        for (level, phi) in self.levels.iter().zip(&phis) {
            let jl = level.jacobian_plain(&u, phi);
            jac = jl.matmul(&jac);
            u = level.apply_plain(&u, phi);
        }
        Ok(jac)
    }

    /// Reverse-mode Jacobians for a batch of points: one tape, then one
    /// backward pass per output component.
    pub fn jacobians_reverse_mode(&self, points: &[[f64; DIM]]) -> Result<Vec<SquareMat>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let b = points.len();
        let mut tape = Tape::new();
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = tape.leaf(&Tensor::new(vec![b, DIM], flat));
        let phis = self.batched_phis(&mut tape, points, false)?;
        let (z, _traces) = self.apply_tape(&mut tape, &x, &phis)?;

        let mut rows = Vec::with_capacity(DIM);
        for j in 0..DIM {
            let comp = tape.slice(&z, j, 1)?;
            let total = tape.sum(&comp)?;
            let grads = tape.backward(&total)?;
            rows.push(grads.for_tensor(&x)?);
        }
        let mut out = Vec::with_capacity(b);
        for s in 0..b {
            let mut m = SquareMat::zeros(DIM);
            for (i, row) in rows.iter().enumerate() {
                for j in 0..DIM {
                    m.set(i, j, row.data()[s * DIM + j]);
                }
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Per-point phi tensors, either as constants (geometry passes) or routed
    /// through tracked hypernetwork leaves (training).
    pub fn batched_phis(
        &self,
        tape: &mut Tape,
        points: &[[f64; DIM]],
        track_params: bool,
    ) -> Result<Vec<Tensor>> {
        let b = points.len();
        if track_params {
            let mut g_flat = Vec::with_capacity(b * self.config.feature_dim);
            for p in points {
                g_flat.extend(self.features_at(p));
            }
            let g = Tensor::new(vec![b, self.config.feature_dim], g_flat);
            self.levels
                .iter()
                .map(|level| match &level.source {
                    ParamSource::Hyper(h) => {
                        let tracked = h.tracked(tape);
                        tracked.predict_tape(tape, &g)
                    }
                    ParamSource::Fixed(phi) => Ok(broadcast_phi(phi, b)),
                })
                .collect()
        } else {
            let mut per_level: Vec<Vec<f64>> =
                vec![Vec::with_capacity(b * phi_dim(self.config.atom_count)); self.levels.len()];
            for p in points {
                let phis = self.phis_at(p)?;
                for (acc, phi) in per_level.iter_mut().zip(&phis) {
                    acc.extend_from_slice(phi);
                }
            }
            Ok(self
                .levels
                .iter()
                .zip(per_level)
                .map(|(level, flat)| Tensor::new(vec![b, level.phi_dim()], flat))
                .collect())
        }
    }

    /// Batched tape application through all levels.
    pub fn apply_tape(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        phis: &[Tensor],
    ) -> Result<(Tensor, Vec<LevelTrace>)> {
        let mut u = x.clone();
        let mut traces = Vec::with_capacity(self.levels.len());
        for (level, phi) in self.levels.iter().zip(phis) {
            let trace = level_apply_tape(tape, level, &u, phi)?;
            u = trace.output.clone();
            traces.push(trace);
        }
        Ok((u, traces))
    }

    /// Differentiable L_Jac: sum over levels of lambda_l times the batch-mean
    /// squared Frobenius norm of the level Jacobian (deviation or literal).
    pub fn jacobian_penalty_tape(
        &self,
        tape: &mut Tape,
        traces: &[LevelTrace],
        mode: PenaltyMode,
    ) -> Result<Option<Tensor>> {
        let mut total: Option<Tensor> = None;
        for (idx, (level, trace)) in self.levels.iter().zip(traces).enumerate() {
            let fro = level_jacobian_frobenius_tape(
                tape,
                level,
                trace,
                mode == PenaltyMode::Deviation,
            )?;
            let weighted = tape.scalar_mul(&fro, self.config.lambda_for(idx + 1))?;
            total = Some(match total {
                Some(t) => tape.add(&t, &weighted)?,
                None => weighted,
            });
        }
        Ok(total)
    }

    /// L_Jac evaluated in closed form (no tape) at the given points.
    pub fn jacobian_penalty_value(&self, points: &[[f64; DIM]], mode: PenaltyMode) -> Result<f64> {
        if self.levels.is_empty() || points.is_empty() {
            return Ok(0.0);
        }
        let eye = SquareMat::identity(DIM);
        let mut per_level = vec![0.0; self.levels.len()];
        for p in points {
            let phis = self.phis_at(p)?;
            let mut u = *p;
            for (l, (level, phi)) in self.levels.iter().zip(&phis).enumerate() {
                let jac = level.jacobian_plain(&u, phi);
                per_level[l] += match mode {
                    PenaltyMode::Deviation => jac.sub(&eye).frobenius_sq(),
                    PenaltyMode::Literal => jac.frobenius_sq(),
                };
                u = level.apply_plain(&u, phi);
            }
        }
        Ok(per_level
            .iter()
            .enumerate()
            .map(|(l, acc)| self.config.lambda_for(l + 1) * acc / points.len() as f64)
            .sum())
    }
}

fn broadcast_phi(phi: &[f64], batch: usize) -> Tensor {
    let mut flat = Vec::with_capacity(batch * phi.len());
    for _ in 0..batch {
        flat.extend_from_slice(phi);
    }
    Tensor::new(vec![batch, phi.len()], flat)
}

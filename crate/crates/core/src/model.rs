//! The full model: a warp stack and per-layer FiLM hypernetworks feeding the
//! sinusoidal decoder. Ablation switches reduce it to a bare decoder.
//!
//! FiLM heads mirror the warp hierarchy: head l modulates decoder layer l.
//! Each head emits (gamma - 1, beta) per sample, zero-initialized, so a
//! fresh model computes exactly what the bare decoder computes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::decoder::{decode, decode_plain, init_decoder, Decoder, DecoderConfig, FilmParams};
use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::grid::{pixel_to_domain, Grid2};
use crate::metrics::SdfField;
use crate::warp::level::LevelTrace;
use crate::warp::{init_warp_stack, HyperNet, ParamSource, WarpStack, WarpStackConfig};

const DECODER_SALT: u64 = 0x00d3_c0de_00d3_c0de;
const WARP_SALT: u64 = 0x57a2_57a2_57a2_57a2;
const FILM_SALT: u64 = 0xf17b_f17b_f17b_f17b;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilmConfig {
    /// Hidden width of each FiLM hypernetwork head.
    pub hidden: usize,
}

impl Default for FilmConfig {
    fn default() -> Self {
        FilmConfig { hidden: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub decoder: DecoderConfig,
    /// None disables the coordinate warp (levels = 0).
    pub warp: Option<WarpStackConfig>,
    /// None disables FiLM modulation.
    pub film: Option<FilmConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            decoder: DecoderConfig::default(),
            warp: Some(WarpStackConfig::default()),
            film: Some(FilmConfig::default()),
        }
    }
}

/// Per-layer FiLM hypernetworks (one head per hidden decoder layer).
#[derive(Debug, Clone)]
pub struct FilmStack {
    pub hypers: Vec<HyperNet>,
}

#[derive(Debug, Clone)]
pub struct HcInrModel {
    pub config: ModelConfig,
    pub decoder: Decoder,
    pub warp: Option<WarpStack>,
    pub film: Option<FilmStack>,
    pub pyramid: Arc<FeaturePyramid>,
}

/// Everything one tape forward pass produces.
pub struct TapeForward {
    /// Predictions [B, output_dim].
    pub pred: Tensor,
    /// Warped coordinates [B, 2] (equals the input when the warp is off).
    pub warped: Tensor,
    /// Per-level apply traces for the Jacobian penalty.
    pub traces: Vec<LevelTrace>,
    /// Tracked parameter leaves in `named_params` order (empty when not
    /// tracking).
    pub leaves: Vec<Tensor>,
}

pub fn init_model(
    config: &ModelConfig,
    pyramid: Arc<FeaturePyramid>,
    seed: u64,
) -> Result<HcInrModel> {
    config.decoder.validate()?;
    let decoder = init_decoder(&config.decoder, seed ^ DECODER_SALT)?;
    let warp = match &config.warp {
        Some(wcfg) => {
            if wcfg.feature_dim != pyramid.scale_count() {
                return Err(Error::InvalidConfig {
                    reason: format!(
                        "warp feature_dim {} does not match the pyramid's {} scales",
                        wcfg.feature_dim,
                        pyramid.scale_count()
                    ),
                });
            }
            Some(init_warp_stack(wcfg, pyramid.clone(), seed ^ WARP_SALT))
        }
        None => None,
    };
    let film = match &config.film {
        Some(fcfg) => {
            let heads = config.decoder.depth - 1;
            let out = 2 * config.decoder.hidden_width;
            Some(FilmStack {
                hypers: (0..heads)
                    .map(|i| {
                        HyperNet::init(
                            pyramid.scale_count(),
                            fcfg.hidden,
                            out,
                            seed ^ FILM_SALT ^ (0x9e37_79b9_7f4a_7c15_u64
                                .wrapping_mul(i as u64 + 1)),
                        )
                    })
                    .collect(),
            })
        }
        None => None,
    };
    Ok(HcInrModel {
        config: config.clone(),
        decoder,
        warp,
        film,
        pyramid,
    })
}

impl HcInrModel {
    pub fn output_dim(&self) -> usize {
        self.config.decoder.output_dim
    }

    /// All trainable parameters, in a stable order: decoder layers, warp
    /// hypernetworks per level, FiLM heads per layer.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.decoder.layers.iter().enumerate() {
            out.push((format!("decoder.layer{i}.weight"), w.clone()));
            out.push((format!("decoder.layer{i}.bias"), b.clone()));
        }
        if let Some(warp) = &self.warp {
            for (i, level) in warp.levels.iter().enumerate() {
                if let ParamSource::Hyper(h) = &level.source {
                    out.push((format!("warp.level{i}.w1"), h.w1.clone()));
                    out.push((format!("warp.level{i}.b1"), h.b1.clone()));
                    out.push((format!("warp.level{i}.w2"), h.w2.clone()));
                    out.push((format!("warp.level{i}.b2"), h.b2.clone()));
                }
            }
        }
        if let Some(film) = &self.film {
            for (i, h) in film.hypers.iter().enumerate() {
                out.push((format!("film.head{i}.w1"), h.w1.clone()));
                out.push((format!("film.head{i}.b1"), h.b1.clone()));
                out.push((format!("film.head{i}.w2"), h.w2.clone()));
                out.push((format!("film.head{i}.b2"), h.b2.clone()));
            }
        }
        out
    }

    /// Mutable slots in the same order as [`Self::named_params`].
    pub fn param_slots(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in &mut self.decoder.layers {
            out.push(w);
            out.push(b);
        }
        if let Some(warp) = &mut self.warp {
            for level in &mut warp.levels {
                if let ParamSource::Hyper(h) = &mut level.source {
                    out.push(&mut h.w1);
                    out.push(&mut h.b1);
                    out.push(&mut h.w2);
                    out.push(&mut h.b2);
                }
            }
        }
        if let Some(film) = &mut self.film {
            for h in &mut film.hypers {
                out.push(&mut h.w1);
                out.push(&mut h.b1);
                out.push(&mut h.w2);
                out.push(&mut h.b2);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn wants_features(&self) -> bool {
        self.warp.as_ref().map_or(false, |w| !w.levels.is_empty()) || self.film.is_some()
    }

    /// One tape forward pass over a batch of domain points. With `track` the
    /// returned leaves align with `named_params` for the optimizer.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        points: &[[f64; 2]],
        track: bool,
    ) -> Result<TapeForward> {
        let b = points.len();
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = Tensor::new(vec![b, 2], flat);

        // Local features of the original points enter as constants.
        let g = if self.wants_features() {
            let s = self.pyramid.scale_count();
            let mut data = Vec::with_capacity(b * s);
            for p in points {
                data.extend(self.pyramid.local_features(p[0], p[1]));
            }
            Some(Tensor::new(vec![b, s], data))
        } else {
            None
        };

        let mut leaves = Vec::new();
        let mut leaf =
            |tape: &mut Tape, t: &Tensor, leaves: &mut Vec<Tensor>| -> Tensor {
                if track {
                    let l = tape.leaf(t);
                    leaves.push(l.clone());
                    l
                } else {
                    t.clone()
                }
            };

        let dec_layers: Vec<(Tensor, Tensor)> = self
            .decoder
            .layers
            .iter()
            .map(|(w, bias)| {
                (
                    leaf(tape, w, &mut leaves),
                    leaf(tape, bias, &mut leaves),
                )
            })
            .collect();

        let (warped, traces) = match &self.warp {
            Some(warp) if !warp.levels.is_empty() => {
                let g = g.as_ref().expect("warp needs features");
                let mut phis = Vec::with_capacity(warp.levels.len());
                for level in &warp.levels {
                    match &level.source {
                        ParamSource::Hyper(h) => {
                            let tracked = HyperNet {
                                w1: leaf(tape, &h.w1, &mut leaves),
                                b1: leaf(tape, &h.b1, &mut leaves),
                                w2: leaf(tape, &h.w2, &mut leaves),
                                b2: leaf(tape, &h.b2, &mut leaves),
                            };
                            phis.push(tracked.predict_tape(tape, g)?);
                        }
                        ParamSource::Fixed(phi) => {
                            let mut flat = Vec::with_capacity(b * phi.len());
                            for _ in 0..b {
                                flat.extend_from_slice(phi);
                            }
                            phis.push(Tensor::new(vec![b, phi.len()], flat));
                        }
                    }
                }
                warp.apply_tape(tape, &x, &phis)?
            }
            _ => (x.clone(), Vec::new()),
        };

        let film = match &self.film {
            Some(film) => {
                let g = g.as_ref().expect("film needs features");
                let width = self.config.decoder.hidden_width;
                let mut gammas = Vec::with_capacity(film.hypers.len());
                let mut betas = Vec::with_capacity(film.hypers.len());
                for h in &film.hypers {
                    let tracked = HyperNet {
                        w1: leaf(tape, &h.w1, &mut leaves),
                        b1: leaf(tape, &h.b1, &mut leaves),
                        w2: leaf(tape, &h.w2, &mut leaves),
                        b2: leaf(tape, &h.b2, &mut leaves),
                    };
                    let out = tracked.predict_tape(tape, g)?;
                    let gamma_raw = tape.slice(&out, 0, width)?;
                    gammas.push(tape.scalar_add(&gamma_raw, 1.0)?);
                    betas.push(tape.slice(&out, width, width)?);
                }
                Some(FilmParams { gammas, betas })
            }
            None => None,
        };

        let pred = decode(
            tape,
            &self.config.decoder,
            &dec_layers,
            &warped,
            film.as_ref(),
        )?;
        Ok(TapeForward {
            pred,
            warped,
            traces,
            leaves,
        })
    }

    /// Plain forward pass for one point (evaluation sweeps).
    pub fn forward_plain(&self, x: [f64; 2]) -> Result<Vec<f64>> {
        let g = if self.wants_features() {
            Some(self.pyramid.local_features(x[0], x[1]))
        } else {
            None
        };
        let z = match &self.warp {
            Some(warp) if !warp.levels.is_empty() => {
                let g = g.as_deref().expect("warp needs features");
                let mut u = x;
                for level in &warp.levels {
                    let phi = level.phi_at(g)?;
                    u = level.apply_plain(&u, &phi);
                }
                u
            }
            _ => x,
        };
        let film = match &self.film {
            Some(film) => {
                let g = g.as_deref().expect("film needs features");
                let width = self.config.decoder.hidden_width;
                let mut pairs = Vec::with_capacity(film.hypers.len());
                for h in &film.hypers {
                    let out = h.predict_plain(g)?;
                    let gamma: Vec<f64> = out[..width].iter().map(|v| v + 1.0).collect();
                    let beta = out[width..].to_vec();
                    pairs.push((gamma, beta));
                }
                Some(pairs)
            }
            None => None,
        };
        Ok(decode_plain(
            &self.config.decoder,
            &self.decoder.layers,
            &z,
            film.as_deref(),
        ))
    }

    /// Evaluate channel grids over a pixel lattice, splitting rows across
    /// threads (capped by HCINR_THREADS) with deterministic reassembly.
    pub fn eval_grid(&self, width: usize, height: usize) -> Result<Vec<Grid2>> {
        let threads = eval_threads(height);
        let rows: Vec<Result<Vec<Vec<f64>>>> = if threads <= 1 {
            (0..height).map(|iy| self.eval_row(iy, width, height)).collect()
        } else {
            let mut results: Vec<Option<Result<Vec<Vec<f64>>>>> = (0..height).map(|_| None).collect();
            let chunk = height.div_ceil(threads);
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for (ci, slot_chunk) in results.chunks_mut(chunk).enumerate() {
                    let start = ci * chunk;
                    handles.push(scope.spawn(move || {
                        for (off, slot) in slot_chunk.iter_mut().enumerate() {
                            *slot = Some(self.eval_row(start + off, width, height));
                        }
                    }));
                }
                for h in handles {
                    h.join().expect("eval worker panicked");
                }
            });
            results.into_iter().map(|r| r.unwrap()).collect()
        };
        let mut channels =
            vec![Grid2::zeros(width, height); self.output_dim()];
        for (iy, row) in rows.into_iter().enumerate() {
            let row = row?;
            for (ix, vals) in row.into_iter().enumerate() {
                for (c, v) in vals.into_iter().enumerate() {
                    channels[c].set(ix, iy, v);
                }
            }
        }
        Ok(channels)
    }

    fn eval_row(&self, iy: usize, width: usize, height: usize) -> Result<Vec<Vec<f64>>> {
        (0..width)
            .map(|ix| {
                let (x, y) = pixel_to_domain(ix, iy, width, height);
                self.forward_plain([x, y])
            })
            .collect()
    }

    /// Gradient of the first output channel w.r.t. the input coordinates,
    /// with the per-point conditioning held fixed. One reverse pass per batch.
    pub fn input_gradients(&self, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        let mut tape = Tape::new();
        // Rebuild with x tracked: forward_tape uses x as a constant, so wire
        // the pass manually through a tracked coordinate leaf.
        let b = points.len();
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = tape.leaf(&Tensor::new(vec![b, 2], flat));
        let fwd = self.forward_tape_from(&mut tape, &x, points)?;
        let first = tape.slice(&fwd.pred, 0, 1)?;
        let total = tape.sum(&first)?;
        let grads = tape.backward(&total)?;
        let gx = grads.for_tensor(&x)?;
        Ok((0..b).map(|s| [gx.data()[s * 2], gx.data()[s * 2 + 1]]).collect())
    }

    /// Forward pass reusing an existing (possibly tracked) coordinate tensor.
    fn forward_tape_from(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        points: &[[f64; 2]],
    ) -> Result<TapeForward> {
        let b = points.len();
        let g = if self.wants_features() {
            let s = self.pyramid.scale_count();
            let mut data = Vec::with_capacity(b * s);
            for p in points {
                data.extend(self.pyramid.local_features(p[0], p[1]));
            }
            Some(Tensor::new(vec![b, s], data))
        } else {
            None
        };
        let (warped, traces) = match &self.warp {
            Some(warp) if !warp.levels.is_empty() => {
                let g = g.as_ref().expect("warp needs features");
                let mut phis = Vec::with_capacity(warp.levels.len());
                for level in &warp.levels {
                    match &level.source {
                        ParamSource::Hyper(h) => phis.push(h.predict_tape(tape, g)?),
                        ParamSource::Fixed(phi) => {
                            let mut flat = Vec::with_capacity(b * phi.len());
                            for _ in 0..b {
                                flat.extend_from_slice(phi);
                            }
                            phis.push(Tensor::new(vec![b, phi.len()], flat));
                        }
                    }
                }
                warp.apply_tape(tape, x, &phis)?
            }
            _ => (x.clone(), Vec::new()),
        };
        let film = match &self.film {
            Some(film) => {
                let g = g.as_ref().expect("film needs features");
                let width = self.config.decoder.hidden_width;
                let mut gammas = Vec::new();
                let mut betas = Vec::new();
                for h in &film.hypers {
                    let out = h.predict_tape(tape, g)?;
                    let gamma_raw = tape.slice(&out, 0, width)?;
                    gammas.push(tape.scalar_add(&gamma_raw, 1.0)?);
                    betas.push(tape.slice(&out, width, width)?);
                }
                Some(FilmParams { gammas, betas })
            }
            None => None,
        };
        let pred = decode(
            tape,
            &self.config.decoder,
            &self.decoder.layers,
            &warped,
            film.as_ref(),
        )?;
        Ok(TapeForward {
            pred,
            warped,
            traces,
            leaves: Vec::new(),
        })
    }
}

impl SdfField for HcInrModel {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.forward_plain(x).expect("model evaluation")[0]
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        self.input_gradients(&[x]).expect("model gradient")[0]
    }
}

/// Worker count for evaluation sweeps: HCINR_THREADS when set, otherwise the
/// available parallelism, capped by the row count.
fn eval_threads(rows: usize) -> usize {
    let available = std::env::var("HCINR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    available.clamp(1, rows.max(1))
}

// ── Checkpoints ──────────────────────────────────────────────────────

/// Write a checkpoint: model config, task spec, and seed in the JSON header,
/// all parameters as a flat little-endian f64 payload in layout order.
pub fn save_checkpoint(
    model: &HcInrModel,
    task_spec: &str,
    seed: u64,
    path: &std::path::Path,
) -> Result<()> {
    let header = serde_json::json!({
        "format": "hcinr-checkpoint-v1",
        "model": model.config,
        "task": task_spec,
        "seed": seed,
    });
    let bytes = crate::io::checkpoint_encode(&header, &model.named_params());
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Load a checkpoint, rebuilding the task's feature pyramid from the stored
/// task spec.
pub fn load_checkpoint(path: &std::path::Path) -> Result<(HcInrModel, String, u64)> {
    let bytes = std::fs::read(path)?;
    let (header, params) = crate::io::checkpoint_decode(&bytes)?;
    let config: ModelConfig =
        serde_json::from_value(header["model"].clone()).map_err(|e| Error::Io {
            context: format!("checkpoint model config: {e}"),
        })?;
    let task_spec = header["task"].as_str().unwrap_or_default().to_string();
    let seed = header["seed"].as_u64().unwrap_or(0);
    let task = crate::tasks::parse_task_spec(&task_spec)?;
    let pyramid = task.pyramid()?;
    let mut model = init_model(&config, pyramid, seed)?;
    let expected = model.named_params();
    if expected.len() != params.len() {
        return Err(Error::Io {
            context: format!(
                "checkpoint has {} parameter blocks, model wants {}",
                params.len(),
                expected.len()
            ),
        });
    }
    for (slot, (name, tensor)) in model.param_slots().into_iter().zip(params) {
        if slot.shape() != tensor.shape() {
            return Err(Error::Io {
                context: format!("checkpoint block `{name}` shape mismatch"),
            });
        }
        *slot = tensor;
    }
    Ok((model, task_spec, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::parse_task_spec;

    fn small_model_config() -> ModelConfig {
        ModelConfig {
            decoder: DecoderConfig {
                hidden_width: 16,
                depth: 3,
                ..DecoderConfig::default()
            },
            warp: Some(WarpStackConfig {
                levels: 2,
                hyper_hidden: 6,
                ..WarpStackConfig::default()
            }),
            film: Some(FilmConfig { hidden: 6 }),
        }
    }

    fn texture_model(seed: u64) -> HcInrModel {
        let task = parse_task_spec("bundled:texture64").unwrap();
        init_model(&small_model_config(), task.pyramid().unwrap(), seed).unwrap()
    }

    #[test]
    fn fresh_model_equals_bare_decoder_exactly() {
        let full = texture_model(5);
        let bare_cfg = ModelConfig {
            warp: None,
            film: None,
            ..small_model_config()
        };
        let task = parse_task_spec("bundled:texture64").unwrap();
        let bare = init_model(&bare_cfg, task.pyramid().unwrap(), 5).unwrap();
        for iy in 0..8 {
            for ix in 0..8 {
                let (x, y) = pixel_to_domain(ix * 8, iy * 8, 64, 64);
                let a = full.forward_plain([x, y]).unwrap();
                let b = bare.forward_plain([x, y]).unwrap();
                assert_eq!(a, b, "at ({x}, {y})");
            }
        }
    }

    #[test]
    fn fresh_warp_moves_nothing() {
        let model = texture_model(11);
        let warp = model.warp.as_ref().unwrap();
        let mut worst: f64 = 0.0;
        for p in crate::warp::dense_grid_2d(64) {
            let z = warp.apply(&[p[0], p[1]]).unwrap();
            worst = worst.max((z[0] - p[0]).abs()).max((z[1] - p[1]).abs());
        }
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut model = texture_model(7);
        // Nudge parameters so the warp and film paths are live.
        for slot in model.param_slots() {
            let shape = slot.shape().to_vec();
            let data: Vec<f64> = slot
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.01 * ((i % 7) as f64 - 3.0))
                .collect();
            *slot = Tensor::new(shape, data);
        }
        let points = [[0.13, -0.4], [-0.77, 0.2], [0.5, 0.9]];
        let mut tape = Tape::new();
        let fwd = model.forward_tape(&mut tape, &points, false).unwrap();
        for (s, p) in points.iter().enumerate() {
            let plain = model.forward_plain(*p).unwrap();
            for (c, v) in plain.iter().enumerate() {
                let taped = fwd.pred.data()[s * plain.len() + c];
                assert!((taped - v).abs() < 1e-12, "{taped} vs {v}");
            }
        }
    }

    #[test]
    fn tracked_leaves_align_with_named_params() {
        let model = texture_model(3);
        let mut tape = Tape::new();
        let fwd = model
            .forward_tape(&mut tape, &[[0.1, 0.2], [0.3, -0.5]], true)
            .unwrap();
        let names = model.named_params();
        assert_eq!(fwd.leaves.len(), names.len());
        for ((_, t), leaf) in names.iter().zip(&fwd.leaves) {
            assert_eq!(t.shape(), leaf.shape());
            assert_eq!(t.data(), leaf.data());
        }
    }

    #[test]
    fn gradients_reach_every_parameter_family() {
        let mut model = texture_model(13);
        for slot in model.param_slots() {
            let shape = slot.shape().to_vec();
            let data: Vec<f64> = slot
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.02 * (((i * 31 + 7) % 11) as f64 - 5.0))
                .collect();
            *slot = Tensor::new(shape, data);
        }
        let points: Vec<[f64; 2]> = crate::warp::dense_grid_2d(8)
            .iter()
            .map(|p| [p[0], p[1]])
            .collect();
        let mut tape = Tape::new();
        let fwd = model.forward_tape(&mut tape, &points, true).unwrap();
        let target = Tensor::new(vec![points.len(), 1], vec![0.37; points.len()]);
        let loss = tape.mse(&fwd.pred, &target).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let names = model.named_params();
        for ((name, _), leaf) in names.iter().zip(&fwd.leaves) {
            let g = grads.for_tensor(leaf).unwrap();
            let norm: f64 = g.data().iter().map(|v| v * v).sum();
            assert!(
                norm > 0.0,
                "parameter {name} receives no gradient"
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_outputs() {
        let mut model = texture_model(17);
        for slot in model.param_slots() {
            let shape = slot.shape().to_vec();
            let data: Vec<f64> = slot
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.005 * ((i % 13) as f64))
                .collect();
            *slot = Tensor::new(shape, data);
        }
        let dir = std::env::temp_dir().join("hcinr-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&model, "bundled:texture64", 17, &path).unwrap();
        let (back, task_spec, seed) = load_checkpoint(&path).unwrap();
        assert_eq!(task_spec, "bundled:texture64");
        assert_eq!(seed, 17);
        for p in [[0.3, 0.4], [-0.9, 0.1]] {
            let a = model.forward_plain(p).unwrap();
            let b = back.forward_plain(p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn eval_grid_matches_pointwise_forward() {
        std::env::set_var("HCINR_THREADS", "2");
        let model = texture_model(19);
        let grids = model.eval_grid(16, 16).unwrap();
        for iy in [0usize, 7, 15] {
            for ix in [0usize, 3, 14] {
                let (x, y) = pixel_to_domain(ix, iy, 16, 16);
                let v = model.forward_plain([x, y]).unwrap();
                assert_eq!(grids[0].get(ix, iy), v[0]);
            }
        }
        std::env::remove_var("HCINR_THREADS");
    }
}

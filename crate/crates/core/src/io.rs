//! File formats: binary PGM read/write, PNG via the `image` crate, and the
//! checkpoint container (JSON header + flat little-endian f64 payload).

use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::Grid2;

// ── PGM ──────────────────────────────────────────────────────────────

/// Parse a binary (P5) PGM with 8- or 16-bit samples, scaled to [0, 1].
/// 16-bit samples are big-endian per the format.
pub fn pgm_decode(bytes: &[u8], origin: &str) -> Result<Grid2> {
    let err = |reason: &str| Error::ImageLoad {
        path: origin.to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        // Skip whitespace and '#' comment lines between header fields.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(err(&format!("unsupported PNM magic `{magic}` (want P5)")));
    }
    let width: usize = token(&mut pos)?.parse().map_err(|_| err("bad width"))?;
    let height: usize = token(&mut pos)?.parse().map_err(|_| err("bad height"))?;
    let maxval: u32 = token(&mut pos)?.parse().map_err(|_| err("bad maxval"))?;
    if width == 0 || height == 0 {
        return Err(err("zero extent"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let data: Vec<f64> = if maxval == 255 {
        if bytes.len() < pos + n {
            return Err(err("truncated 8-bit raster"));
        }
        bytes[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect()
    } else if maxval == 65535 {
        if bytes.len() < pos + 2 * n {
            return Err(err("truncated 16-bit raster"));
        }
        bytes[pos..pos + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect()
    } else {
        return Err(err(&format!("unsupported maxval {maxval} (want 255 or 65535)")));
    };
    Ok(Grid2::new(width, height, data))
}

/// Encode a grid as 8-bit binary PGM, clamping values to [0, 1].
pub fn pgm_encode(grid: &Grid2) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(
        grid.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn pgm_read(path: &Path) -> Result<Grid2> {
    let bytes = std::fs::read(path).map_err(|e| Error::ImageLoad {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    pgm_decode(&bytes, &path.display().to_string())
}

pub fn pgm_write(grid: &Grid2, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&pgm_encode(grid))?;
    Ok(())
}

// ── PNG ──────────────────────────────────────────────────────────────

/// Decode a PNG into grayscale or RGB channels with values in [0, 1].
pub fn png_read(path: &Path) -> Result<Vec<Grid2>> {
    let img = image::open(path).map_err(|e| Error::ImageLoad {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    use image::DynamicImage::*;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grids = match img {
        ImageLuma8(buf) => vec![Grid2::new(
            w,
            h,
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        )],
        ImageLuma16(buf) => vec![Grid2::new(
            w,
            h,
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        )],
        ImageRgb8(buf) => split_rgb(w, h, buf.pixels().map(|p| p.0), 255.0),
        ImageRgb16(buf) => split_rgb(w, h, buf.pixels().map(|p| p.0), 65535.0),
        other => {
            let rgb = other.to_rgb8();
            split_rgb(w, h, rgb.pixels().map(|p| p.0), 255.0)
        }
    };
    Ok(grids)
}

fn split_rgb<T: Into<f64> + Copy>(
    w: usize,
    h: usize,
    pixels: impl Iterator<Item = [T; 3]>,
    scale: f64,
) -> Vec<Grid2> {
    let mut ch = vec![Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    for p in pixels {
        for c in 0..3 {
            ch[c].push(p[c].into() / scale);
        }
    }
    ch.into_iter().map(|d| Grid2::new(w, h, d)).collect()
}

/// Write a grayscale grid as an 8-bit PNG.
pub fn png_write(grid: &Grid2, path: &Path) -> Result<()> {
    let buf: Vec<u8> = grid
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img =
        image::GrayImage::from_raw(grid.width() as u32, grid.height() as u32, buf).unwrap();
    img.save(path).map_err(|e| Error::Io {
        context: format!("writing {}: {e}", path.display()),
    })
}

// ── Checkpoints ──────────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &[u8; 8] = b"HCINRCK1";

/// One named parameter block in the flat payload, in layout order.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Checkpoint container: magic, little-endian u64 header length, JSON header,
/// then all parameter data as little-endian f64 in declaration order.
pub fn checkpoint_encode(header: &serde_json::Value, params: &[(String, Tensor)]) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for (name, t) in params {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let full_header = serde_json::json!({
        "header": header,
        "layout": entries,
    });
    let header_bytes = serde_json::to_vec(&full_header).expect("header serialization");
    let mut out = Vec::with_capacity(16 + header_bytes.len() + offset * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let err = |reason: &str| Error::Io {
        context: format!("checkpoint: {reason}"),
    };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(err("bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(err("truncated header"));
    }
    let full: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| err(&e.to_string()))?;
    let layout: Vec<ParamEntry> = serde_json::from_value(full["layout"].clone())
        .map_err(|e| err(&e.to_string()))?;
    let payload = &bytes[16 + header_len..];
    let mut params = Vec::with_capacity(layout.len());
    for e in &layout {
        let start = e.offset * 8;
        let end = (e.offset + e.len) * 8;
        if payload.len() < end {
            return Err(err("truncated payload"));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((e.name.clone(), Tensor::new(e.shape.clone(), data)));
    }
    Ok((full["header"].clone(), params))
}

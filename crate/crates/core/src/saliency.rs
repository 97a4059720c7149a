//! Saliency training targets: sums of truncated Gaussians around gaze
//! points, normalized to a proper distribution, plus the mass-preserving
//! downscale to head resolution and the SALF export format.
//!
//! Target grids are kept in f64 throughout — the mass-conservation
//! contracts here are tighter than f32 resolution.

use crate::data::pgm::write_pgm_file;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencyConfig {
    /// Gaussian standard deviation in pixels at full frame resolution.
    pub sigma_px: f64,
    /// Truncation radius as a multiple of sigma.
    pub truncation: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig { sigma_px: 8.0, truncation: 4.0 }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma_px)));
        }
        if !(self.truncation >= 2.0) {
            return Err(Error::invalid(format!("truncation must be ≥ 2, got {}", self.truncation)));
        }
        Ok(())
    }
}

/// A nonnegative grid summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyTarget {
    h: usize,
    w: usize,
    grid: Vec<f64>,
}

impl SaliencyTarget {
    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn sum(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// Build from raw values (validated nonnegative), normalizing to Σ=1.
    pub fn from_values(h: usize, w: usize, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != h * w {
            return Err(Error::shape(format!("grid {}x{} wants {} values, got {}", h, w, h * w, grid.len())));
        }
        if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("saliency grid must be finite and nonnegative"));
        }
        let total: f64 = grid.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("saliency grid has zero total mass"));
        }
        let grid = grid.into_iter().map(|v| v / total).collect();
        Ok(SaliencyTarget { h, w, grid })
    }

    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        Tensor::new(vec![self.h, self.w], self.grid.iter().map(|&v| E::from_f64(v)).collect()).unwrap()
    }

    /// Row-major index of the largest cell.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.grid.iter().enumerate() {
            if *v > self.grid[best] {
                best = i;
            }
        }
        (best / self.w, best % self.w)
    }
}

/// Sum of truncated Gaussians at the gaze points, evaluated at pixel centers
/// (x = j+0.5, y = i+0.5), then renormalized so the grid is a distribution
/// (truncated and out-of-frame mass is renormalized away).
pub fn make_saliency_map(
    points: &[(f64, f64)],
    h: usize,
    w: usize,
    cfg: &SaliencyConfig,
) -> Result<SaliencyTarget> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("saliency map needs at least one gaze point"));
    }
    let radius = cfg.truncation * cfg.sigma_px;
    let r2 = radius * radius;
    let inv_2s2 = 1.0 / (2.0 * cfg.sigma_px * cfg.sigma_px);
    let mut grid = vec![0.0f64; h * w];
    for &(px, py) in points {
        // bounding box of the truncation disc, in cell indices
        let i_lo = ((py - radius - 0.5).floor().max(0.0)) as usize;
        let i_hi = (((py + radius - 0.5).ceil()) as isize).clamp(0, h as isize - 1) as usize;
        let j_lo = ((px - radius - 0.5).floor().max(0.0)) as usize;
        let j_hi = (((px + radius - 0.5).ceil()) as isize).clamp(0, w as isize - 1) as usize;
        for i in i_lo..=i_hi.min(h - 1) {
            let dy = (i as f64 + 0.5) - py;
            for j in j_lo..=j_hi.min(w - 1) {
                let dx = (j as f64 + 0.5) - px;
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 {
                    grid[i * w + j] += (-d2 * inv_2s2).exp();
                }
            }
        }
    }
    SaliencyTarget::from_values(h, w, grid)
        .map_err(|_| Error::invalid("saliency map empty: truncation radius misses all pixel centers"))
}

/// Sum factor×factor blocks into each output cell (mass-preserving), then
/// renormalize away accumulated rounding drift.
pub fn downscale_saliency(s: &SaliencyTarget, factor: usize) -> Result<SaliencyTarget> {
    if factor == 0 {
        return Err(Error::invalid("downscale factor must be positive"));
    }
    if s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::shape(format!(
            "extent {}x{} not divisible by factor {}",
            s.h, s.w, factor
        )));
    }
    let (oh, ow) = (s.h / factor, s.w / factor);
    let mut grid = vec![0.0f64; oh * ow];
    for bi in 0..oh {
        for bj in 0..ow {
            let mut acc = 0.0f64;
            for di in 0..factor {
                let row = (bi * factor + di) * s.w + bj * factor;
                for v in &s.grid[row..row + factor] {
                    acc += v;
                }
            }
            grid[bi * ow + bj] = acc;
        }
    }
    SaliencyTarget::from_values(oh, ow, grid)
}

// ---- SALF export ----------------------------------------------------------

const SALF_MAGIC: &[u8; 4] = b"SALF";
const SALF_VERSION: u32 = 1;

pub fn write_salf(mut w: impl Write, h: usize, wid: usize, grid: &[f64]) -> Result<()> {
    if grid.len() != h * wid {
        return Err(Error::shape("salf: grid length mismatch"));
    }
    w.write_all(SALF_MAGIC)?;
    w.write_all(&SALF_VERSION.to_le_bytes())?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(wid as u32).to_le_bytes())?;
    for v in grid {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_salf(mut r: impl Read) -> Result<(usize, usize, Vec<f32>)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| Error::invalid("salf: truncated header"))?;
    if &head[0..4] != SALF_MAGIC {
        return Err(Error::invalid("salf: bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != SALF_VERSION {
        return Err(Error::invalid(format!("salf: unsupported version {}", version)));
    }
    let h = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut data = vec![0u8; h * w * 4];
    r.read_exact(&mut data).map_err(|_| Error::invalid("salf: truncated data"))?;
    let grid = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, grid))
}

/// Write `<path>` as SALF plus a max-scaled 8-bit PGM preview beside it
/// (same stem, `.pgm` extension).
pub fn save_salf_with_preview(path: impl AsRef<Path>, h: usize, w: usize, grid: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path)?;
    write_salf(std::io::BufWriter::new(f), h, w, grid)?;
    let mx = grid.iter().cloned().fold(0.0f64, f64::max);
    let scale = if mx > 0.0 { 255.0 / mx } else { 0.0 };
    let bytes: Vec<u8> = grid.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    write_pgm_file(path.with_extension("pgm"), w, h, &bytes)
}

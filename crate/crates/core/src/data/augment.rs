//! Stochastic augmentation for training. One branch keeps gaze geometry
//! consistent (crops must contain every gaze point); the other is free to
//! rotate and stretch because only the class label survives.
//!
//! Draw order is part of the contract (reproducibility): attention draws
//! crop fraction, crop x, crop y, flip, gamma, brightness; classification
//! prepends rotation and aspect draws.

use crate::data::manifest::{normalize_image, FrameSample};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Crop side length as a fraction of each source extent, sampled uniformly.
    pub crop_fraction: (f64, f64),
    pub flip_prob: f64,
    /// Maximum absolute rotation in degrees (classification only).
    pub rotation_deg: f64,
    /// Maximum relative horizontal stretch (classification only).
    pub aspect_jitter: f64,
    pub gamma: (f64, f64),
    pub brightness: (f64, f64),
}

impl AugmentConfig {
    pub fn attention() -> Self {
        AugmentConfig {
            crop_fraction: (0.7, 0.9),
            flip_prob: 0.5,
            rotation_deg: 0.0,
            aspect_jitter: 0.0,
            gamma: (0.75, 1.25),
            brightness: (0.75, 1.25),
        }
    }

    pub fn classification() -> Self {
        AugmentConfig {
            crop_fraction: (0.95, 1.0),
            flip_prob: 0.5,
            rotation_deg: 10.0,
            aspect_jitter: 0.1,
            gamma: (0.75, 1.25),
            brightness: (0.75, 1.25),
        }
    }

    /// Identity transform (validation / evaluation path).
    pub fn none() -> Self {
        AugmentConfig {
            crop_fraction: (1.0, 1.0),
            flip_prob: 0.0,
            rotation_deg: 0.0,
            aspect_jitter: 0.0,
            gamma: (1.0, 1.0),
            brightness: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("crop fraction range ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip probability outside [0,1]"));
        }
        if self.rotation_deg < 0.0 || self.aspect_jitter < 0.0 || self.aspect_jitter >= 1.0 {
            return Err(Error::invalid("rotation/aspect jitter out of range"));
        }
        if self.gamma.0 <= 0.0 || self.gamma.0 > self.gamma.1 {
            return Err(Error::invalid("gamma range"));
        }
        if self.brightness.0 < 0.0 || self.brightness.0 > self.brightness.1 {
            return Err(Error::invalid("brightness range"));
        }
        Ok(())
    }
}

/// Bilinear sample at center-based coordinates, zero outside the source.
fn sample_bilinear(data: &[f32], h: usize, w: usize, sx: f64, sy: f64) -> f32 {
    let fx = sx - 0.5;
    let fy = sy - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = (fx - x0) as f32;
    let ty = (fy - y0) as f32;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let tap = |x: i64, y: i64| -> f32 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            data[y as usize * w + x as usize]
        }
    };
    let top = tap(x0, y0) * (1.0 - tx) + tap(x0 + 1, y0) * tx;
    let bot = tap(x0, y0 + 1) * (1.0 - tx) + tap(x0 + 1, y0 + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Resize an [1,H,W] image to (out_h, out_w) with bilinear interpolation.
/// Equal extents reproduce the input exactly (all taps land on centers).
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = image.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target has a zero extent"));
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let src = image.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let y = (i as f64 + 0.5) * sy;
        for j in 0..out_w {
            let x = (j as f64 + 0.5) * sx;
            out.push(sample_bilinear(src, h, w, x, y));
        }
    }
    Tensor::new(vec![1, out_h, out_w], out)
}

/// The un-augmented pipeline used for validation and evaluation: resize to
/// the network extents and normalize, with gaze scaled along. Matches the
/// identity augmentation bit for bit.
pub fn prepare_plain(
    sample: &crate::data::manifest::FrameSample,
    out_h: usize,
    out_w: usize,
) -> Result<(Tensor<f32>, Vec<(f64, f64)>)> {
    let (_, h, w) = sample.image.dims3()?;
    let resized = resize_bilinear(&sample.image, out_h, out_w)?;
    let (fx, fy) = (out_w as f64 / w as f64, out_h as f64 / h as f64);
    let gaze = sample.gaze.iter().map(|&(x, y)| (x * fx, y * fy)).collect();
    Ok((crate::data::manifest::normalize_image(&resized), gaze))
}

/// Rotate about the image center by `deg` degrees (counter-clockwise in image
/// coordinates), bilinear with zero fill. 0° is an exact no-op.
pub fn rotate_image(image: &Tensor<f32>, deg: f64) -> Result<Tensor<f32>> {
    if deg == 0.0 {
        return Ok(image.clone());
    }
    let (_, h, w) = image.dims3()?;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let th = deg.to_radians();
    let (s, c) = (th.sin(), th.cos());
    let src = image.data();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = i as f64 + 0.5 - cy;
        for j in 0..w {
            let x = j as f64 + 0.5 - cx;
            // inverse map: rotate destination coordinates by -θ
            let sx = c * x + s * y + cx;
            let sy = -s * x + c * y + cy;
            out.push(sample_bilinear(src, h, w, sx, sy));
        }
    }
    Tensor::new(vec![1, h, w], out)
}

fn crop(image: &Tensor<f32>, x0: usize, y0: usize, ch: usize, cw: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = image.dims3()?;
    if x0 + cw > w || y0 + ch > h {
        return Err(Error::shape(format!(
            "crop {cw}x{ch}+{x0}+{y0} exceeds {w}x{h}"
        )));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(ch * cw);
    for i in 0..ch {
        let row = (y0 + i) * w + x0;
        out.extend_from_slice(&src[row..row + cw]);
    }
    Tensor::new(vec![1, ch, cw], out)
}

fn flip_horizontal(image: &mut Tensor<f32>) {
    let (_, h, w) = image.dims3().expect("flip expects [1,H,W]");
    let data = image.data_mut();
    for i in 0..h {
        data[i * w..(i + 1) * w].reverse();
    }
}

fn apply_photometric(image: &mut Tensor<f32>, gamma: f64, brightness: f64) {
    for v in image.data_mut() {
        let g = (*v as f64).max(0.0).powf(gamma) * brightness;
        *v = g.clamp(0.0, 1.0) as f32;
    }
}

/// Pick integer crop offsets so that `[x0, x0+cw] × [y0, y0+ch]` contains all
/// gaze points; `None` when no offset admits the whole set.
fn crop_offsets(
    gaze: &[(f64, f64)],
    h: usize,
    w: usize,
    ch: usize,
    cw: usize,
    rng: &mut RngStream,
) -> Option<(usize, usize)> {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in gaze {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    if gaze.is_empty() {
        min_x = 0.0;
        max_x = 0.0;
        min_y = 0.0;
        max_y = 0.0;
    }
    let x_lo = (max_x - cw as f64).ceil().max(0.0) as i64;
    let x_hi = (min_x.floor() as i64).min(w as i64 - cw as i64);
    let y_lo = (max_y - ch as f64).ceil().max(0.0) as i64;
    let y_hi = (min_y.floor() as i64).min(h as i64 - ch as i64);
    if x_lo > x_hi || y_lo > y_hi {
        return None;
    }
    let x0 = x_lo + rng.index((x_hi - x_lo + 1) as usize) as i64;
    let y0 = y_lo + rng.index((y_hi - y_lo + 1) as usize) as i64;
    Some((x0 as usize, y0 as usize))
}

/// Gaze-preserving augmentation: crop (uniform over offsets containing every
/// gaze point), horizontal flip, gamma/brightness jitter, resize to the model
/// resolution, then per-image normalization. Returns the image and the gaze
/// points mapped into output pixel coordinates.
///
/// When the sampled crop fraction cannot contain the gaze spread, the
/// smallest admissible fraction (clamped to the configured range) is used
/// instead; if even the full range fails, cropping is skipped.
pub fn augment_attention(
    sample: &FrameSample,
    cfg: &AugmentConfig,
    out_h: usize,
    out_w: usize,
    rng: &mut RngStream,
) -> Result<(Tensor<f32>, Vec<(f64, f64)>)> {
    cfg.validate()?;
    let (_, h, w) = sample.image.dims3()?;
    let frac = rng.uniform_in(cfg.crop_fraction.0, cfg.crop_fraction.1);
    let crop_dims = |f: f64| -> (usize, usize) {
        let ch = ((f * h as f64).round() as usize).clamp(1, h);
        let cw = ((f * w as f64).round() as usize).clamp(1, w);
        (ch, cw)
    };
    let (mut ch, mut cw) = crop_dims(frac);
    let mut offsets = crop_offsets(&sample.gaze, h, w, ch, cw, rng);
    if offsets.is_none() {
        // spread in pixels, padded by one pixel so integer offsets exist
        let spread_x = sample.gaze.iter().map(|p| p.0).fold(0.0f64, f64::max)
            - sample.gaze.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let spread_y = sample.gaze.iter().map(|p| p.1).fold(0.0f64, f64::max)
            - sample.gaze.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let need = ((spread_x + 1.0) / w as f64)
            .max((spread_y + 1.0) / h as f64)
            .clamp(cfg.crop_fraction.0, cfg.crop_fraction.1);
        let dims = crop_dims(need);
        ch = dims.0;
        cw = dims.1;
        offsets = crop_offsets(&sample.gaze, h, w, ch, cw, rng);
    }
    let (mut image, mut gaze) = match offsets {
        Some((x0, y0)) => {
            let img = crop(&sample.image, x0, y0, ch, cw)?;
            let g = sample
                .gaze
                .iter()
                .map(|&(x, y)| (x - x0 as f64, y - y0 as f64))
                .collect::<Vec<_>>();
            (img, g)
        }
        None => {
            ch = h;
            cw = w;
            (sample.image.clone(), sample.gaze.clone())
        }
    };
    if rng.uniform() < cfg.flip_prob {
        flip_horizontal(&mut image);
        for p in &mut gaze {
            p.0 = cw as f64 - p.0;
        }
    }
    let gamma = rng.uniform_in(cfg.gamma.0, cfg.gamma.1);
    let bright = rng.uniform_in(cfg.brightness.0, cfg.brightness.1);
    apply_photometric(&mut image, gamma, bright);
    let image = resize_bilinear(&image, out_h, out_w)?;
    let (kx, ky) = (out_w as f64 / cw as f64, out_h as f64 / ch as f64);
    for p in &mut gaze {
        p.0 *= kx;
        p.1 *= ky;
    }
    Ok((normalize_image(&image), gaze))
}

/// Label-preserving augmentation: rotation and horizontal stretch on top of
/// the crop/flip/photometric pipeline. Gaze is not carried through.
pub fn augment_classification(
    sample: &FrameSample,
    cfg: &AugmentConfig,
    out_h: usize,
    out_w: usize,
    rng: &mut RngStream,
) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let deg = if cfg.rotation_deg > 0.0 {
        rng.uniform_in(-cfg.rotation_deg, cfg.rotation_deg)
    } else {
        0.0
    };
    let aspect = if cfg.aspect_jitter > 0.0 {
        rng.uniform_in(1.0 - cfg.aspect_jitter, 1.0 + cfg.aspect_jitter)
    } else {
        1.0
    };
    let mut image = rotate_image(&sample.image, deg)?;
    let (_, h, w) = image.dims3()?;
    if aspect != 1.0 {
        let nw = ((w as f64 * aspect).round() as usize).max(1);
        image = resize_bilinear(&image, h, nw)?;
    }
    let (_, h, w) = image.dims3()?;
    let frac = rng.uniform_in(cfg.crop_fraction.0, cfg.crop_fraction.1);
    let ch = ((frac * h as f64).round() as usize).clamp(1, h);
    let cw = ((frac * w as f64).round() as usize).clamp(1, w);
    let x0 = rng.index(w - cw + 1);
    let y0 = rng.index(h - ch + 1);
    let mut image = crop(&image, x0, y0, ch, cw)?;
    if rng.uniform() < cfg.flip_prob {
        flip_horizontal(&mut image);
    }
    let gamma = rng.uniform_in(cfg.gamma.0, cfg.gamma.1);
    let bright = rng.uniform_in(cfg.brightness.0, cfg.brightness.1);
    apply_photometric(&mut image, gamma, bright);
    let image = resize_bilinear(&image, out_h, out_w)?;
    Ok(normalize_image(&image))
}

//! Synthetic phantom scans: a fan-shaped speckled field with one moving
//! shape per scan whose visibility waxes and wanes. Frames where the shape
//! is fully visible stand in for standard planes and carry the class label;
//! temporally nearby low-visibility frames are labeled background. Gaze
//! points cluster around the shape centroid with occasional outliers.
//!
//! Everything is driven by one RngStream per scan with a fixed draw order,
//! so a given config produces a byte-identical dataset on every run.

use crate::data::manifest::{save_frame_pgm, write_dataset, ManifestRecord};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scans: usize,
    pub frames_per_scan: usize,
    pub height: usize,
    pub width: usize,
    /// Foreground shape classes; scans cycle through them round-robin.
    pub classes: Vec<String>,
    pub background: String,
    /// Gaze noise σ in pixels.
    pub gaze_sigma: f64,
    /// Standard-plane (and background) labels issued per scan.
    pub labels_per_scan: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scans: 12,
            frames_per_scan: 200,
            height: 64,
            width: 80,
            classes: ShapeKind::NAMES.iter().map(|s| s.to_string()).collect(),
            background: "background".into(),
            gaze_sigma: 3.0,
            labels_per_scan: 5,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("need at least two foreground classes plus background"));
        }
        for name in &self.classes {
            ShapeKind::from_name(name)?;
            if name == &self.background {
                return Err(Error::invalid("background name collides with a foreground class"));
            }
        }
        let mut sorted = self.classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.classes.len() {
            return Err(Error::invalid("duplicate class names"));
        }
        if self.scans < self.classes.len() {
            return Err(Error::invalid("fewer scans than classes: some class would have no scan"));
        }
        if self.labels_per_scan == 0 || self.frames_per_scan < 8 * self.labels_per_scan {
            return Err(Error::invalid("frames per scan must be ≥ 8 × labels per scan"));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid("resolution below 16×16"));
        }
        if !(self.gaze_sigma > 0.0) {
            return Err(Error::invalid("gaze σ must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Ring,
    Cross,
    Bars,
    Wedge,
    Blobs,
}

impl ShapeKind {
    pub const NAMES: [&'static str; 6] = ["ellipse", "ring", "cross", "bars", "wedge", "blobs"];

    pub fn from_name(name: &str) -> Result<ShapeKind> {
        Ok(match name {
            "ellipse" => ShapeKind::Ellipse,
            "ring" => ShapeKind::Ring,
            "cross" => ShapeKind::Cross,
            "bars" => ShapeKind::Bars,
            "wedge" => ShapeKind::Wedge,
            "blobs" => ShapeKind::Blobs,
            _ => return Err(Error::invalid(format!("unknown shape class {name:?}"))),
        })
    }

    /// Membership test in the shape-local unit frame (|u|,|v| ≲ 1).
    fn contains(self, u: f64, v: f64, blobs: &[(f64, f64)]) -> bool {
        match self {
            ShapeKind::Ellipse => (u / 1.0).powi(2) + (v / 0.65).powi(2) <= 1.0,
            ShapeKind::Ring => {
                let r = (u * u + v * v).sqrt();
                (0.62..=1.0).contains(&r)
            }
            ShapeKind::Cross => {
                (u.abs() <= 1.0 && v.abs() <= 0.28) || (v.abs() <= 1.0 && u.abs() <= 0.28)
            }
            ShapeKind::Bars => {
                if u.abs() > 1.0 || v.abs() > 1.0 {
                    return false;
                }
                let t = (u + 1.0) * 1.5; // three bars across the span
                t - t.floor() < 0.55
            }
            ShapeKind::Wedge => u >= 0.0 && u <= 1.0 && v.abs() <= 0.6 * u,
            ShapeKind::Blobs => blobs
                .iter()
                .any(|&(bu, bv)| (u - bu).powi(2) + (v - bv).powi(2) <= 0.38 * 0.38),
        }
    }
}

/// Ground truth the generator knows about each frame; returned for
/// validation but never written into the dataset.
#[derive(Debug, Clone)]
pub struct FrameTruth {
    pub scan: String,
    pub frame: usize,
    pub centroid: (f64, f64),
    /// Axis-aligned shape bounding box (x0, y0, x1, y1) in pixels.
    pub bbox: (f64, f64, f64, f64),
    pub visibility: f64,
}

#[derive(Debug)]
pub struct SynthReport {
    pub records: Vec<ManifestRecord>,
    pub truth: Vec<FrameTruth>,
    /// Full vocabulary as written to classes.json (background last).
    pub classes: Vec<String>,
}

struct Fan {
    apex_x: f64,
    apex_y: f64,
    tan_half: f64,
    r_min: f64,
    r_max: f64,
}

impl Fan {
    fn new(h: usize, w: usize) -> Fan {
        Fan {
            apex_x: w as f64 / 2.0,
            apex_y: -0.06 * h as f64,
            tan_half: (40.0f64).to_radians().tan(),
            r_min: 0.16 * h as f64,
            r_max: 1.12 * h as f64,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.apex_x;
        let dy = y - self.apex_y;
        if dy <= 0.0 || dx.abs() > dy * self.tan_half {
            return false;
        }
        let r = (dx * dx + dy * dy).sqrt();
        (self.r_min..=self.r_max).contains(&r)
    }

    /// Position from polar coordinates: θ from the downward axis, radius r.
    fn at(&self, theta: f64, r: f64) -> (f64, f64) {
        (self.apex_x + r * theta.sin(), self.apex_y + r * theta.cos())
    }
}

/// Triangular visibility peaks at the standard-plane frames, on a low
/// baseline so the shape never disappears entirely.
fn visibility(t: usize, peaks: &[usize], half_width: f64) -> f64 {
    let mut v: f64 = 0.0;
    for &p in peaks {
        let d = (t as f64 - p as f64).abs();
        v = v.max(1.0 - d / half_width);
    }
    v.max(0.12)
}

pub fn synth_generate(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthReport> {
    cfg.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("frames"))?;
    let (h, w) = (cfg.height, cfg.width);
    let fan = Fan::new(h, w);
    let t_count = cfg.frames_per_scan;
    let half_width = (t_count as f64 / (4.0 * cfg.labels_per_scan as f64)).max(2.0);

    // static field intensity: attenuates with depth along the beam
    let mut base = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            if fan.contains(x, y) {
                let dy = y - fan.apex_y;
                let dx = x - fan.apex_x;
                let r = (dx * dx + dy * dy).sqrt();
                base[i * w + j] = 0.40 - 0.14 * (r / fan.r_max);
            }
        }
    }

    let mut records = Vec::new();
    let mut truth = Vec::new();
    for scan_idx in 0..cfg.scans {
        let class = &cfg.classes[scan_idx % cfg.classes.len()];
        let kind = ShapeKind::from_name(class)?;
        let scan_id = format!("scan{scan_idx:03}");
        let mut rng = RngStream::new(cfg.seed, derive_stream(cfg.seed, &[0xDA7A, scan_idx as u64]));

        // scan-level draws: base size, blob layout, walk state, peak jitter
        let s_base = h.min(w) as f64 * rng.uniform_in(0.13, 0.18);
        let mut blobs = Vec::with_capacity(4);
        while blobs.len() < 4 {
            let (bu, bv) = (rng.uniform_in(-0.75, 0.75), rng.uniform_in(-0.75, 0.75));
            if bu * bu + bv * bv <= 0.75 * 0.75 {
                blobs.push((bu, bv));
            }
        }
        let half_angle = 0.68 * (40.0f64).to_radians();
        let mut theta = rng.uniform_in(-half_angle, half_angle);
        let mut radius = rng.uniform_in(0.40 * h as f64, 0.90 * h as f64);
        let (mut d_theta, mut d_radius) = (0.0, 0.0);
        let mut phi = rng.uniform_in(0.0, std::f64::consts::PI);
        let mut d_phi = 0.0;
        let mut size_mod = 0.0f64;

        let spacing = t_count as f64 / cfg.labels_per_scan as f64;
        let mut peaks = Vec::with_capacity(cfg.labels_per_scan);
        for k in 0..cfg.labels_per_scan {
            let jitter = rng.uniform_in(-0.1, 0.1) * spacing;
            let p = ((k as f64 + 0.5) * spacing + jitter).round() as i64;
            peaks.push(p.clamp(0, t_count as i64 - 1) as usize);
        }
        // one background label near each peak, where visibility has decayed
        let mut bg_frames = Vec::with_capacity(cfg.labels_per_scan);
        for &p in &peaks {
            let mut offset = (2.0 * half_width).ceil() as i64 + 1;
            let pick = loop {
                let side = if offset % 2 == 0 { -1 } else { 1 };
                let cand = p as i64 + side * offset;
                if (0..t_count as i64).contains(&cand) {
                    let c = cand as usize;
                    if visibility(c, &peaks, half_width) < 0.3
                        && !peaks.contains(&c)
                        && !bg_frames.contains(&c)
                    {
                        break c;
                    }
                }
                offset += 1;
                if offset > 2 * t_count as i64 {
                    return Err(Error::invalid("no background frame available near a peak"));
                }
            };
            bg_frames.push(pick);
        }

        for t in 0..t_count {
            // smooth walk in fan polar coordinates, reflected at the margins
            d_theta = 0.90 * d_theta + 0.012 * rng.normal();
            d_radius = 0.90 * d_radius + 0.20 * h as f64 * 0.012 * rng.normal();
            theta += d_theta;
            radius += d_radius;
            if theta.abs() > half_angle {
                theta = theta.clamp(-half_angle, half_angle);
                d_theta = -d_theta;
            }
            let (r_lo, r_hi) = (0.38 * h as f64, 0.92 * h as f64);
            if radius < r_lo || radius > r_hi {
                radius = radius.clamp(r_lo, r_hi);
                d_radius = -d_radius;
            }
            d_phi = 0.95 * d_phi + 0.01 * rng.normal();
            phi += d_phi;
            size_mod = (0.95 * size_mod + 0.03 * rng.normal()).clamp(-0.15, 0.15);
            let s = s_base * (1.0 + size_mod);
            let (cx, cy) = fan.at(theta, radius);
            let vis = visibility(t, &peaks, half_width);

            // speckled field (one uniform draw per pixel, fixed order)
            let mut img = vec![0.0f32; h * w];
            for (idx, px) in img.iter_mut().enumerate() {
                let u = rng.uniform();
                let b = base[idx];
                *px = if b > 0.0 {
                    (b * (0.72 + 0.56 * u)) as f32
                } else {
                    (0.02 + 0.05 * u) as f32
                };
            }
            // additive shape pass over its bounding box
            let (sin_p, cos_p) = phi.sin_cos();
            let reach = s * 1.05;
            let i0 = ((cy - reach).floor().max(0.0)) as usize;
            let i1 = ((cy + reach).ceil() as usize).min(h);
            let j0 = ((cx - reach).floor().max(0.0)) as usize;
            let j1 = ((cx + reach).ceil() as usize).min(w);
            for i in i0..i1 {
                for j in j0..j1 {
                    let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                    let (dx, dy) = (x - cx, y - cy);
                    let u = (dx * cos_p + dy * sin_p) / s;
                    let v = (-dx * sin_p + dy * cos_p) / s;
                    if kind.contains(u, v, &blobs) && fan.contains(x, y) {
                        let px = &mut img[i * w + j];
                        *px = (*px as f64 + 0.38 * vis).min(1.0) as f32;
                    }
                }
            }

            // three gaze samples per frame (90 Hz tracker on 30 Hz frames),
            // each an outlier with probability 5%
            let mut gaze = Vec::with_capacity(3);
            for _ in 0..3 {
                let outlier = rng.uniform() < 0.05;
                let (gx, gy) = if outlier {
                    (rng.uniform() * w as f64, rng.uniform() * h as f64)
                } else {
                    (
                        (cx + cfg.gaze_sigma * rng.normal()).clamp(0.0, w as f64),
                        (cy + cfg.gaze_sigma * rng.normal()).clamp(0.0, h as f64),
                    )
                };
                gaze.push([gx / w as f64, gy / h as f64]);
            }

            let image_path = format!("frames/{scan_id}_f{t:04}.pgm");
            let tensor = Tensor::new(vec![1, h, w], img)?;
            save_frame_pgm(dir.join(&image_path), &tensor)?;
            let label = if peaks.contains(&t) {
                Some(class.clone())
            } else if bg_frames.contains(&t) {
                Some(cfg.background.clone())
            } else {
                None
            };
            records.push(ManifestRecord {
                image: image_path,
                scan: scan_id.clone(),
                frame: t,
                gaze,
                label,
            });
            truth.push(FrameTruth {
                scan: scan_id.clone(),
                frame: t,
                centroid: (cx, cy),
                bbox: (cx - s, cy - s, cx + s, cy + s),
                visibility: vis,
            });
        }
    }

    let mut classes = cfg.classes.clone();
    classes.push(cfg.background.clone());
    write_dataset(dir, &records, &classes)?;
    Ok(SynthReport { records, truth, classes })
}

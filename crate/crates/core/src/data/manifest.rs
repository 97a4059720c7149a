//! Dataset directory format: `manifest.jsonl` + `classes.json` + PGM frames.

use crate::data::pgm::{read_pgm_file, write_pgm_file};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// One line of `manifest.jsonl`. Gaze is stored normalized to [0,1]².
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestRecord {
    pub image: String,
    pub scan: String,
    pub frame: usize,
    #[serde(default)]
    pub gaze: Vec<[f64; 2]>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    /// Ordered class vocabulary; the background class is last.
    pub classes: Vec<String>,
}

/// A frame loaded into memory: intensities in [0,1], gaze in pixels.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub scan: String,
    pub frame: usize,
    pub image: Tensor<f32>,
    pub gaze: Vec<(f64, f64)>,
    pub label: Option<String>,
}

impl DatasetManifest {
    pub fn background_class(&self) -> &str {
        self.classes.last().map(String::as_str).unwrap_or("")
    }

    /// Load one record's frame; gaze is denormalized to pixel coordinates
    /// of the actual image extents.
    pub fn load_frame(&self, idx: usize) -> Result<FrameSample> {
        let rec = &self.records[idx];
        let pgm = read_pgm_file(self.root.join(&rec.image))?;
        let scale = 1.0f32 / pgm.maxval as f32;
        let data: Vec<f32> = pgm.data.iter().map(|&b| b as f32 * scale).collect();
        let image = Tensor::new(vec![1, pgm.height, pgm.width], data)?;
        let gaze = rec
            .gaze
            .iter()
            .map(|&[gx, gy]| (gx * pgm.width as f64, gy * pgm.height as f64))
            .collect();
        Ok(FrameSample {
            scan: rec.scan.clone(),
            frame: rec.frame,
            image,
            gaze,
            label: rec.label.clone(),
        })
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = dir.as_ref().to_path_buf();
    let classes: Vec<String> = serde_json::from_reader(
        std::fs::File::open(root.join("classes.json"))
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("classes.json: {e}"))))?,
    )?;
    if classes.is_empty() {
        return Err(Error::invalid("classes.json lists no classes"));
    }
    let f = std::fs::File::open(root.join("manifest.jsonl"))
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("manifest.jsonl: {e}"))))?;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        for &[gx, gy] in &rec.gaze {
            if !(0.0..=1.0).contains(&gx) || !(0.0..=1.0).contains(&gy) {
                return Err(Error::Manifest {
                    line: lineno + 1,
                    msg: format!("gaze ({gx}, {gy}) outside [0,1]²"),
                });
            }
        }
        if let Some(label) = &rec.label {
            if !classes.contains(label) {
                return Err(Error::Manifest {
                    line: lineno + 1,
                    msg: format!("label {label:?} not in class vocabulary"),
                });
            }
        }
        if !root.join(&rec.image).is_file() {
            return Err(Error::Manifest {
                line: lineno + 1,
                msg: format!("image file {:?} missing", rec.image),
            });
        }
        records.push(rec);
    }
    Ok(DatasetManifest { root, records, classes })
}

/// Write `manifest.jsonl` and `classes.json` into `dir` (frames are written
/// separately, e.g. by the synthetic generator).
pub fn write_dataset(dir: impl AsRef<Path>, records: &[ManifestRecord], classes: &[String]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    serde_json::to_writer(std::fs::File::create(dir.join("classes.json"))?, classes)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
    for rec in records {
        serde_json::to_writer(&mut f, rec)?;
        writeln!(f)?;
    }
    Ok(())
}

/// Keep frames whose index is ≡ 0 (mod stride); indices are per-scan, so a
/// plain filter respects scan boundaries.
pub fn temporal_subsample(records: Vec<ManifestRecord>, stride: usize) -> Vec<ManifestRecord> {
    assert!(stride >= 1);
    records.into_iter().filter(|r| r.frame % stride == 0).collect()
}

/// Drop gazeless records; returns (kept, dropped count).
pub fn filter_valid(records: Vec<ManifestRecord>) -> (Vec<ManifestRecord>, usize) {
    let before = records.len();
    let kept: Vec<_> = records.into_iter().filter(|r| !r.gaze.is_empty()).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Zero-mean, unit-variance per image (divisor N, σ floored at 1e-6 so a
/// constant image maps to zeros).
pub fn normalize_image(image: &Tensor<f32>) -> Tensor<f32> {
    let n = image.len() as f64;
    let mut sum = 0.0f64;
    for v in image.data() {
        sum += *v as f64;
    }
    let mean = sum / n;
    let mut var = 0.0f64;
    for v in image.data() {
        let d = *v as f64 - mean;
        var += d * d;
    }
    let sd = (var / n).sqrt().max(1e-6);
    let a = (1.0 / sd) as f32;
    let b = (-mean / sd) as f32;
    image.map(|v| v * a + b)
}

/// Helper for writers: quantize a [0,1] float image to 8-bit and save.
pub fn save_frame_pgm(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let (_, h, w) = image.dims3()?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm_file(path, w, h, &bytes)
}

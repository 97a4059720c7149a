//! Analytic receptive-field / geometry report. Walks the layer sequence
//! symbolically with the recurrence r ← r + (k−1)·l·j, j ← j·s, which is the
//! ground truth the dilation transform must preserve.

use crate::error::{Error, Result};
use crate::model::config::{BlockKind, Mode, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeField {
    pub name: String,
    /// Receptive field extent in input pixels.
    pub rf_px: usize,
    /// Effective stride of one output cell in input pixels.
    pub stride: usize,
    pub extent: (usize, usize),
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeometry {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone)]
pub struct ReceptiveFieldInfo {
    /// One entry per named probe point, in network order.
    pub probes: Vec<ProbeField>,
    /// Geometry at the trunk output (head input).
    pub output: ProbeField,
    /// Per-convolution geometry, useful for inspecting the transform.
    pub convs: Vec<ConvGeometry>,
}

impl ReceptiveFieldInfo {
    pub fn probe(&self, name: &str) -> Option<&ProbeField> {
        self.probes.iter().find(|p| p.name == name)
    }
}

struct Walk {
    mode: Mode,
    /// Down-sampling levels that survive in attention mode.
    keep_levels: usize,
    /// Classification-mode down-sampling transitions applied so far.
    scale: usize,
    r: usize,
    j: usize,
    h: usize,
    w: usize,
    convs: Vec<ConvGeometry>,
}

impl Walk {
    fn conv(&mut self, name: &str, kernel: usize, cls_stride: usize) {
        let removed =
            self.mode == Mode::Attention && cls_stride > 1 && self.scale + 1 > self.keep_levels;
        let stride = if removed { 1 } else { cls_stride };
        let dilation = if self.mode == Mode::Attention && kernel >= 3 {
            1usize << self.scale.saturating_sub(self.keep_levels)
        } else {
            1
        };
        let span = (kernel - 1) * dilation;
        self.r += span * self.j;
        self.j *= stride;
        // "same" padding span/2 on both sides: out = ceil(in / stride)
        self.h = (self.h - 1) / stride + 1;
        self.w = (self.w - 1) / stride + 1;
        if cls_stride > 1 {
            self.scale += 1;
        }
        self.convs.push(ConvGeometry { name: name.to_string(), kernel, stride, dilation });
    }

    fn pool(&mut self, kernel: usize, cls_stride: usize) -> Result<()> {
        if self.mode == Mode::Attention {
            if cls_stride > 1 && self.scale + 1 > self.keep_levels {
                return Err(Error::invalid(
                    "attention transform would remove a pooling down-sampling, which is unsupported",
                ));
            }
            if self.scale > self.keep_levels {
                return Err(Error::invalid(
                    "pooling after a removed down-sampling would need dilation, which is unsupported",
                ));
            }
        }
        self.r += (kernel - 1) * self.j;
        self.j *= cls_stride;
        let pad = (kernel - 1) / 2;
        self.h = (self.h + 2 * pad - kernel) / cls_stride + 1;
        self.w = (self.w + 2 * pad - kernel) / cls_stride + 1;
        if cls_stride > 1 {
            self.scale += 1;
        }
        Ok(())
    }

    fn snapshot(&self, name: &str, channels: usize) -> ProbeField {
        ProbeField {
            name: name.to_string(),
            rf_px: self.r,
            stride: self.j,
            extent: (self.h, self.w),
            channels,
        }
    }
}

/// Indices (0 = stem conv output, i+1 = stage i output) of the candidates
/// that become named probes: the last candidate of each run with equal
/// classification-mode cumulative stride.
pub(crate) fn probe_candidates(config: &NetworkConfig) -> Vec<bool> {
    let mut strides = Vec::with_capacity(config.stages.len() + 1);
    let mut j = config.stem.stride;
    strides.push(j);
    j *= config.stem.pool.map_or(1, |p| p.stride);
    for s in &config.stages {
        j *= s.stride;
        strides.push(j);
    }
    let mut keep = vec![true; strides.len()];
    for i in 0..strides.len() - 1 {
        if strides[i] == strides[i + 1] {
            keep[i] = false;
        }
    }
    keep
}

pub fn receptive_field(config: &NetworkConfig, mode: Mode) -> Result<ReceptiveFieldInfo> {
    config.validate()?;
    let keep = probe_candidates(config);
    let mut walk = Walk {
        mode,
        keep_levels: config.down_levels() - config.n_d,
        scale: 0,
        r: 1,
        j: 1,
        h: config.input.0,
        w: config.input.1,
        convs: Vec::new(),
    };
    let mut probes = Vec::new();
    let mut probe_no = 0usize;
    let mut register = |walk: &Walk, candidate: usize, channels: usize, probes: &mut Vec<ProbeField>| {
        if keep[candidate] {
            probe_no += 1;
            probes.push(walk.snapshot(&format!("stage{probe_no}"), channels));
        }
    };

    walk.conv("stem.conv", config.stem.kernel, config.stem.stride);
    register(&walk, 0, config.stem.channels, &mut probes);
    if let Some(p) = config.stem.pool {
        walk.pool(p.kernel, p.stride)?;
    }
    for (si, stage) in config.stages.iter().enumerate() {
        for b in 0..stage.repeat {
            let stride = if b == 0 { stage.stride } else { 1 };
            let tag = format!("stage{}.block{}", si + 1, b + 1);
            match stage.kind {
                BlockKind::PlainConv => walk.conv(&format!("{tag}.conv"), stage.kernel, stride),
                BlockKind::Bottleneck => {
                    walk.conv(&format!("{tag}.conv1"), 1, 1);
                    walk.conv(&format!("{tag}.conv2"), stage.kernel, stride);
                    walk.conv(&format!("{tag}.conv3"), 1, 1);
                }
            }
        }
        register(&walk, si + 1, stage.channels, &mut probes);
    }
    let out_channels = config.stages.last().map_or(config.stem.channels, |s| s.channels);
    let output = walk.snapshot("output", out_channels);
    Ok(ReceptiveFieldInfo { probes, output, convs: walk.convs })
}

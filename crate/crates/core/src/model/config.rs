use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Classification,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// conv k×k → norm → relu, repeated.
    PlainConv,
    /// 1×1 reduce → k×k grouped → 1×1 expand with identity/projection
    /// shortcut (inner width = out channels / 2).
    Bottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: BlockKind,
    pub repeat: usize,
    pub kernel: usize,
    pub channels: usize,
    /// Stride of the first block; 1 or 2.
    pub stride: usize,
    #[serde(default = "one")]
    pub groups: usize,
    /// Squeeze-excitation reduction ratio; None disables SE.
    #[serde(default)]
    pub se_ratio: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input resolution (H, W).
    pub input: (usize, usize),
    #[serde(default = "one")]
    pub in_channels: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    /// Trailing down-sampling operations removed in attention mode.
    pub n_d: usize,
    /// Width of the head 1×1 convolutions.
    pub head_channels: usize,
    /// Output classes of the classification head.
    pub classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Desk-scale config: conv3 stem and three plain stages.
    pub fn mini(classes: usize, seed: u64) -> Self {
        let stage = |channels: usize, stride: usize| StageSpec {
            kind: BlockKind::PlainConv,
            repeat: 2,
            kernel: 3,
            channels,
            stride,
            groups: 1,
            se_ratio: None,
        };
        NetworkConfig {
            input: (64, 80),
            in_channels: 1,
            stem: StemSpec { kernel: 3, stride: 1, channels: 8, pool: None },
            stages: vec![stage(8, 1), stage(16, 2), stage(32, 2)],
            n_d: 1,
            head_channels: 64,
            classes,
            seed,
        }
    }

    /// Half-width SE-ResNeXt-50 at 224×288, two removable down-samplings.
    pub fn se_resnext50_half(classes: usize, seed: u64) -> Self {
        let stage = |repeat: usize, channels: usize, stride: usize| StageSpec {
            kind: BlockKind::Bottleneck,
            repeat,
            kernel: 3,
            channels,
            stride,
            groups: 32,
            se_ratio: Some(16),
        };
        NetworkConfig {
            input: (224, 288),
            in_channels: 1,
            stem: StemSpec {
                kernel: 7,
                stride: 2,
                channels: 32,
                pool: Some(PoolSpec { kernel: 3, stride: 2 }),
            },
            stages: vec![
                stage(3, 128, 1),
                stage(4, 256, 2),
                stage(6, 512, 2),
                stage(3, 1024, 2),
            ],
            n_d: 2,
            head_channels: 256,
            classes,
            seed,
        }
    }

    /// Total number of down-sampling operations d (stem conv, stem pool, and
    /// stage entries with stride 2).
    pub fn down_levels(&self) -> usize {
        let mut d = 0;
        if self.stem.stride > 1 {
            d += 1;
        }
        if self.stem.pool.map_or(false, |p| p.stride > 1) {
            d += 1;
        }
        d + self.stages.iter().filter(|s| s.stride > 1).count()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invalid(msg));
        if self.input.0 == 0 || self.input.1 == 0 {
            return fail("input: zero extent".into());
        }
        if self.in_channels == 0 {
            return fail("in_channels: must be positive".into());
        }
        if self.stem.channels == 0 {
            return fail("stem.channels: must be positive".into());
        }
        if self.stem.kernel % 2 == 0 || self.stem.kernel == 0 {
            return fail("stem.kernel: must be odd".into());
        }
        if !(1..=2).contains(&self.stem.stride) {
            return fail("stem.stride: must be 1 or 2".into());
        }
        if let Some(p) = self.stem.pool {
            if p.kernel < 2 || !(1..=2).contains(&p.stride) {
                return fail("stem.pool: kernel ≥ 2 and stride 1 or 2".into());
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            let ctx = format!("stages[{i}]");
            if s.repeat == 0 {
                return fail(format!("{ctx}.repeat: must be positive"));
            }
            if s.kernel % 2 == 0 || s.kernel == 0 {
                return fail(format!("{ctx}.kernel: must be odd"));
            }
            if !(1..=2).contains(&s.stride) {
                return fail(format!("{ctx}.stride: must be 1 or 2"));
            }
            if s.groups == 0 || s.channels == 0 {
                return fail(format!("{ctx}: channels and groups must be positive"));
            }
            let grouped_width = match s.kind {
                BlockKind::PlainConv => s.channels,
                BlockKind::Bottleneck => {
                    if s.channels % 2 != 0 {
                        return fail(format!("{ctx}.channels: bottleneck width must be even"));
                    }
                    s.channels / 2
                }
            };
            if grouped_width % s.groups != 0 {
                return fail(format!(
                    "{ctx}: width {grouped_width} not divisible by groups {}",
                    s.groups
                ));
            }
            if s.se_ratio == Some(0) {
                return fail(format!("{ctx}.se_ratio: must be positive"));
            }
        }
        if self.n_d > self.down_levels() {
            return fail(format!(
                "n_d: {} exceeds the {} down-sampling operations",
                self.n_d,
                self.down_levels()
            ));
        }
        if self.head_channels == 0 || self.classes == 0 {
            return fail("head_channels and classes must be positive".into());
        }
        Ok(())
    }
}

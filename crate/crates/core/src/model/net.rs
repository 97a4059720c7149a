//! Config-driven network with a reversible stride↔dilation transform.
//!
//! The trunk is built once, in classification geometry; switching modes never
//! touches a weight. Each convolution remembers how many down-sampling
//! transitions precede it in classification mode, and its effective stride /
//! dilation / padding are derived from that plus the current mode, so the
//! transform is a pure relabeling and trivially reversible.

use crate::error::{Error, Result};
use crate::model::config::{BlockKind, Mode, NetworkConfig};
use crate::model::rf::probe_candidates;
use crate::optim::Param;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tape::{BnBatchStats, BnMode, ConvSpec, Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Running statistics of one normalization layer. Kept outside the Params:
/// they are state, not trainable weights, and the trainer folds batch
/// statistics into them in sample order.
#[derive(Debug, Clone)]
pub struct BnStat<E: Scalar> {
    pub name: String,
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

#[derive(Debug, Clone)]
struct ConvNode {
    w: usize,
    b: Option<usize>,
    kernel: usize,
    cls_stride: usize,
    groups: usize,
    /// Down-sampling transitions strictly before this conv (classification
    /// geometry); drives the attention-mode stride/dilation derivation.
    scale_before: usize,
}

#[derive(Debug, Clone)]
struct NormNode {
    scale: usize,
    shift: usize,
    stat: usize,
}

#[derive(Debug, Clone)]
struct SeNode {
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

#[derive(Debug, Clone)]
struct PoolNode {
    kernel: usize,
    stride: usize,
    scale_before: usize,
}

#[derive(Debug, Clone)]
enum TrunkOp {
    /// conv → norm → relu
    Stem { conv: ConvNode, norm: NormNode },
    Pool(PoolNode),
    /// conv → norm → relu (→ se)
    Plain { conv: ConvNode, norm: NormNode, se: Option<SeNode> },
    /// relu(norm3(conv3(relu(norm2(conv2(relu(norm1(conv1 x))))))) (+ se) + shortcut)
    Bottleneck {
        conv1: ConvNode,
        norm1: NormNode,
        conv2: ConvNode,
        norm2: NormNode,
        conv3: ConvNode,
        norm3: NormNode,
        down: Option<(ConvNode, NormNode)>,
        se: Option<SeNode>,
    },
    Probe(String),
}

#[derive(Debug, Clone)]
struct AttnHead {
    dw: ConvNode,
    fc1: ConvNode,
    fc2: ConvNode,
    out: ConvNode,
}

#[derive(Debug, Clone)]
struct ClsHead {
    fc1: ConvNode,
    out: ConvNode,
}

pub struct Network<E: Scalar> {
    pub config: NetworkConfig,
    mode: Mode,
    pub params: Vec<Param<E>>,
    pub stats: Vec<BnStat<E>>,
    trunk: Vec<TrunkOp>,
    attn: AttnHead,
    cls: ClsHead,
    attn_param_range: (usize, usize),
    cls_param_range: (usize, usize),
}

struct Builder<E: Scalar> {
    params: Vec<Param<E>>,
    stats: Vec<BnStat<E>>,
    rng: RngStream,
}

impl<E: Scalar> Builder<E> {
    fn filled(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<E> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| E::from_f64(self.rng.uniform_in(-bound, bound)))
            .collect();
        Tensor::new(shape, data).expect("builder shape")
    }

    fn conv(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        cls_stride: usize,
        groups: usize,
        bias: bool,
        scale_before: usize,
    ) -> ConvNode {
        let fan_in = (in_ch / groups) * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.filled(vec![out_ch, in_ch / groups, kernel, kernel], bound);
        let w_idx = self.params.len();
        self.params.push(Param::new(format!("{name}.w"), w, true));
        let b = bias.then(|| {
            let b = self.filled(vec![out_ch], bound);
            let idx = self.params.len();
            self.params.push(Param::new(format!("{name}.b"), b, false));
            idx
        });
        ConvNode { w: w_idx, b, kernel, cls_stride, groups, scale_before }
    }

    fn norm(&mut self, name: &str, channels: usize) -> NormNode {
        let scale = self.params.len();
        self.params
            .push(Param::new(format!("{name}.scale"), Tensor::full(vec![channels], E::one()), false));
        let shift = self.params.len();
        self.params
            .push(Param::new(format!("{name}.shift"), Tensor::zeros(vec![channels]), false));
        let stat = self.stats.len();
        self.stats.push(BnStat {
            name: name.to_string(),
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], E::one()),
        });
        NormNode { scale, shift, stat }
    }

    fn se(&mut self, name: &str, channels: usize, ratio: usize) -> SeNode {
        let reduced = (channels / ratio).max(1);
        let b1 = 1.0 / (channels as f64).sqrt();
        let b2 = 1.0 / (reduced as f64).sqrt();
        let tensors = [
            (format!("{name}.fc1.w"), self.filled(vec![reduced, channels], b1), true),
            (format!("{name}.fc1.b"), self.filled(vec![reduced], b1), false),
            (format!("{name}.fc2.w"), self.filled(vec![channels, reduced], b2), true),
            (format!("{name}.fc2.b"), self.filled(vec![channels], b2), false),
        ];
        let fc1_w = self.params.len();
        for (name, value, decay) in tensors {
            self.params.push(Param::new(name, value, decay));
        }
        SeNode { fc1_w, fc1_b: fc1_w + 1, fc2_w: fc1_w + 2, fc2_b: fc1_w + 3 }
    }
}

pub fn build_network<E: Scalar>(config: &NetworkConfig) -> Result<Network<E>> {
    config.validate()?;
    let keep = probe_candidates(config);
    let mut b = Builder::<E> {
        params: Vec::new(),
        stats: Vec::new(),
        rng: RngStream::new(config.seed, 0xA11C),
    };
    let mut trunk = Vec::new();
    let mut scale = 0usize;
    let mut probe_no = 0usize;

    let conv = b.conv(
        "stem.conv",
        config.in_channels,
        config.stem.channels,
        config.stem.kernel,
        config.stem.stride,
        1,
        false,
        scale,
    );
    let norm = b.norm("stem.norm", config.stem.channels);
    if config.stem.stride > 1 {
        scale += 1;
    }
    trunk.push(TrunkOp::Stem { conv, norm });
    if keep[0] {
        probe_no += 1;
        trunk.push(TrunkOp::Probe(format!("stage{probe_no}")));
    }
    if let Some(p) = config.stem.pool {
        trunk.push(TrunkOp::Pool(PoolNode { kernel: p.kernel, stride: p.stride, scale_before: scale }));
        if p.stride > 1 {
            scale += 1;
        }
    }

    let mut in_ch = config.stem.channels;
    for (si, stage) in config.stages.iter().enumerate() {
        for blk in 0..stage.repeat {
            let stride = if blk == 0 { stage.stride } else { 1 };
            let tag = format!("stage{}.block{}", si + 1, blk + 1);
            match stage.kind {
                BlockKind::PlainConv => {
                    let conv = b.conv(&tag_name(&tag, "conv"), in_ch, stage.channels, stage.kernel, stride, stage.groups, false, scale);
                    let norm = b.norm(&tag_name(&tag, "norm"), stage.channels);
                    if stride > 1 {
                        scale += 1;
                    }
                    let se = stage.se_ratio.map(|r| b.se(&tag_name(&tag, "se"), stage.channels, r));
                    trunk.push(TrunkOp::Plain { conv, norm, se });
                }
                BlockKind::Bottleneck => {
                    let width = stage.channels / 2;
                    let conv1 = b.conv(&tag_name(&tag, "conv1"), in_ch, width, 1, 1, 1, false, scale);
                    let norm1 = b.norm(&tag_name(&tag, "norm1"), width);
                    let conv2 = b.conv(&tag_name(&tag, "conv2"), width, width, stage.kernel, stride, stage.groups, false, scale);
                    let norm2 = b.norm(&tag_name(&tag, "norm2"), width);
                    let down = (stride != 1 || in_ch != stage.channels).then(|| {
                        (
                            b.conv(&tag_name(&tag, "down"), in_ch, stage.channels, 1, stride, 1, false, scale),
                            b.norm(&tag_name(&tag, "down.norm"), stage.channels),
                        )
                    });
                    if stride > 1 {
                        scale += 1;
                    }
                    let conv3 = b.conv(&tag_name(&tag, "conv3"), width, stage.channels, 1, 1, 1, false, scale);
                    let norm3 = b.norm(&tag_name(&tag, "norm3"), stage.channels);
                    let se = stage.se_ratio.map(|r| b.se(&tag_name(&tag, "se"), stage.channels, r));
                    trunk.push(TrunkOp::Bottleneck { conv1, norm1, conv2, norm2, conv3, norm3, down, se });
                }
            }
            in_ch = stage.channels;
        }
        if keep[si + 1] {
            probe_no += 1;
            trunk.push(TrunkOp::Probe(format!("stage{probe_no}")));
        }
    }

    let trunk_ch = in_ch;
    let hc = config.head_channels;
    let attn_start = b.params.len();
    let attn = AttnHead {
        dw: b.conv("attn.dw", trunk_ch, trunk_ch, 7, 1, trunk_ch, true, 0),
        fc1: b.conv("attn.fc1", trunk_ch, hc, 1, 1, 1, true, 0),
        fc2: b.conv("attn.fc2", hc, hc, 1, 1, 1, true, 0),
        out: b.conv("attn.out", hc, 1, 1, 1, 1, true, 0),
    };
    let cls_start = b.params.len();
    let cls = ClsHead {
        fc1: b.conv("cls.fc1", trunk_ch, hc, 1, 1, 1, true, 0),
        out: b.conv("cls.out", hc, config.classes, 1, 1, 1, true, 0),
    };
    let n_params = b.params.len();

    Ok(Network {
        config: config.clone(),
        mode: Mode::Classification,
        params: b.params,
        stats: b.stats,
        trunk,
        attn,
        cls,
        attn_param_range: (attn_start, cls_start),
        cls_param_range: (cls_start, n_params),
    })
}

fn tag_name(tag: &str, leaf: &str) -> String {
    format!("{tag}.{leaf}")
}

/// Trunk activations from one forward pass, plus the batch statistics the
/// caller must fold into the running stats when training.
pub struct TrunkOut {
    pub probes: Vec<(String, Var)>,
    pub output: Var,
    pub bn: Vec<(usize, BnBatchStats)>,
}

pub struct AttnOut {
    /// Pre-softmax activation map, shape [H_D, W_D].
    pub logits: Var,
    /// Spatial softmax of the logits.
    pub saliency: Var,
    pub trunk: TrunkOut,
}

pub struct ClsOut {
    pub logits: Var,
    pub probs: Var,
    pub trunk: TrunkOut,
}

impl<E: Scalar> Network<E> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Down-sampling levels that survive in the current mode.
    fn keep_levels(&self) -> usize {
        match self.mode {
            Mode::Classification => self.config.down_levels(),
            Mode::Attention => self.config.down_levels() - self.config.n_d,
        }
    }

    fn conv_spec(&self, node: &ConvNode) -> ConvSpec {
        let keep = self.keep_levels();
        let removed = node.cls_stride > 1 && node.scale_before >= keep;
        let dilation = if node.kernel >= 3 {
            1usize << node.scale_before.saturating_sub(keep)
        } else {
            1
        };
        ConvSpec {
            stride: if removed { 1 } else { node.cls_stride },
            dilation,
            padding: (node.kernel - 1) * dilation / 2,
            groups: node.groups,
        }
    }

    fn check_pools_transformable(&self) -> Result<()> {
        let keep = self.config.down_levels() - self.config.n_d;
        for op in &self.trunk {
            if let TrunkOp::Pool(p) = op {
                if p.stride > 1 && p.scale_before >= keep {
                    return Err(Error::invalid(
                        "attention transform would remove a pooling down-sampling, which is unsupported",
                    ));
                }
                if p.scale_before > keep {
                    return Err(Error::invalid(
                        "pooling after a removed down-sampling would need dilation, which is unsupported",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Switch to attention geometry: the last N_D stride-2 convolutions run
    /// at stride 1 and deeper k≥3 kernels dilate to compensate. Weights are
    /// untouched.
    pub fn dilate_for_attention(&mut self) -> Result<()> {
        if self.mode == Mode::Attention {
            return Err(Error::invalid("network already in attention mode"));
        }
        if self.config.n_d > self.config.down_levels() {
            return Err(Error::invalid(format!(
                "n_d {} exceeds the {} down-sampling operations",
                self.config.n_d,
                self.config.down_levels()
            )));
        }
        self.check_pools_transformable()?;
        self.mode = Mode::Attention;
        Ok(())
    }

    /// Inverse of [`dilate_for_attention`]; weights are untouched.
    pub fn undilate_for_classification(&mut self) -> Result<()> {
        if self.mode == Mode::Classification {
            return Err(Error::invalid("network already in classification mode"));
        }
        self.mode = Mode::Classification;
        Ok(())
    }

    /// One tape leaf per parameter, in parameter order.
    pub fn make_leaves(&self, tape: &mut Tape<E>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Registered probe point names, shallow to deep.
    pub fn probe_names(&self) -> Vec<&str> {
        self.trunk
            .iter()
            .filter_map(|op| match op {
                TrunkOp::Probe(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Indices of the parameters that participate in a forward pass of the
    /// given mode (trunk plus the matching head).
    pub fn active_param_ids(&self, mode: Mode) -> Vec<usize> {
        let head = match mode {
            Mode::Attention => self.attn_param_range,
            Mode::Classification => self.cls_param_range,
        };
        (0..self.attn_param_range.0).chain(head.0..head.1).collect()
    }

    fn apply_conv(&self, tape: &mut Tape<E>, vars: &[Var], x: Var, node: &ConvNode) -> Result<Var> {
        tape.conv2d(x, vars[node.w], node.b.map(|i| vars[i]), self.conv_spec(node))
    }

    fn apply_norm(
        &self,
        tape: &mut Tape<E>,
        vars: &[Var],
        x: Var,
        node: &NormNode,
        bn: BnMode,
        acc: &mut Vec<(usize, BnBatchStats)>,
    ) -> Result<Var> {
        let stat = &self.stats[node.stat];
        let (y, batch) = tape.batchnorm2d(
            x,
            vars[node.scale],
            vars[node.shift],
            &stat.mean,
            &stat.var,
            bn,
            BN_EPS,
        )?;
        if let Some(s) = batch {
            acc.push((node.stat, s));
        }
        Ok(y)
    }

    fn apply_se(&self, tape: &mut Tape<E>, vars: &[Var], x: Var, se: &SeNode) -> Result<Var> {
        let pooled = tape.global_avg_pool(x)?;
        let z = tape.linear(pooled, vars[se.fc1_w], vars[se.fc1_b])?;
        let z = tape.relu(z)?;
        let z = tape.linear(z, vars[se.fc2_w], vars[se.fc2_b])?;
        let gate = tape.sigmoid(z)?;
        tape.mul_channel(x, gate)
    }

    /// Run the trunk, recording activations at every probe point.
    pub fn forward_features(
        &self,
        tape: &mut Tape<E>,
        vars: &[Var],
        x: Var,
        bn: BnMode,
    ) -> Result<TrunkOut> {
        let (c, h, w) = tape.value(x).dims3()?;
        if (c, h, w) != (self.config.in_channels, self.config.input.0, self.config.input.1) {
            return Err(Error::shape(format!(
                "input [{c},{h},{w}] does not match configured [{},{},{}]",
                self.config.in_channels, self.config.input.0, self.config.input.1
            )));
        }
        let mut acc = Vec::new();
        let mut probes = Vec::new();
        let mut cur = x;
        for op in &self.trunk {
            cur = match op {
                TrunkOp::Stem { conv, norm } => {
                    let y = self.apply_conv(tape, vars, cur, conv)?;
                    let y = self.apply_norm(tape, vars, y, norm, bn, &mut acc)?;
                    tape.relu(y)?
                }
                TrunkOp::Pool(p) => {
                    tape.maxpool2d(cur, p.kernel, p.stride, (p.kernel - 1) / 2)?
                }
                TrunkOp::Plain { conv, norm, se } => {
                    let y = self.apply_conv(tape, vars, cur, conv)?;
                    let y = self.apply_norm(tape, vars, y, norm, bn, &mut acc)?;
                    let y = tape.relu(y)?;
                    match se {
                        Some(se) => self.apply_se(tape, vars, y, se)?,
                        None => y,
                    }
                }
                TrunkOp::Bottleneck { conv1, norm1, conv2, norm2, conv3, norm3, down, se } => {
                    let y = self.apply_conv(tape, vars, cur, conv1)?;
                    let y = self.apply_norm(tape, vars, y, norm1, bn, &mut acc)?;
                    let y = tape.relu(y)?;
                    let y = self.apply_conv(tape, vars, y, conv2)?;
                    let y = self.apply_norm(tape, vars, y, norm2, bn, &mut acc)?;
                    let y = tape.relu(y)?;
                    let y = self.apply_conv(tape, vars, y, conv3)?;
                    let y = self.apply_norm(tape, vars, y, norm3, bn, &mut acc)?;
                    let y = match se {
                        Some(se) => self.apply_se(tape, vars, y, se)?,
                        None => y,
                    };
                    let shortcut = match down {
                        Some((dc, dn)) => {
                            let s = self.apply_conv(tape, vars, cur, dc)?;
                            self.apply_norm(tape, vars, s, dn, bn, &mut acc)?
                        }
                        None => cur,
                    };
                    let sum = tape.add(y, shortcut)?;
                    tape.relu(sum)?
                }
                TrunkOp::Probe(name) => {
                    probes.push((name.clone(), cur));
                    cur
                }
            };
        }
        Ok(TrunkOut { probes, output: cur, bn: acc })
    }

    /// Attention-mode forward: activation map A and its spatial softmax Ŝ.
    pub fn attention_forward(
        &self,
        tape: &mut Tape<E>,
        vars: &[Var],
        x: Var,
        bn: BnMode,
    ) -> Result<AttnOut> {
        if self.mode != Mode::Attention {
            return Err(Error::invalid("attention head requires the network in attention mode"));
        }
        let trunk = self.forward_features(tape, vars, x, bn)?;
        let y = self.apply_conv(tape, vars, trunk.output, &self.attn.dw)?;
        let y = tape.relu(y)?;
        let y = self.apply_conv(tape, vars, y, &self.attn.fc1)?;
        let y = tape.relu(y)?;
        let y = self.apply_conv(tape, vars, y, &self.attn.fc2)?;
        let y = tape.relu(y)?;
        let a = self.apply_conv(tape, vars, y, &self.attn.out)?;
        let (_, h, w) = tape.value(a).dims3()?;
        let logits = tape.reshape(a, vec![h, w])?;
        let saliency = tape.softmax_spatial(logits)?;
        Ok(AttnOut { logits, saliency, trunk })
    }

    /// Classification-mode forward: class logits and probabilities.
    pub fn classification_forward(
        &self,
        tape: &mut Tape<E>,
        vars: &[Var],
        x: Var,
        bn: BnMode,
    ) -> Result<ClsOut> {
        if self.mode != Mode::Classification {
            return Err(Error::invalid(
                "classification head requires the network in classification mode",
            ));
        }
        let trunk = self.forward_features(tape, vars, x, bn)?;
        let y = self.apply_conv(tape, vars, trunk.output, &self.cls.fc1)?;
        let y = tape.relu(y)?;
        let y = self.apply_conv(tape, vars, y, &self.cls.out)?;
        let logits = tape.global_avg_pool(y)?;
        let probs = tape.softmax_vec(logits)?;
        Ok(ClsOut { logits, probs, trunk })
    }

    /// Fold a batch's normalization statistics into the running estimates
    /// with the given momentum: running ← (1−m)·running + m·batch.
    pub fn update_running_stats(&mut self, batches: &[(usize, BnBatchStats)], momentum: f64) {
        for (idx, batch) in batches {
            let stat = &mut self.stats[*idx];
            for (r, b) in stat.mean.data_mut().iter_mut().zip(&batch.mean) {
                *r = E::from_f64((1.0 - momentum) * r.as_f64() + momentum * b);
            }
            for (r, b) in stat.var.data_mut().iter_mut().zip(&batch.var) {
                *r = E::from_f64((1.0 - momentum) * r.as_f64() + momentum * b);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }
}

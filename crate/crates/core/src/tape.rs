//! Reverse-mode autodiff on a flat tape.
//!
//! Every op records its output value plus a backward closure; `backward`
//! walks the tape in reverse creation order (which is a valid reverse
//! topological order, since parents always precede children) and accumulates
//! gradients. With `recording == false` the same ops run forward-only and
//! skip closure construction, which is what evaluation uses.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<E> = Box<dyn Fn(&Tensor<E>, &[&Tensor<E>], &Tensor<E>) -> Vec<Tensor<E>> + Send>;

struct Node<E: Scalar> {
    parents: Vec<Var>,
    back: Option<BackFn<E>>,
}

pub struct Tape<E: Scalar> {
    recording: bool,
    values: Vec<Tensor<E>>,
    nodes: Vec<Node<E>>,
}

/// Per-sample batch statistics produced by a train-mode batchnorm, to be
/// folded into running state by the caller (in fixed sample order).
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Convolution hyperparameters. Kernel layout is `[C_out, C_in/groups, k, k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: 1, dilation: 1, padding: 0, groups: 1 }
    }
}

impl ConvSpec {
    pub fn out_extent(&self, input: usize, k: usize) -> Result<usize> {
        let eff = (k - 1) * self.dilation + 1;
        let padded = input + 2 * self.padding;
        if eff > padded {
            return Err(Error::shape(format!(
                "effective kernel extent {} exceeds padded input {}",
                eff, padded
            )));
        }
        Ok((padded - eff) / self.stride + 1)
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new(recording: bool) -> Self {
        Tape { recording, values: Vec::new(), nodes: Vec::new() }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.values[v.0]
    }

    /// Insert an input or parameter value as a leaf node.
    pub fn leaf(&mut self, t: Tensor<E>) -> Var {
        self.values.push(t);
        self.nodes.push(Node { parents: Vec::new(), back: None });
        Var(self.values.len() - 1)
    }

    fn push(&mut self, op: &str, out: Tensor<E>, parents: Vec<Var>, back: BackFn<E>) -> Result<Var> {
        if !out.all_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        self.values.push(out);
        if self.recording {
            self.nodes.push(Node { parents, back: Some(back) });
        } else {
            self.nodes.push(Node { parents: Vec::new(), back: None });
        }
        Ok(Var(self.values.len() - 1))
    }

    /// Reverse pass from a scalar node, seeding its gradient with `seed`
    /// (1/B for batch-averaged losses). Returns per-leaf gradients.
    pub fn backward(&self, loss: Var, seed: E) -> Result<Grads<E>> {
        if !self.recording {
            return Err(Error::invalid("backward on a non-recording tape"));
        }
        if self.values[loss.0].len() != 1 {
            return Err(Error::invalid("backward source must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.values[loss.0].shape().to_vec(), vec![seed]).unwrap());
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.back else { continue };
            let Some(g) = grads[i].take() else { continue };
            let pvals: Vec<&Tensor<E>> = node.parents.iter().map(|p| &self.values[p.0]).collect();
            let pgrads = back(&g, &pvals, &self.values[i]);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(pgrads) {
                match &mut grads[p.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Grads { grads })
    }

    // ---- ops -------------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let (c_in, h, wid) = xv.dims3()?;
        let (c_out, c_g, kh, kw) = wv.dims4()?;
        if kh != kw {
            return Err(Error::shape("only square kernels supported"));
        }
        if spec.groups == 0 || c_in % spec.groups != 0 || c_out % spec.groups != 0 {
            return Err(Error::shape(format!(
                "channels ({} in, {} out) not divisible by groups {}",
                c_in, c_out, spec.groups
            )));
        }
        if c_g != c_in / spec.groups {
            return Err(Error::shape(format!(
                "kernel expects {} input channels per group, input has {}",
                c_g,
                c_in / spec.groups
            )));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::invalid("stride and dilation must be positive"));
        }
        let bias = match b {
            Some(bv) => {
                let bt = &self.values[bv.0];
                if bt.dims1()? != c_out {
                    return Err(Error::shape(format!(
                        "bias length {} != out channels {}",
                        bt.len(),
                        c_out
                    )));
                }
                Some(bt)
            }
            None => None,
        };
        let out_h = spec.out_extent(h, kh)?;
        let out_w = spec.out_extent(wid, kw)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("zero-size convolution output"));
        }
        let out = conv_forward(xv, wv, bias, spec, out_h, out_w);

        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let has_bias = b.is_some();
        self.push(
            "conv2d",
            out,
            parents,
            Box::new(move |g, inputs, _out| {
                let xv = inputs[0];
                let wv = inputs[1];
                let gx = conv_backward_input(g, wv, xv.shape(), spec);
                let gw = conv_backward_kernel(g, xv, wv.shape(), spec);
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(conv_backward_bias(g));
                }
                grads
            }),
        )
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let xv = &self.values[x.0];
        let (c, h, w) = xv.dims3()?;
        if k == 0 || stride == 0 {
            return Err(Error::invalid("pool size and stride must be positive"));
        }
        let spec = ConvSpec { stride, dilation: 1, padding, groups: 1 };
        let out_h = spec.out_extent(h, k)?;
        let out_w = spec.out_extent(w, k)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("empty pooling output"));
        }
        let (out, argmax) = maxpool_forward(xv, k, stride, padding, out_h, out_w);
        let in_shape = vec![c, h, w];
        self.push(
            "maxpool2d",
            out,
            vec![x],
            Box::new(move |g, _inputs, _out| {
                let mut gx = Tensor::zeros(in_shape.clone());
                let gd = gx.data_mut();
                for (gi, &src) in g.data().iter().zip(&argmax) {
                    gd[src as usize] = gd[src as usize] + *gi;
                }
                vec![gx]
            }),
        )
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        let (c, h, w) = xv.dims3()?;
        let n = h * w;
        if n == 0 {
            return Err(Error::shape("empty spatial extent"));
        }
        let mut out = Vec::with_capacity(c);
        for ch in 0..c {
            let mut acc = 0.0f64;
            for v in &xv.data()[ch * n..(ch + 1) * n] {
                acc += v.as_f64();
            }
            out.push(E::from_f64(acc / n as f64));
        }
        let inv = E::from_f64(1.0 / n as f64);
        self.push(
            "global_avg_pool",
            Tensor::new(vec![c], out)?,
            vec![x],
            Box::new(move |g, _inputs, _out| {
                let mut gx = Tensor::zeros(vec![c, h, w]);
                let gd = gx.data_mut();
                for ch in 0..c {
                    let gc = g.data()[ch] * inv;
                    for v in &mut gd[ch * n..(ch + 1) * n] {
                        *v = gc;
                    }
                }
                vec![gx]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.values[x.0].map(|v| if v > E::zero() { v } else { E::zero() });
        self.push(
            "relu",
            out,
            vec![x],
            Box::new(|g, inputs, _out| {
                let mut gx = g.clone();
                for (gv, xv) in gx.data_mut().iter_mut().zip(inputs[0].data()) {
                    if *xv <= E::zero() {
                        *gv = E::zero();
                    }
                }
                vec![gx]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.values[x.0].map(sigmoid_scalar);
        self.push(
            "sigmoid",
            out,
            vec![x],
            Box::new(|g, _inputs, out| {
                let mut gx = g.clone();
                for (gv, y) in gx.data_mut().iter_mut().zip(out.data()) {
                    *gv = *gv * *y * (E::one() - *y);
                }
                vec![gx]
            }),
        )
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let bv = &self.values[b.0];
        let n = xv.dims1()?;
        let (m, n2) = wv.dims2()?;
        if n2 != n || bv.dims1()? != m {
            return Err(Error::shape(format!(
                "linear: x[{}], W[{},{}], b[{}]",
                n,
                m,
                n2,
                bv.len()
            )));
        }
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = bv.data()[i];
            let row = &wv.data()[i * n..(i + 1) * n];
            for (wv_, xv_) in row.iter().zip(xv.data()) {
                acc = acc + *wv_ * *xv_;
            }
            out.push(acc);
        }
        self.push(
            "linear",
            Tensor::new(vec![m], out)?,
            vec![x, w, b],
            Box::new(move |g, inputs, _out| {
                let xv = inputs[0];
                let wv = inputs[1];
                let mut gx = Tensor::zeros(vec![n]);
                for i in 0..m {
                    let gi = g.data()[i];
                    let row = &wv.data()[i * n..(i + 1) * n];
                    for (gxv, wv_) in gx.data_mut().iter_mut().zip(row) {
                        *gxv = *gxv + gi * *wv_;
                    }
                }
                let mut gw = Tensor::zeros(vec![m, n]);
                for i in 0..m {
                    let gi = g.data()[i];
                    let row = &mut gw.data_mut()[i * n..(i + 1) * n];
                    for (gwv, xv_) in row.iter_mut().zip(xv.data()) {
                        *gwv = gi * *xv_;
                    }
                }
                vec![gx, gw, g.clone()]
            }),
        )
    }

    /// Normalizes per channel over the sample's own spatial extent. Train
    /// mode also returns the batch statistics so the owner can update running
    /// state (running state itself stays outside the tape).
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        mode: BnMode,
        eps: f64,
    ) -> Result<(Var, Option<BnBatchStats>)> {
        if eps <= 0.0 {
            return Err(Error::invalid("batchnorm eps must be positive"));
        }
        let xv = &self.values[x.0];
        let (c, h, w) = xv.dims3()?;
        let n = h * w;
        if self.values[scale.0].dims1()? != c
            || self.values[shift.0].dims1()? != c
            || running_mean.dims1()? != c
            || running_var.dims1()? != c
        {
            return Err(Error::shape("batchnorm state length != channels"));
        }

        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            BnMode::Train => {
                let mut mean = Vec::with_capacity(c);
                let mut var = Vec::with_capacity(c);
                for ch in 0..c {
                    let s = &xv.data()[ch * n..(ch + 1) * n];
                    let mut acc = 0.0f64;
                    for v in s {
                        acc += v.as_f64();
                    }
                    let m = acc / n as f64;
                    let mut acc2 = 0.0f64;
                    for v in s {
                        let d = v.as_f64() - m;
                        acc2 += d * d;
                    }
                    mean.push(m);
                    var.push(acc2 / n as f64);
                }
                (mean, var)
            }
            BnMode::Eval => (
                running_mean.data().iter().map(|v| v.as_f64()).collect(),
                running_var.data().iter().map(|v| v.as_f64()).collect(),
            ),
        };
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let sc = &self.values[scale.0];
        let sh = &self.values[shift.0];
        let mut out = Vec::with_capacity(c * n);
        for ch in 0..c {
            let a = E::from_f64(sc.data()[ch].as_f64() * inv[ch]);
            let bterm = E::from_f64(sh.data()[ch].as_f64() - sc.data()[ch].as_f64() * mean[ch] * inv[ch]);
            for v in &xv.data()[ch * n..(ch + 1) * n] {
                out.push(a * *v + bterm);
            }
        }
        let stats = match mode {
            BnMode::Train => Some(BnBatchStats { mean: mean.clone(), var: var.clone() }),
            BnMode::Eval => None,
        };
        let train = mode == BnMode::Train;
        let var_out = self.push(
            "batchnorm2d",
            Tensor::new(vec![c, h, w], out)?,
            vec![x, scale, shift],
            Box::new(move |g, inputs, _out| {
                let xv = inputs[0];
                let sc = inputs[1];
                let mut gx = Tensor::zeros(vec![c, h, w]);
                let mut gscale = Tensor::zeros(vec![c]);
                let mut gshift = Tensor::zeros(vec![c]);
                for ch in 0..c {
                    let xs = &xv.data()[ch * n..(ch + 1) * n];
                    let gs = &g.data()[ch * n..(ch + 1) * n];
                    let m = mean[ch];
                    let iv = inv[ch];
                    let scale_c = sc.data()[ch].as_f64();
                    let mut sum_g = 0.0f64;
                    let mut sum_gxhat = 0.0f64;
                    for (gv, xv_) in gs.iter().zip(xs) {
                        let gf = gv.as_f64();
                        sum_g += gf;
                        sum_gxhat += gf * (xv_.as_f64() - m) * iv;
                    }
                    gscale.data_mut()[ch] = E::from_f64(sum_gxhat);
                    gshift.data_mut()[ch] = E::from_f64(sum_g);
                    let gxs = &mut gx.data_mut()[ch * n..(ch + 1) * n];
                    if train {
                        // d/dx of (x - mean)/sqrt(var+eps) with mean/var
                        // functions of x; standard batchnorm backward.
                        let nf = n as f64;
                        for ((gxv, gv), xv_) in gxs.iter_mut().zip(gs).zip(xs) {
                            let xhat = (xv_.as_f64() - m) * iv;
                            let v = scale_c * iv * (gv.as_f64() - sum_g / nf - xhat * sum_gxhat / nf);
                            *gxv = E::from_f64(v);
                        }
                    } else {
                        let a = scale_c * iv;
                        for (gxv, gv) in gxs.iter_mut().zip(gs) {
                            *gxv = E::from_f64(gv.as_f64() * a);
                        }
                    }
                }
                vec![gx, gscale, gshift]
            }),
        )?;
        Ok((var_out, stats))
    }

    /// Spatial softmax over a `[H,W]` activation map, with max subtraction.
    /// Outputs are floored at the smallest positive normal value so the
    /// positivity contract survives 32-bit underflow.
    pub fn softmax_spatial(&mut self, x: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        xv.dims2()?;
        let out = softmax_dense(xv);
        self.push("softmax_spatial", out, vec![x], Box::new(softmax_backward))
    }

    /// Softmax over a logit vector.
    pub fn softmax_vec(&mut self, x: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        let nn = xv.dims1()?;
        if nn < 2 {
            return Err(Error::invalid("softmax_vec wants at least 2 logits"));
        }
        let out = softmax_dense(xv);
        self.push("softmax_vec", out, vec![x], Box::new(softmax_backward))
    }

    /// Cross-entropy straight from logits (fused log-softmax), the
    /// numerically stable route for training.
    pub fn cross_entropy(&mut self, z: Var, label: usize) -> Result<Var> {
        let zv = &self.values[z.0];
        let n = zv.dims1()?;
        if n < 2 {
            return Err(Error::invalid("cross_entropy wants at least 2 logits"));
        }
        if label >= n {
            return Err(Error::invalid(format!("label {} out of range {}", label, n)));
        }
        let mx = zv.data().iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
        let mut sum = 0.0f64;
        for v in zv.data() {
            sum += (v.as_f64() - mx).exp();
        }
        let loss = mx + sum.ln() - zv.data()[label].as_f64();
        self.push(
            "cross_entropy",
            Tensor::scalar(E::from_f64(loss)),
            vec![z],
            Box::new(move |g, inputs, _out| {
                let zv = inputs[0];
                let gs = g.data()[0].as_f64();
                let mx = zv.data().iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
                let mut sum = 0.0f64;
                for v in zv.data() {
                    sum += (v.as_f64() - mx).exp();
                }
                let mut gz = Tensor::zeros(vec![zv.len()]);
                for (i, (gv, v)) in gz.data_mut().iter_mut().zip(zv.data()).enumerate() {
                    let p = (v.as_f64() - mx).exp() / sum;
                    let ind = if i == label { 1.0 } else { 0.0 };
                    *gv = E::from_f64(gs * (p - ind));
                }
                vec![gz]
            }),
        )
    }

    /// KL divergence Σ t·(ln t − ln p) of a fixed target from a predicted
    /// probability grid, with 0·log 0 := 0.
    pub fn kld_loss(&mut self, target: &Tensor<E>, probs: Var) -> Result<Var> {
        let pv = &self.values[probs.0];
        if target.shape() != pv.shape() {
            return Err(Error::shape(format!(
                "kld target {:?} vs probs {:?}",
                target.shape(),
                pv.shape()
            )));
        }
        let mut acc = 0.0f64;
        for (t, p) in target.data().iter().zip(pv.data()) {
            let tf = t.as_f64();
            if tf > 0.0 {
                acc += tf * (tf.ln() - p.as_f64().ln());
            }
        }
        let tcopy = target.clone();
        self.push(
            "kld_loss",
            Tensor::scalar(E::from_f64(acc)),
            vec![probs],
            Box::new(move |g, inputs, _out| {
                let pv = inputs[0];
                let gs = g.data()[0].as_f64();
                let mut gp = Tensor::zeros(pv.shape().to_vec());
                for ((gv, t), p) in gp.data_mut().iter_mut().zip(tcopy.data()).zip(pv.data()) {
                    let tf = t.as_f64();
                    if tf > 0.0 {
                        *gv = E::from_f64(-gs * tf / p.as_f64());
                    }
                }
                vec![gp]
            }),
        )
    }

    /// Expected gaze point of a probability grid: cell (i,j) maps to center
    /// ((j+0.5)/W_D·W, (i+0.5)/H_D·H). Output is `[x, y]`.
    pub fn soft_argmax(&mut self, probs: Var, img_h: usize, img_w: usize) -> Result<Var> {
        let pv = &self.values[probs.0];
        let (hd, wd) = pv.dims2()?;
        let sx = img_w as f64 / wd as f64;
        let sy = img_h as f64 / hd as f64;
        let mut ex = 0.0f64;
        let mut ey = 0.0f64;
        for i in 0..hd {
            for j in 0..wd {
                let p = pv.data()[i * wd + j].as_f64();
                ex += p * (j as f64 + 0.5) * sx;
                ey += p * (i as f64 + 0.5) * sy;
            }
        }
        self.push(
            "soft_argmax",
            Tensor::new(vec![2], vec![E::from_f64(ex), E::from_f64(ey)])?,
            vec![probs],
            Box::new(move |g, _inputs, _out| {
                let gx = g.data()[0].as_f64();
                let gy = g.data()[1].as_f64();
                let mut gp = Tensor::zeros(vec![hd, wd]);
                for i in 0..hd {
                    for j in 0..wd {
                        let v = gx * (j as f64 + 0.5) * sx + gy * (i as f64 + 0.5) * sy;
                        gp.data_mut()[i * wd + j] = E::from_f64(v);
                    }
                }
                vec![gp]
            }),
        )
    }

    /// Euclidean distance to a fixed target point; gradient defined as 0 at
    /// exact coincidence.
    pub fn euclid_loss(&mut self, target: (f64, f64), point: Var) -> Result<Var> {
        let pv = &self.values[point.0];
        if pv.dims1()? != 2 {
            return Err(Error::shape("euclid_loss wants a 2-vector"));
        }
        let dx = pv.data()[0].as_f64() - target.0;
        let dy = pv.data()[1].as_f64() - target.1;
        let d = (dx * dx + dy * dy).sqrt();
        self.push(
            "euclid_loss",
            Tensor::scalar(E::from_f64(d)),
            vec![point],
            Box::new(move |g, inputs, _out| {
                let pv = inputs[0];
                let gs = g.data()[0].as_f64();
                let dx = pv.data()[0].as_f64() - target.0;
                let dy = pv.data()[1].as_f64() - target.1;
                let d = (dx * dx + dy * dy).sqrt();
                let (ux, uy) = if d > 0.0 { (dx / d, dy / d) } else { (0.0, 0.0) };
                vec![Tensor::new(vec![2], vec![E::from_f64(gs * ux), E::from_f64(gs * uy)]).unwrap()]
            }),
        )
    }

    /// Sum of all entries, as a scalar node. 64-bit accumulation.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        let mut acc = 0.0f64;
        for v in xv.data() {
            acc += v.as_f64();
        }
        let shape = xv.shape().to_vec();
        self.push(
            "sum",
            Tensor::scalar(E::from_f64(acc)),
            vec![x],
            Box::new(move |g, _inputs, _out| {
                vec![Tensor::full(shape.clone(), g.data()[0])]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        for (o, v) in out.data_mut().iter_mut().zip(bv.data()) {
            *o = *o + *v;
        }
        self.push(
            "add",
            out,
            vec![a, b],
            Box::new(|g, _inputs, _out| vec![g.clone(), g.clone()]),
        )
    }

    /// Scale each channel of `[C,H,W]` by the matching entry of `[C]` —
    /// the SE excitation step.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        let sv = &self.values[s.0];
        let (c, h, w) = xv.dims3()?;
        if sv.dims1()? != c {
            return Err(Error::shape("mul_channel: scale length != channels"));
        }
        let n = h * w;
        let mut out = xv.clone();
        for ch in 0..c {
            let sc = sv.data()[ch];
            for v in &mut out.data_mut()[ch * n..(ch + 1) * n] {
                *v = *v * sc;
            }
        }
        self.push(
            "mul_channel",
            out,
            vec![x, s],
            Box::new(move |g, inputs, _out| {
                let xv = inputs[0];
                let sv = inputs[1];
                let mut gx = g.clone();
                let mut gs = Tensor::zeros(vec![c]);
                for ch in 0..c {
                    let sc = sv.data()[ch];
                    let mut acc = 0.0f64;
                    for (gv, xv_) in g.data()[ch * n..(ch + 1) * n].iter().zip(&xv.data()[ch * n..(ch + 1) * n]) {
                        acc += gv.as_f64() * xv_.as_f64();
                    }
                    gs.data_mut()[ch] = E::from_f64(acc);
                    for gv in &mut gx.data_mut()[ch * n..(ch + 1) * n] {
                        *gv = *gv * sc;
                    }
                }
                vec![gx, gs]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let out = self.values[x.0].clone().reshape(shape)?;
        let in_shape = self.values[x.0].shape().to_vec();
        self.push(
            "reshape",
            out,
            vec![x],
            Box::new(move |g, _inputs, _out| {
                vec![g.clone().reshape(in_shape.clone()).unwrap()]
            }),
        )
    }
}

/// Gradients from one backward pass, indexed by `Var`. Only leaves (and any
/// nodes still holding unconsumed gradients) are populated.
pub struct Grads<E: Scalar> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Grads<E> {
    /// Gradient of a leaf, if any path connected it to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[inline]
fn sigmoid_scalar<E: Scalar>(x: E) -> E {
    // Split by sign so the exponential never overflows.
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

fn softmax_dense<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let mx = x.data().iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut sum = 0.0f64;
    for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
        let e = E::from_f64((v.as_f64() - mx).exp());
        sum += e.as_f64();
        *o = e;
    }
    let inv = 1.0 / sum;
    for o in out.data_mut() {
        let p = E::from_f64(o.as_f64() * inv);
        *o = if p > E::tiny() { p } else { E::tiny() };
    }
    out
}

fn softmax_backward<E: Scalar>(g: &Tensor<E>, _inputs: &[&Tensor<E>], out: &Tensor<E>) -> Vec<Tensor<E>> {
    // dL/dx = y ⊙ (g − ⟨g, y⟩)
    let mut dot = 0.0f64;
    for (gv, y) in g.data().iter().zip(out.data()) {
        dot += gv.as_f64() * y.as_f64();
    }
    let mut gx = Tensor::zeros(out.shape().to_vec());
    for ((gxv, gv), y) in gx.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
        *gxv = E::from_f64(y.as_f64() * (gv.as_f64() - dot));
    }
    vec![gx]
}

// ---- convolution kernels --------------------------------------------------
//
// All three passes iterate (o, c, n, m) with a vectorizable run over output
// columns innermost, so every output cell receives its contributions in
// ascending (c, n, m) order — the same order as a naive nested loop, which
// keeps the results bit-identical to the reference implementation.

/// Valid output-column range [lo, hi) such that j·stride + off lands in [0, w).
#[inline]
fn col_range(out_w: usize, w: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
    let last = w as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out_w);
    (lo.min(hi), hi)
}

fn conv_forward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: ConvSpec,
    out_h: usize,
    out_w: usize,
) -> Tensor<E> {
    let (_, h, wid) = x.dims3().unwrap();
    let (c_out, c_g, k, _) = w.dims4().unwrap();
    let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = w.data();
    let group_out = c_out / spec.groups;
    for o in 0..c_out {
        let omap = &mut od[o * out_h * out_w..(o + 1) * out_h * out_w];
        if let Some(b) = bias {
            let bv = b.data()[o];
            for v in omap.iter_mut() {
                *v = bv;
            }
        }
        let c0 = (o / group_out) * c_g;
        for cg in 0..c_g {
            let c = c0 + cg;
            let xmap = &xd[c * h * wid..(c + 1) * h * wid];
            for n in 0..k {
                for m in 0..k {
                    let wv = wd[((o * c_g + cg) * k + n) * k + m];
                    let off_j = (spec.dilation * m) as isize - spec.padding as isize;
                    let (j_lo, j_hi) = col_range(out_w, wid, spec.stride, off_j);
                    if j_lo >= j_hi {
                        continue;
                    }
                    for i in 0..out_h {
                        let ii = (i * spec.stride + spec.dilation * n) as isize - spec.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let xrow = &xmap[ii as usize * wid..(ii as usize + 1) * wid];
                        let orow = &mut omap[i * out_w + j_lo..i * out_w + j_hi];
                        if spec.stride == 1 {
                            let x0 = (j_lo as isize + off_j) as usize;
                            for (ov, xv) in orow.iter_mut().zip(&xrow[x0..x0 + (j_hi - j_lo)]) {
                                *ov = *ov + wv * *xv;
                            }
                        } else {
                            for (jj, ov) in (j_lo..j_hi).zip(orow.iter_mut()) {
                                let xj = (jj * spec.stride) as isize + off_j;
                                *ov = *ov + wv * xrow[xj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward_input<E: Scalar>(
    g: &Tensor<E>,
    w: &Tensor<E>,
    x_shape: &[usize],
    spec: ConvSpec,
) -> Tensor<E> {
    let (c_out, c_g, k, _) = w.dims4().unwrap();
    let (_, h, wid) = (x_shape[0], x_shape[1], x_shape[2]);
    let (_, out_h, out_w) = g.dims3().unwrap();
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let gxd = gx.data_mut();
    let gd = g.data();
    let wd = w.data();
    let group_out = c_out / spec.groups;
    for o in 0..c_out {
        let gmap = &gd[o * out_h * out_w..(o + 1) * out_h * out_w];
        let c0 = (o / group_out) * c_g;
        for cg in 0..c_g {
            let c = c0 + cg;
            let gxmap = &mut gxd[c * h * wid..(c + 1) * h * wid];
            for n in 0..k {
                for m in 0..k {
                    let wv = wd[((o * c_g + cg) * k + n) * k + m];
                    let off_j = (spec.dilation * m) as isize - spec.padding as isize;
                    let (j_lo, j_hi) = col_range(out_w, wid, spec.stride, off_j);
                    if j_lo >= j_hi {
                        continue;
                    }
                    for i in 0..out_h {
                        let ii = (i * spec.stride + spec.dilation * n) as isize - spec.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let grow = &gmap[i * out_w + j_lo..i * out_w + j_hi];
                        let gxrow = &mut gxmap[ii as usize * wid..(ii as usize + 1) * wid];
                        if spec.stride == 1 {
                            let x0 = (j_lo as isize + off_j) as usize;
                            for (xv, gv) in gxrow[x0..x0 + (j_hi - j_lo)].iter_mut().zip(grow) {
                                *xv = *xv + wv * *gv;
                            }
                        } else {
                            for (jj, gv) in (j_lo..j_hi).zip(grow) {
                                let xj = ((jj * spec.stride) as isize + off_j) as usize;
                                gxrow[xj] = gxrow[xj] + wv * *gv;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv_backward_kernel<E: Scalar>(
    g: &Tensor<E>,
    x: &Tensor<E>,
    w_shape: &[usize],
    spec: ConvSpec,
) -> Tensor<E> {
    let (c_out, c_g, k) = (w_shape[0], w_shape[1], w_shape[2]);
    let (_, h, wid) = x.dims3().unwrap();
    let (_, out_h, out_w) = g.dims3().unwrap();
    let mut gw = Tensor::zeros(w_shape.to_vec());
    let gwd = gw.data_mut();
    let gd = g.data();
    let xd = x.data();
    let group_out = c_out / spec.groups;
    for o in 0..c_out {
        let gmap = &gd[o * out_h * out_w..(o + 1) * out_h * out_w];
        let c0 = (o / group_out) * c_g;
        for cg in 0..c_g {
            let c = c0 + cg;
            let xmap = &xd[c * h * wid..(c + 1) * h * wid];
            for n in 0..k {
                for m in 0..k {
                    let off_j = (spec.dilation * m) as isize - spec.padding as isize;
                    let (j_lo, j_hi) = col_range(out_w, wid, spec.stride, off_j);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let mut acc = E::zero();
                    for i in 0..out_h {
                        let ii = (i * spec.stride + spec.dilation * n) as isize - spec.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let grow = &gmap[i * out_w + j_lo..i * out_w + j_hi];
                        let xrow = &xmap[ii as usize * wid..(ii as usize + 1) * wid];
                        if spec.stride == 1 {
                            let x0 = (j_lo as isize + off_j) as usize;
                            for (gv, xv) in grow.iter().zip(&xrow[x0..x0 + (j_hi - j_lo)]) {
                                acc = acc + *gv * *xv;
                            }
                        } else {
                            for (jj, gv) in (j_lo..j_hi).zip(grow) {
                                let xj = ((jj * spec.stride) as isize + off_j) as usize;
                                acc = acc + *gv * xrow[xj];
                            }
                        }
                    }
                    gwd[((o * c_g + cg) * k + n) * k + m] = acc;
                }
            }
        }
    }
    gw
}

fn conv_backward_bias<E: Scalar>(g: &Tensor<E>) -> Tensor<E> {
    let (c_out, out_h, out_w) = g.dims3().unwrap();
    let n = out_h * out_w;
    let mut gb = Tensor::zeros(vec![c_out]);
    for o in 0..c_out {
        let mut acc = E::zero();
        for v in &g.data()[o * n..(o + 1) * n] {
            acc = acc + *v;
        }
        gb.data_mut()[o] = acc;
    }
    gb
}

fn maxpool_forward<E: Scalar>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> (Tensor<E>, Vec<u32>) {
    let (c, h, w) = x.dims3().unwrap();
    let mut out = Tensor::zeros(vec![c, out_h, out_w]);
    let mut argmax = vec![0u32; c * out_h * out_w];
    let xd = x.data();
    let od = out.data_mut();
    for ch in 0..c {
        let xmap = &xd[ch * h * w..(ch + 1) * h * w];
        for i in 0..out_h {
            for j in 0..out_w {
                let mut best = E::neg_infinity();
                let mut best_idx = 0usize;
                for n in 0..k {
                    let ii = (i * stride + n) as isize - padding as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for m in 0..k {
                        let jj = (j * stride + m) as isize - padding as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let idx = ii as usize * w + jj as usize;
                        // strict > keeps the first index on ties
                        if xmap[idx] > best {
                            best = xmap[idx];
                            best_idx = idx;
                        }
                    }
                }
                let oi = (ch * out_h + i) * out_w + j;
                od[oi] = best;
                argmax[oi] = (ch * h * w + best_idx) as u32;
            }
        }
    }
    (out, argmax)
}

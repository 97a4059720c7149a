use crate::data::augment::prepare_plain;
use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::classify::{confusion_matrix, macro_prf, ClassReport};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { max_iter: 10_000, tol: 1e-6 }
    }
}

impl ProbeConfig {
    /// The regularization grid: 16 log-spaced values from 1e-5 to 1e1
    /// inclusive.
    pub fn l2_grid(&self) -> Vec<f64> {
        (0..16).map(|k| 10f64.powf(-5.0 + 6.0 * k as f64 / 15.0)).collect()
    }
}

/// Global-average-pooled activations at one probe point for every labeled
/// frame, plus the class index of each. Frames run through the plain
/// resize+normalize pipeline; the forward pass is eval-mode.
pub fn probe_features<E: Scalar>(
    net: &Network<E>,
    layer: &str,
    ds: &DatasetManifest,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut all = probe_features_all(net, &[layer.to_string()], ds)?;
    let (vectors, labels) = all.remove(0);
    Ok((vectors, labels))
}

/// One eval-mode forward per labeled frame, harvesting several probe points
/// at once. Returns per-layer (vectors, labels) in the order requested.
pub fn probe_features_all<E: Scalar>(
    net: &Network<E>,
    layers: &[String],
    ds: &DatasetManifest,
) -> Result<Vec<(Vec<Vec<f64>>, Vec<usize>)>> {
    let known: Vec<&str> = net.probe_names();
    for l in layers {
        if !known.contains(&l.as_str()) {
            return Err(Error::invalid(format!(
                "unknown probe layer {l:?}; valid layers: {}",
                known.join(", ")
            )));
        }
    }
    let (h, w) = net.config.input;
    let mut out: Vec<(Vec<Vec<f64>>, Vec<usize>)> = vec![Default::default(); layers.len()];
    for (idx, rec) in ds.records.iter().enumerate() {
        let Some(label) = &rec.label else { continue };
        let class = ds
            .classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::invalid(format!("label {label:?} missing from vocabulary")))?;
        let sample = ds.load_frame(idx)?;
        let (image, _) = prepare_plain(&sample, h, w)?;
        let mut tape = Tape::new(false);
        let vars = net.make_leaves(&mut tape);
        let x = tape.leaf(image.cast::<E>());
        let trunk = net.forward_features(&mut tape, &vars, x, BnMode::Eval)?;
        for (li, layer) in layers.iter().enumerate() {
            let var = trunk
                .probes
                .iter()
                .find(|(n, _)| n == layer)
                .map(|(_, v)| *v)
                .expect("validated above");
            let map = tape.value(var);
            let (c, mh, mw) = map.dims3()?;
            let inv = 1.0 / (mh * mw) as f64;
            let data = map.data();
            let pooled: Vec<f64> = (0..c)
                .map(|ch| data[ch * mh * mw..(ch + 1) * mh * mw].iter().map(|v| v.as_f64()).sum::<f64>() * inv)
                .collect();
            out[li].0.push(pooled);
            out[li].1.push(class);
        }
    }
    if out[0].1.is_empty() {
        return Err(Error::invalid("no labeled frames to probe"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SoftmaxModel {
    /// weights[class][feature]
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl SoftmaxModel {
    pub fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).map(|(&wv, &xv)| wv * xv).sum::<f64>() + b)
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in &mut z {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in &mut z {
            *v /= sum;
        }
        z
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.predict_probs(x);
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    sample_weight: Vec<f64>,
    k: usize,
    d: usize,
    l2: f64,
}

impl Objective<'_> {
    /// Mean weighted cross-entropy plus l2·‖W‖²/2 (bias unregularized);
    /// parameters packed as [W row-major | b].
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (k, d) = (self.k, self.d);
        let n = self.x.len() as f64;
        grad.fill(0.0);
        let mut loss = 0.0;
        let mut z = vec![0.0f64; k];
        for (xi, (&yi, &wi)) in self.x.iter().zip(self.y.iter().zip(&self.sample_weight)) {
            for c in 0..k {
                let row = &theta[c * d..(c + 1) * d];
                z[c] = row.iter().zip(xi).map(|(&a, &b)| a * b).sum::<f64>() + theta[k * d + c];
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            loss += wi * (lse - z[yi]);
            for c in 0..k {
                let p = (z[c] - lse).exp();
                let coef = wi * (p - if c == yi { 1.0 } else { 0.0 }) / n;
                for (g, &xv) in grad[c * d..(c + 1) * d].iter_mut().zip(xi) {
                    *g += coef * xv;
                }
                grad[k * d + c] += coef;
            }
        }
        loss /= n;
        for c in 0..k {
            for j in 0..d {
                let wv = theta[c * d + j];
                loss += 0.5 * self.l2 * wv * wv;
                grad[c * d + j] += self.l2 * wv;
            }
        }
        loss
    }
}

/// Multinomial logistic regression with balanced class weights
/// (ω_c = N/(K·N_c)), minimized by L-BFGS with Armijo backtracking until the
/// gradient infinity-norm drops below `cfg.tol`. The problem is convex, so
/// the optimum is solver-independent.
pub fn softmax_regression_fit(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    l2: f64,
    cfg: &ProbeConfig,
) -> Result<SoftmaxModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid("feature and label counts disagree or are empty"));
    }
    let d = x[0].len();
    if x.iter().any(|v| v.len() != d) {
        return Err(Error::shape("ragged feature vectors"));
    }
    if l2 < 0.0 {
        return Err(Error::invalid("negative l2"));
    }
    let mut counts = vec![0usize; k];
    for &yi in y {
        if yi >= k {
            return Err(Error::invalid(format!("label {yi} outside {k} classes")));
        }
        counts[yi] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("softmax regression needs at least 2 classes present"));
    }
    let n = x.len() as f64;
    let class_weight: Vec<f64> = counts
        .iter()
        .map(|&c| if c > 0 { n / (k as f64 * c as f64) } else { 0.0 })
        .collect();
    let sample_weight: Vec<f64> = y.iter().map(|&yi| class_weight[yi]).collect();
    let obj = Objective { x, y, sample_weight, k, d, l2 };

    let dim = k * d + k;
    let mut theta = vec![0.0f64; dim];
    let mut grad = vec![0.0f64; dim];
    let mut loss = obj.eval(&theta, &mut grad);

    // L-BFGS two-loop recursion, history 10
    const M: usize = 10;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();

    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut gnorm = inf_norm(&grad);
    let mut iterations = 0;
    while gnorm >= cfg.tol && iterations < cfg.max_iter {
        // direction = −H·g via two-loop
        let mut q = grad.clone();
        let mut alpha = vec![0.0f64; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &q);
            axpy(&mut q, -alpha[i], &y_hist[i]);
        }
        let gamma = match s_hist.last() {
            Some(s) => {
                let yl = y_hist.last().unwrap();
                dot(s, yl) / dot(yl, yl)
            }
            None => 1.0 / gnorm.max(1.0),
        };
        for v in &mut q {
            *v *= gamma;
        }
        for i in 0..s_hist.len() {
            let beta = rho[i] * dot(&y_hist[i], &q);
            axpy(&mut q, alpha[i] - beta, &s_hist[i]);
        }
        let dir: Vec<f64> = q.iter().map(|&v| -v).collect();

        let slope = dot(&grad, &dir);
        let (dir, slope) = if slope < 0.0 {
            (dir, slope)
        } else {
            // numerical breakdown: fall back to steepest descent
            let d: Vec<f64> = grad.iter().map(|&g| -g).collect();
            let s = -dot(&grad, &grad);
            (d, s)
        };

        let mut step = 1.0;
        let mut new_theta;
        let mut new_grad = vec![0.0f64; dim];
        let mut new_loss;
        loop {
            new_theta = theta.iter().zip(&dir).map(|(&t, &dv)| t + step * dv).collect::<Vec<_>>();
            new_loss = obj.eval(&new_theta, &mut new_grad);
            if new_loss <= loss + 1e-4 * step * slope {
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                break; // no descent possible at machine precision
            }
        }

        let s_vec: Vec<f64> = new_theta.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
        let y_vec: Vec<f64> = new_grad.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s_vec, &y_vec);
        // curvature test scaled to the pair's magnitude, so pairs keep being
        // accepted as the step sizes shrink toward convergence
        if sy > 1e-10 * (dot(&s_vec, &s_vec) * dot(&y_vec, &y_vec)).sqrt() {
            if s_hist.len() == M {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s_vec);
            y_hist.push(y_vec);
        }
        theta = new_theta;
        grad = new_grad;
        loss = new_loss;
        gnorm = inf_norm(&grad);
        iterations += 1;
        if step < 1e-16 {
            break;
        }
    }
    if gnorm >= cfg.tol {
        return Err(Error::invalid(format!(
            "softmax regression did not converge in {} iterations (gradient norm {gnorm:.3e})",
            cfg.max_iter
        )));
    }
    Ok(SoftmaxModel {
        weights: (0..k).map(|c| theta[c * d..(c + 1) * d].to_vec()).collect(),
        bias: theta[k * d..].to_vec(),
        iterations,
        grad_norm: gnorm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn axpy(v: &mut [f64], a: f64, x: &[f64]) {
    for (vi, &xi) in v.iter_mut().zip(x) {
        *vi += a * xi;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeLayerReport {
    pub layer: String,
    pub selected_l2: f64,
    pub val_f1: f64,
    pub test: ClassReport,
}

/// Frozen-feature probe protocol: fit at every grid value on the training
/// features, pick by validation macro-F1 (ties toward stronger
/// regularization), report test scores of the winner. Background is scored
/// but excluded from the macro averages.
pub fn probe_sweep<E: Scalar>(
    net: &Network<E>,
    layers: &[String],
    train: &DatasetManifest,
    val: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeLayerReport>> {
    let k = train.classes.len();
    if val.classes != train.classes || test.classes != train.classes {
        return Err(Error::invalid("probe splits disagree on class vocabulary"));
    }
    let included: Vec<usize> = (0..k.saturating_sub(1)).collect();
    let tr = probe_features_all(net, layers, train)?;
    let va = probe_features_all(net, layers, val)?;
    let te = probe_features_all(net, layers, test)?;

    let mut reports = Vec::with_capacity(layers.len());
    for (li, layer) in layers.iter().enumerate() {
        let (tx, ty) = &tr[li];
        let (vx, vy) = &va[li];
        let (ex, ey) = &te[li];
        let mut best: Option<(f64, f64, SoftmaxModel)> = None; // (val_f1, l2, model)
        for l2 in cfg.l2_grid() {
            let model = softmax_regression_fit(tx, ty, k, l2, cfg)?;
            let preds: Vec<usize> = vx.iter().map(|x| model.predict(x)).collect();
            let cm = confusion_matrix(vy, &preds, k)?;
            let f1 = macro_prf(&cm, &train.classes, &included)?.macro_f1;
            let better = match &best {
                None => true,
                Some((bf, _, _)) => f1 >= *bf, // ≥ keeps the larger l2 on ties
            };
            if better {
                best = Some((f1, l2, model));
            }
        }
        let (val_f1, selected_l2, model) = best.expect("grid is non-empty");
        let preds: Vec<usize> = ex.iter().map(|x| model.predict(x)).collect();
        let cm = confusion_matrix(ey, &preds, k)?;
        let test_report = macro_prf(&cm, &train.classes, &included)?;
        reports.push(ProbeLayerReport {
            layer: layer.clone(),
            selected_l2,
            val_f1,
            test: test_report,
        });
    }
    Ok(reports)
}

use crate::data::augment::prepare_plain;
use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::classify::{confusion_matrix, macro_prf, ClassReport};
use crate::eval::metrics::{metric_auc_judd, metric_cc, metric_kld, metric_nss, metric_sim};
use crate::median::geometric_median;
use crate::model::{receptive_field, Mode, Network};
use crate::saliency::{downscale_saliency, make_saliency_map, SaliencyConfig, SaliencyTarget};
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape};
use crate::tensor::Tensor;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttnTask {
    Saliency,
    Gaze,
}

/// What stands in for the model: a trained network, or one of the two
/// data-only baselines. The static variants carry the input extents that a
/// network would have imposed, so frames and gaze are prepared identically.
pub enum AttnPredictor<'a, E: Scalar> {
    Network(&'a Network<E>),
    StaticMap { map: &'a SaliencyTarget, input: (usize, usize) },
    StaticPoint { point: (f64, f64), input: (usize, usize) },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over frames (divisor N).
    pub std: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, Serialize)]
pub struct SaliencyMetrics {
    pub kld: MetricSummary,
    pub nss: MetricSummary,
    pub auc_judd: MetricSummary,
    pub cc: MetricSummary,
    pub sim: MetricSummary,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum AttnEvalReport {
    Saliency { n_frames: usize, metrics: SaliencyMetrics },
    Gaze { n_frames: usize, l2_px: MetricSummary },
}

/// Eval-mode saliency prediction for one prepared input image.
pub fn predict_saliency<E: Scalar>(net: &Network<E>, image: &Tensor<f32>) -> Result<SaliencyTarget> {
    let mut tape = Tape::new(false);
    let vars = net.make_leaves(&mut tape);
    let x = tape.leaf(image.cast::<E>());
    let out = net.attention_forward(&mut tape, &vars, x, BnMode::Eval)?;
    let map = tape.value(out.saliency);
    let (h, w) = map.dims2()?;
    SaliencyTarget::from_values(h, w, map.data().iter().map(|v| v.as_f64()).collect())
}

/// Eval-mode gaze prediction (soft-argmax of the saliency map) in input
/// pixels.
pub fn predict_gaze<E: Scalar>(net: &Network<E>, image: &Tensor<f32>) -> Result<(f64, f64)> {
    let (h, w) = net.config.input;
    let mut tape = Tape::new(false);
    let vars = net.make_leaves(&mut tape);
    let x = tape.leaf(image.cast::<E>());
    let out = net.attention_forward(&mut tape, &vars, x, BnMode::Eval)?;
    let p = tape.soft_argmax(out.saliency, h, w)?;
    let pv = tape.value(p);
    Ok((pv.data()[0].as_f64(), pv.data()[1].as_f64()))
}

fn predictor_geometry<E: Scalar>(pred: &AttnPredictor<'_, E>) -> Result<((usize, usize), usize)> {
    match pred {
        AttnPredictor::Network(net) => {
            if net.mode() != Mode::Attention {
                return Err(Error::invalid("attention evaluation on a classification-mode network"));
            }
            let info = receptive_field(&net.config, Mode::Attention)?;
            Ok((net.config.input, info.output.stride))
        }
        AttnPredictor::StaticMap { map, input } => {
            let stride = input.0 / map.h();
            if stride == 0 || map.h() * stride != input.0 || map.w() * stride != input.1 {
                return Err(Error::shape(format!(
                    "static map {}×{} does not tile the {}×{} input",
                    map.h(),
                    map.w(),
                    input.0,
                    input.1
                )));
            }
            Ok((*input, stride))
        }
        AttnPredictor::StaticPoint { input, .. } => Ok((*input, 1)),
    }
}

/// Ground-truth map at prediction resolution: full-resolution Gaussian sum,
/// block-summed down by the output stride.
pub fn target_at_head(
    gaze: &[(f64, f64)],
    input: (usize, usize),
    stride: usize,
    cfg: &SaliencyConfig,
) -> Result<SaliencyTarget> {
    let full = make_saliency_map(gaze, input.0, input.1, cfg)?;
    downscale_saliency(&full, stride)
}

/// The cell of the prediction grid containing each gaze point.
pub fn fixation_cells(
    gaze: &[(f64, f64)],
    grid_h: usize,
    grid_w: usize,
    stride: usize,
) -> Vec<(usize, usize)> {
    gaze.iter()
        .map(|&(x, y)| {
            let i = ((y / stride as f64).floor().max(0.0) as usize).min(grid_h - 1);
            let j = ((x / stride as f64).floor().max(0.0) as usize).min(grid_w - 1);
            (i, j)
        })
        .collect()
}

/// Per-frame saliency metrics (or gaze ℓ2 error) against the dataset,
/// aggregated as mean ± population std over frames.
pub fn evaluate_attention<E: Scalar>(
    pred: &AttnPredictor<'_, E>,
    ds: &DatasetManifest,
    task: AttnTask,
    cfg: &SaliencyConfig,
) -> Result<AttnEvalReport> {
    if ds.records.is_empty() {
        return Err(Error::invalid("evaluation on an empty dataset"));
    }
    let (input, stride) = predictor_geometry(pred)?;
    let (gh, gw) = (input.0 / stride, input.1 / stride);

    let mut kld = Vec::new();
    let mut nss = Vec::new();
    let mut auc = Vec::new();
    let mut cc = Vec::new();
    let mut sim = Vec::new();
    let mut l2 = Vec::new();
    for idx in 0..ds.records.len() {
        let sample = ds.load_frame(idx)?;
        if sample.gaze.is_empty() {
            return Err(Error::invalid(format!(
                "frame {} of scan {} has no gaze to evaluate against",
                sample.frame, sample.scan
            )));
        }
        let (image, gaze) = prepare_plain(&sample, input.0, input.1)?;
        match task {
            AttnTask::Saliency => {
                let target = target_at_head(&gaze, input, stride, cfg)?;
                let map;
                let predicted: &SaliencyTarget = match pred {
                    AttnPredictor::Network(net) => {
                        map = predict_saliency(*net, &image)?;
                        &map
                    }
                    AttnPredictor::StaticMap { map, .. } => map,
                    AttnPredictor::StaticPoint { .. } => {
                        return Err(Error::invalid("a point baseline cannot predict saliency maps"))
                    }
                };
                let fix = fixation_cells(&gaze, gh, gw, stride);
                kld.push(metric_kld(target.grid(), predicted.grid())?);
                nss.push(metric_nss(predicted.grid(), gh, gw, &fix)?);
                auc.push(metric_auc_judd(predicted.grid(), gh, gw, &fix)?);
                cc.push(metric_cc(target.grid(), predicted.grid())?);
                sim.push(metric_sim(target.grid(), predicted.grid())?);
            }
            AttnTask::Gaze => {
                let truth = geometric_median(&gaze, 1e-9, 10_000)?.point;
                let guess = match pred {
                    AttnPredictor::Network(net) => predict_gaze(*net, &image)?,
                    AttnPredictor::StaticPoint { point, .. } => *point,
                    AttnPredictor::StaticMap { .. } => {
                        return Err(Error::invalid("a map baseline cannot predict gaze points"))
                    }
                };
                l2.push(((guess.0 - truth.0).powi(2) + (guess.1 - truth.1).powi(2)).sqrt());
            }
        }
    }
    Ok(match task {
        AttnTask::Saliency => AttnEvalReport::Saliency {
            n_frames: kld.len(),
            metrics: SaliencyMetrics {
                kld: summarize(&kld),
                nss: summarize(&nss),
                auc_judd: summarize(&auc),
                cc: summarize(&cc),
                sim: summarize(&sim),
            },
        },
        AttnTask::Gaze => AttnEvalReport::Gaze { n_frames: l2.len(), l2_px: summarize(&l2) },
    })
}

/// Eval-mode classification over the labeled frames of a dataset, scored
/// with background excluded from the macro averages.
pub fn evaluate_classifier<E: Scalar>(net: &Network<E>, ds: &DatasetManifest) -> Result<ClassReport> {
    if net.mode() != Mode::Classification {
        return Err(Error::invalid("classifier evaluation on an attention-mode network"));
    }
    let k = ds.classes.len();
    let (h, w) = net.config.input;
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    for idx in 0..ds.records.len() {
        let Some(label) = &ds.records[idx].label else { continue };
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
        let out = net.classification_forward(&mut tape, &vars, x, BnMode::Eval)?;
        let probs = tape.value(out.probs);
        let argmax = probs
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.as_f64().partial_cmp(&b.1.as_f64()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        truths.push(class);
        preds.push(argmax);
    }
    if truths.is_empty() {
        return Err(Error::invalid("no labeled frames to score"));
    }
    let cm = confusion_matrix(&truths, &preds, k)?;
    let included: Vec<usize> = (0..k.saturating_sub(1)).collect();
    macro_prf(&cm, &ds.classes, &included)
}

//! Saliency comparison metrics over flattened f64 grids.
//!
//! Conventions (fixed here, asserted in tests): z-scores use the population
//! standard deviation (divisor N); AUC pools every cell as a retrieval
//! candidate; SIM renormalizes both inputs to unit mass; degenerate constant
//! maps score NSS 0, CC 0, AUC 0.5.

use crate::error::{Error, Result};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("metric grids differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("metric on empty grids"));
    }
    Ok(())
}

fn check_cells(h: usize, w: usize, n: usize, fixations: &[(usize, usize)]) -> Result<()> {
    if h * w != n {
        return Err(Error::shape(format!("grid length {n} is not {h}×{w}")));
    }
    if fixations.is_empty() {
        return Err(Error::invalid("metric needs at least one fixation"));
    }
    for &(i, j) in fixations {
        if i >= h || j >= w {
            return Err(Error::invalid(format!("fixation ({i}, {j}) outside {h}×{w} grid")));
        }
    }
    Ok(())
}

/// KL divergence Σ t·ln(t/p) of a target distribution from a prediction,
/// with the prediction floored at the smallest positive double so empty
/// predicted cells yield a large finite penalty instead of ∞. Same formula
/// as the saliency training loss.
pub fn metric_kld(target: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(target, pred)?;
    let mut acc = 0.0;
    for (&t, &p) in target.iter().zip(pred) {
        if t > 0.0 {
            acc += t * (t.ln() - p.max(f64::MIN_POSITIVE).ln());
        }
    }
    Ok(acc)
}

fn mean_and_pop_sd(grid: &[f64]) -> (f64, f64) {
    let n = grid.len() as f64;
    let mean = grid.iter().sum::<f64>() / n;
    let var = grid.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalized scanpath saliency: mean z-scored prediction value over the
/// fixated cells. A constant map has no z-scores and scores 0.
pub fn metric_nss(pred: &[f64], h: usize, w: usize, fixations: &[(usize, usize)]) -> Result<f64> {
    check_cells(h, w, pred.len(), fixations)?;
    let (mean, sd) = mean_and_pop_sd(pred);
    if sd == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = fixations.iter().map(|&(i, j)| (pred[i * w + j] - mean) / sd).sum();
    Ok(sum / fixations.len() as f64)
}

/// AUC-Judd: fixated cells are positives, every cell is a candidate.
/// The ROC curve is traced at each distinct fixated saliency value and
/// integrated by trapezoid with the (0,0) and (1,1) endpoints included.
pub fn metric_auc_judd(pred: &[f64], h: usize, w: usize, fixations: &[(usize, usize)]) -> Result<f64> {
    check_cells(h, w, pred.len(), fixations)?;
    let mut thresholds: Vec<f64> = fixations.iter().map(|&(i, j)| pred[i * w + j]).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut sorted = pred.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n_cells = pred.len() as f64;
    let n_fix = fixations.len() as f64;

    // (fpr, tpr) points in increasing fpr order
    let mut points = vec![(0.0, 0.0)];
    let mut fix_vals: Vec<f64> = fixations.iter().map(|&(i, j)| pred[i * w + j]).collect();
    fix_vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for &t in &thresholds {
        let tp = fix_vals.partition_point(|&v| v >= t) as f64;
        let above = sorted.partition_point(|&v| v >= t) as f64;
        points.push((above / n_cells, tp / n_fix));
    }
    points.push((1.0, 1.0));

    let mut auc = 0.0;
    for pair in points.windows(2) {
        let (f0, t0) = pair[0];
        let (f1, t1) = pair[1];
        auc += (f1 - f0) * (t0 + t1) * 0.5;
    }
    Ok(auc)
}

/// Pearson correlation over the flattened grids; 0 when either is constant.
pub fn metric_cc(target: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(target, pred)?;
    let n = target.len() as f64;
    let ma = target.iter().sum::<f64>() / n;
    let mb = pred.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&a, &b) in target.iter().zip(pred) {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Histogram intersection Σ min(t, p) after renormalizing both grids to
/// unit mass.
pub fn metric_sim(target: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(target, pred)?;
    let st: f64 = target.iter().sum();
    let sp: f64 = pred.iter().sum();
    if st <= 0.0 || sp <= 0.0 {
        return Err(Error::invalid("similarity of a non-positive-mass grid"));
    }
    Ok(target.iter().zip(pred).map(|(&t, &p)| (t / st).min(p / sp)).sum())
}

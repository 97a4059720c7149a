use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// confusion[truth][prediction]
    pub confusion: Vec<Vec<usize>>,
}

/// Count (truth, prediction) pairs into a k×k matrix, rows indexed by truth.
pub fn confusion_matrix(truths: &[usize], preds: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if truths.len() != preds.len() {
        return Err(Error::shape(format!(
            "{} truths vs {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let mut cm = vec![vec![0usize; k]; k];
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= k || p >= k {
            return Err(Error::invalid(format!("label {} outside {k} classes", t.max(p))));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

/// Per-class precision/recall/F1 from a confusion matrix, with macro averages
/// taken as unweighted means over `included` classes only (the background
/// class is scored per-class but conventionally left out of the macro).
/// Undefined ratios (empty denominators) score 0.
pub fn macro_prf(confusion: &[Vec<usize>], classes: &[String], included: &[usize]) -> Result<ClassReport> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|row| row.len() != k) {
        return Err(Error::shape("confusion matrix must be square"));
    }
    if classes.len() != k {
        return Err(Error::shape(format!("{} class names for a {k}×{k} matrix", classes.len())));
    }
    if included.is_empty() || included.iter().any(|&c| c >= k) {
        return Err(Error::invalid("macro average needs a non-empty in-range class subset"));
    }
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassScore { class: classes[c].clone(), precision, recall, f1, support });
    }
    let n = included.len() as f64;
    let macro_precision = included.iter().map(|&c| per_class[c].precision).sum::<f64>() / n;
    let macro_recall = included.iter().map(|&c| per_class[c].recall).sum::<f64>() / n;
    let macro_f1 = included.iter().map(|&c| per_class[c].f1).sum::<f64>() / n;
    Ok(ClassReport {
        per_class,
        macro_precision,
        macro_recall,
        macro_f1,
        confusion: confusion.to_vec(),
    })
}

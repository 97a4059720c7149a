//! Geometric median of 2-D points by Weiszfeld iteration, with the data-point
//! collision handling the plain algorithm lacks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct MedianResult {
    pub point: (f64, f64),
    pub iterations: usize,
    /// False when max_iter ran out before the gradient-norm criterion held;
    /// `point` is then the best iterate reached.
    pub converged: bool,
}

fn objective(points: &[(f64, f64)], p: (f64, f64)) -> f64 {
    points.iter().map(|q| ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt()).sum()
}

/// Gradient of Σ‖q − p‖ at p (sum of unit vectors from data points toward p),
/// skipping points closer than `tol`.
fn gradient(points: &[(f64, f64)], p: (f64, f64), tol: f64) -> (f64, f64) {
    let mut g = (0.0, 0.0);
    for q in points {
        let d = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
        if d >= tol {
            g.0 += (p.0 - q.0) / d;
            g.1 += (p.1 - q.1) / d;
        }
    }
    g
}

/// Weiszfeld iteration from the centroid. Convergence criterion: the
/// objective's gradient norm drops below `tol`. When an iterate lands within
/// `tol` of a data point, the subgradient optimality condition decides
/// between returning that point exactly and stepping off it by `tol`.
pub fn geometric_median(points: &[(f64, f64)], tol: f64, max_iter: usize) -> Result<MedianResult> {
    if points.is_empty() {
        return Err(Error::invalid("geometric median of an empty point set"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    match points {
        [p] => return Ok(MedianResult { point: *p, iterations: 0, converged: true }),
        [a, b] => {
            // any point of the segment minimizes; the midpoint is canonical
            return Ok(MedianResult {
                point: ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0),
                iterations: 0,
                converged: true,
            });
        }
        _ => {}
    }

    let n = points.len() as f64;
    let mut p = points.iter().fold((0.0, 0.0), |acc, q| (acc.0 + q.0, acc.1 + q.1));
    p = (p.0 / n, p.1 / n);
    let mut obj = objective(points, p);

    for it in 1..=max_iter {
        // collision with a data point?
        let hit = points
            .iter()
            .position(|q| ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt() < tol);
        if let Some(i) = hit {
            // r = Σ_{j≠i} (q_j − p)/d_j ; ‖r‖ ≤ 1 ⇔ the data point is optimal
            let mut r = (0.0, 0.0);
            for (j, q) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
                if d > 0.0 {
                    r.0 += (q.0 - p.0) / d;
                    r.1 += (q.1 - p.1) / d;
                }
            }
            let rn = (r.0 * r.0 + r.1 * r.1).sqrt();
            if rn <= 1.0 {
                return Ok(MedianResult { point: points[i], iterations: it, converged: true });
            }
            // not optimal: step off the data point along the descent direction
            p = (p.0 + tol * r.0 / rn, p.1 + tol * r.1 / rn);
            obj = objective(points, p);
            continue;
        }

        // standard Weiszfeld update
        let mut num = (0.0, 0.0);
        let mut den = 0.0;
        for q in points {
            let d = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
            num.0 += q.0 / d;
            num.1 += q.1 / d;
            den += 1.0 / d;
        }
        p = (num.0 / den, num.1 / den);
        let new_obj = objective(points, p);
        debug_assert!(
            new_obj <= obj + 1e-9 * obj.max(1.0),
            "Weiszfeld objective increased: {obj} -> {new_obj}"
        );
        obj = new_obj;

        // declare convergence on the gradient criterion only away from data
        // points; near one, the next iteration's collision branch decides
        // (and may snap to the exact point)
        let near = points
            .iter()
            .any(|q| ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt() < tol);
        if !near {
            let g = gradient(points, p, tol);
            if (g.0 * g.0 + g.1 * g.1).sqrt() < tol {
                return Ok(MedianResult { point: p, iterations: it, converged: true });
            }
        }
    }
    let g = gradient(points, p, tol);
    let converged = (g.0 * g.0 + g.1 * g.1).sqrt() < tol;
    Ok(MedianResult { point: p, iterations: max_iter, converged })
}

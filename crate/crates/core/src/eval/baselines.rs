use crate::error::{Error, Result};
use crate::median::geometric_median;
use crate::saliency::SaliencyTarget;

/// Mean of the training saliency maps, renormalized to unit mass — the
/// data-independent predictor that any learned map has to beat.
pub fn static_saliency_baseline(maps: &[SaliencyTarget]) -> Result<SaliencyTarget> {
    let first = maps.first().ok_or_else(|| Error::invalid("baseline needs at least one map"))?;
    let (h, w) = (first.h(), first.w());
    let mut acc = vec![0.0f64; h * w];
    for m in maps {
        if (m.h(), m.w()) != (h, w) {
            return Err(Error::shape(format!(
                "baseline maps differ: {}×{} vs {h}×{w}",
                m.h(),
                m.w()
            )));
        }
        for (a, v) in acc.iter_mut().zip(m.grid()) {
            *a += v;
        }
    }
    let inv = 1.0 / maps.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    SaliencyTarget::from_values(h, w, acc)
}

/// Geometric median of all pooled training gaze points.
pub fn static_gaze_baseline(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let m = geometric_median(points, 1e-9, 10_000)?;
    Ok(m.point)
}

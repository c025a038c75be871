use crate::error::{Error, Result};

/// Number of IoU thresholds in the success curve: 0.00, 0.01, ..., 1.00.
pub const SUCCESS_THRESHOLDS: usize = 101;

/// Default center-error threshold for precision, in pixels.
pub const PRECISION_THRESHOLD: f64 = 20.0;

/// Fraction of frames with IoU strictly above each threshold.
pub fn success_curve(ious: &[f64]) -> Result<Vec<f64>> {
    if ious.is_empty() {
        return Err(Error::Parameter("success curve of an empty run".into()));
    }
    if let Some(v) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Parameter(format!("IoU {v} outside [0, 1]")));
    }
    let n = ious.len() as f64;
    Ok((0..SUCCESS_THRESHOLDS)
        .map(|k| {
            let t = k as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
            ious.iter().filter(|&&v| v > t).count() as f64 / n
        })
        .collect())
}

/// Mean of the success curve.
pub fn success_auc(ious: &[f64]) -> Result<f64> {
    let curve = success_curve(ious)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Fraction of frames whose center error is at most `threshold` pixels.
pub fn precision_at(center_errors: &[f64], threshold: f64) -> Result<f64> {
    if center_errors.is_empty() {
        return Err(Error::Parameter("precision of an empty run".into()));
    }
    if center_errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::Parameter("center errors must be non-negative".into()));
    }
    let hits = center_errors.iter().filter(|&&e| e <= threshold).count();
    Ok(hits as f64 / center_errors.len() as f64)
}

/// Fraction of frames with IoU above `threshold`.
pub fn overlap_rate(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64
}

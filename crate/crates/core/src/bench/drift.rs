use serde::{Deserialize, Serialize};

use super::dataset::Sequence;
use super::runner::RunResult;
use crate::inference::iou;

/// Default IoU below which a captured template counts as drifted.
pub const DEFAULT_DRIFT_IOU: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub mean_norm_det: f64,
    pub n_drifted: usize,
    pub n_lt_updates: usize,
    pub relative_drift: f64,
}

impl DriftReport {
    fn from_counts(mean_norm_det: f64, n_drifted: usize, n_lt_updates: usize) -> Self {
        Self {
            mean_norm_det,
            n_drifted,
            n_lt_updates,
            relative_drift: n_drifted as f64 / n_lt_updates.max(1) as f64,
        }
    }
}

/// Counts long-term updates whose capture box overlaps the annotation of
/// its frame by less than `drift_iou`.
pub fn drift_stats(result: &RunResult, seq: &Sequence, drift_iou: f64) -> DriftReport {
    let mut updates = 0;
    let mut drifted = 0;
    for e in result.lt_updates() {
        updates += 1;
        let off_target = match (e.capture_box, seq.groundtruth.get(e.frame)) {
            (Some(b), Some(gt)) => iou(&b, gt) < drift_iou,
            _ => false,
        };
        if off_target {
            drifted += 1;
        }
    }
    DriftReport::from_counts(result.final_memory.current_det(), drifted, updates)
}

/// Pools several per-sequence reports: counts add up, determinants average.
pub fn aggregate_drift(reports: &[DriftReport]) -> DriftReport {
    let n_drifted = reports.iter().map(|r| r.n_drifted).sum();
    let n_lt_updates = reports.iter().map(|r| r.n_lt_updates).sum();
    let mean = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.mean_norm_det).sum::<f64>() / reports.len() as f64
    };
    DriftReport::from_counts(mean, n_drifted, n_lt_updates)
}

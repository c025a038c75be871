use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Sequence;
use super::runner::{run_ope_with, RunOptions};
use crate::error::{Error, Result};
use crate::matcher::TrackerConfig;
use crate::memory::{load_snapshot, save_snapshot};

/// Relative determinant change below which the re-run loop stops.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;

/// End-of-run summary of one pass of the re-run loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PocRecord {
    pub run: usize,
    /// Capacity-order normalized determinant of the final long-term memory.
    pub norm_det: f64,
    pub auc: f64,
    pub slots: usize,
    pub lt_updates: usize,
}

/// Whether two consecutive determinants differ by less than the tolerance,
/// relative to the larger one. Two zeros count as converged.
pub fn converged(prev: f64, next: f64) -> bool {
    let scale = prev.abs().max(next.abs());
    scale == 0.0 || (next - prev).abs() < CONVERGENCE_TOLERANCE * scale
}

/// Tracks `seq` repeatedly, each run starting from the long-term memory the
/// previous run ended with (persisted under `work_dir/run_XX`), until the
/// determinant settles or `max_runs` is reached.
pub fn poc_experiment(
    seq: &Sequence,
    config: &TrackerConfig,
    max_runs: usize,
    work_dir: &Path,
    features_dir: Option<&Path>,
) -> Result<Vec<PocRecord>> {
    if max_runs < 2 {
        return Err(Error::Parameter(format!("need at least 2 runs, got {max_runs}")));
    }
    let experiment = |what: &str, e: Error| Error::Experiment(format!("{what}: {e}"));
    let mut records: Vec<PocRecord> = Vec::new();
    let mut memory = None;
    for run in 1..=max_runs {
        let options = RunOptions {
            memory: memory.take(),
            crop_dir: None,
            features_dir: features_dir.map(Path::to_path_buf),
        };
        let result = run_ope_with(seq, config, options)?;
        let record = PocRecord {
            run,
            norm_det: result.final_memory.capacity_det(),
            auc: result.auc()?,
            slots: result.final_memory.len(),
            lt_updates: result.lt_updates().count(),
        };
        log::info!(
            "{} run {run}: det {:.6e}, auc {:.4}, {} updates",
            seq.name,
            record.norm_det,
            record.auc,
            record.lt_updates
        );
        let dir = work_dir.join(format!("run_{run:02}"));
        save_snapshot(&result.final_memory, &dir).map_err(|e| experiment("saving memory", e))?;
        memory = Some(load_snapshot(&dir).map_err(|e| experiment("reloading memory", e))?);
        let done = records.last().is_some_and(|p| converged(p.norm_det, record.norm_det));
        records.push(record);
        if done {
            break;
        }
    }
    Ok(records)
}

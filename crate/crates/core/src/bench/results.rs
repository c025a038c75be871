use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::drift::{aggregate_drift, drift_stats, DriftReport, DEFAULT_DRIFT_IOU};
use super::dataset::Sequence;
use super::metrics::overlap_rate;
use super::runner::{EventKind, MemoryEvent, RunResult};
use crate::error::Result;
use crate::matcher::TrackerConfig;

pub const RESULTS_NAME: &str = "results.json";
pub const TRACE_NAME: &str = "trace.csv";

const SCOPE_NOTE: &str = "one-pass evaluation only; reset-based metrics (EAO, robustness) are not computed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub name: String,
    pub frames: usize,
    pub auc: f64,
    pub precision: f64,
    pub mean_iou: f64,
    pub overlap_rate: f64,
    pub final_det: f64,
    pub appended: usize,
    pub replaced: usize,
    pub rejected_bound: usize,
    pub rejected_no_gain: usize,
    pub reinits: usize,
    pub failures: usize,
    pub drift: DriftReport,
    pub events: Vec<MemoryEvent>,
}

impl SequenceSummary {
    pub fn new(result: &RunResult, seq: &Sequence) -> Result<Self> {
        let ious = result.ious();
        Ok(Self {
            name: result.sequence.clone(),
            frames: result.frames.len(),
            auc: result.auc()?,
            precision: result.precision()?,
            mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
            overlap_rate: overlap_rate(&ious, 0.5),
            final_det: result.final_memory.current_det(),
            appended: result.count(EventKind::Appended),
            replaced: result.count(EventKind::Replaced),
            rejected_bound: result.count(EventKind::RejectedBound),
            rejected_no_gain: result.count(EventKind::RejectedNoGain),
            reinits: result.count(EventKind::Reinit),
            failures: result.failures(),
            drift: drift_stats(result, seq, DEFAULT_DRIFT_IOU),
            events: result.events.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sequences: usize,
    pub mean_auc: f64,
    pub mean_precision: f64,
    pub mean_overlap_rate: f64,
    pub drift: DriftReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub label: String,
    pub config: TrackerConfig,
    pub seed: u64,
    pub sequences: Vec<SequenceSummary>,
    pub aggregate: Aggregate,
    pub note: String,
}

impl ResultsFile {
    /// Sequences are sorted by name so the file does not depend on the
    /// order runs finished in.
    pub fn new(label: &str, config: &TrackerConfig, seed: u64, mut sequences: Vec<SequenceSummary>) -> Self {
        sequences.sort_by(|a, b| a.name.cmp(&b.name));
        let n = sequences.len().max(1) as f64;
        let drifts: Vec<DriftReport> = sequences.iter().map(|s| s.drift).collect();
        let aggregate = Aggregate {
            sequences: sequences.len(),
            mean_auc: sequences.iter().map(|s| s.auc).sum::<f64>() / n,
            mean_precision: sequences.iter().map(|s| s.precision).sum::<f64>() / n,
            mean_overlap_rate: sequences.iter().map(|s| s.overlap_rate).sum::<f64>() / n,
            drift: aggregate_drift(&drifts),
        };
        Self {
            label: label.into(),
            config: config.clone(),
            seed,
            sequences,
            aggregate,
            note: SCOPE_NOTE.into(),
        }
    }
}

/// Flat per-frame trace of several runs, sorted by sequence name.
pub fn trace_csv(results: &[&RunResult]) -> String {
    let mut sorted: Vec<&&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.sequence.cmp(&b.sequence));
    let mut out = String::from("sequence,frame,x,y,w,h,iou,score,det,gamma,source\n");
    for r in sorted {
        for f in &r.frames {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.sequence,
                f.frame,
                f.bbox.x,
                f.bbox.y,
                f.bbox.w,
                f.bbox.h,
                f.iou,
                f.score,
                f.det,
                f.gamma,
                f.source.as_str()
            );
        }
    }
    out
}

/// Writes `results.json` and `trace.csv` into `out_dir`.
pub fn write_results(out_dir: &Path, results: &ResultsFile, runs: &[&RunResult]) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_string_pretty(results)?;
    json.push('\n');
    fs::write(out_dir.join(RESULTS_NAME), json)?;
    fs::write(out_dir.join(TRACE_NAME), trace_csv(runs))?;
    Ok(())
}

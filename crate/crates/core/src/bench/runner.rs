use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::Sequence;
use super::metrics::{precision_at, success_auc, PRECISION_THRESHOLD};
use crate::error::Result;
use crate::inference::{iou, step, BoundingBox, Source};
use crate::matcher::{track_init_with, Encoder, InitOptions, TrackerConfig};
use crate::memory::{Decision, LongTermMemory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Appended,
    Replaced,
    RejectedBound,
    RejectedNoGain,
    Reinit,
}

/// One memory event of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub frame: usize,
    pub kind: EventKind,
    /// Long-term slot written by an update.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    /// Candidate (or short-term seed) template.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u64>,
    /// Template evicted by a replacement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evicted_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture_box: Option<BoundingBox>,
}

/// Per-frame trace entry. IoU and center error are filled in after the
/// whole sequence has been tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub iou: f64,
    pub center_error: f64,
    pub score: f64,
    pub source: Source,
    pub det: f64,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A long-term slot at the start of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSlot {
    pub slot: usize,
    pub template_id: u64,
    pub frame: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub sequence: String,
    pub frames: Vec<FrameRecord>,
    pub events: Vec<MemoryEvent>,
    /// Wall-clock milliseconds per frame; not part of any results file.
    pub frame_ms: Vec<f64>,
    pub initial_slots: Vec<InitialSlot>,
    pub final_memory: LongTermMemory,
    pub crop_dir: Option<PathBuf>,
}

impl RunResult {
    pub fn ious(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.iou).collect()
    }

    pub fn center_errors(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.center_error).collect()
    }

    pub fn auc(&self) -> Result<f64> {
        success_auc(&self.ious())
    }

    pub fn precision(&self) -> Result<f64> {
        precision_at(&self.center_errors(), PRECISION_THRESHOLD)
    }

    pub fn det_trace(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.det).collect()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Appended plus Replaced events.
    pub fn lt_updates(&self) -> impl Iterator<Item = &MemoryEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Appended | EventKind::Replaced))
    }

    pub fn failures(&self) -> usize {
        self.frames.iter().filter(|f| f.error.is_some()).count()
    }

    /// Non-decreasing determinant trace with a strict increase at every
    /// replacement. Returns the frames that break either rule.
    pub fn det_violations(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        for w in self.frames.windows(2) {
            if w[1].det < w[0].det {
                bad.push(w[1].frame);
            }
        }
        for e in self.events.iter().filter(|e| e.kind == EventKind::Replaced) {
            let after = &self.frames[e.frame];
            if e.frame == 0 || !(after.det > self.frames[e.frame - 1].det) {
                bad.push(e.frame);
            }
        }
        bad.sort_unstable();
        bad.dedup();
        bad
    }

    /// Long-term template ids by slot after processing `frame`.
    pub fn slots_at(&self, frame: usize) -> Vec<u64> {
        let mut slots: Vec<u64> = self.initial_slots.iter().map(|s| s.template_id).collect();
        for e in self.events.iter().take_while(|e| e.frame <= frame) {
            match (e.kind, e.slot, e.template_id) {
                (EventKind::Appended, _, Some(id)) => slots.push(id),
                (EventKind::Replaced, Some(s), Some(id)) if s < slots.len() => slots[s] = id,
                _ => {}
            }
        }
        slots
    }
}

/// Extra inputs for [`run_ope_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub memory: Option<LongTermMemory>,
    pub crop_dir: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
}

/// One-pass evaluation with default options.
pub fn run_ope(seq: &Sequence, config: &TrackerConfig) -> Result<RunResult> {
    run_ope_with(seq, config, RunOptions::default())
}

/// Initializes on the first ground-truth box and tracks every later frame
/// without looking at the annotations again. Frames that fail keep the
/// previous box and are recorded with their error.
pub fn run_ope_with(seq: &Sequence, config: &TrackerConfig, options: RunOptions) -> Result<RunResult> {
    let encoder = config.make_encoder(options.features_dir.as_deref())?;
    let tracked = track(seq, config, &encoder, options)?;
    Ok(score(seq, tracked))
}

fn track(seq: &Sequence, config: &TrackerConfig, encoder: &Encoder, options: RunOptions) -> Result<RunResult> {
    let init_box = seq.groundtruth[0];
    let crop_dir = options.crop_dir.clone();
    let started = Instant::now();
    let frame0 = seq.load_frame(0)?;
    let mut state = track_init_with(
        &frame0,
        init_box,
        config.clone(),
        encoder,
        InitOptions {
            memory: options.memory,
            crop_dir: options.crop_dir,
        },
    )?;
    let initial_slots = state
        .ltm
        .slots()
        .iter()
        .enumerate()
        .map(|(slot, t)| InitialSlot {
            slot,
            template_id: t.id,
            frame: t.frame_index,
            crop_path: t.crop_path.clone(),
        })
        .collect();
    let mut frames = vec![FrameRecord {
        frame: 0,
        bbox: init_box,
        iou: 0.0,
        center_error: 0.0,
        score: 1.0,
        source: Source::Long,
        det: state.ltm.capacity_det(),
        gamma: if config.use_stm { state.stm.diversity() } else { 0.0 },
        error: None,
    }];
    let mut frame_ms = vec![started.elapsed().as_secs_f64() * 1e3];
    let mut events = Vec::new();
    drop(frame0);

    for index in 1..seq.len() {
        let started = Instant::now();
        let before: Vec<u64> = state.ltm.slots().iter().map(|t| t.id).collect();
        let outcome = seq
            .load_frame(index)
            .and_then(|frame| step(&mut state, &frame, encoder));
        match outcome {
            Ok(p) => {
                if p.stm_reinit {
                    events.push(MemoryEvent {
                        frame: index,
                        kind: EventKind::Reinit,
                        slot: None,
                        template_id: state.stm.templates().next().map(|t| t.id),
                        evicted_id: None,
                        capture_box: None,
                    });
                }
                if let Some(d) = p.decision {
                    let (kind, slot, evicted_id) = match d {
                        Decision::Appended => (EventKind::Appended, Some(before.len()), None),
                        Decision::Replaced(s) => (EventKind::Replaced, Some(s), before.get(s).copied()),
                        Decision::RejectedBound => (EventKind::RejectedBound, None, None),
                        Decision::RejectedNoGain => (EventKind::RejectedNoGain, None, None),
                    };
                    events.push(MemoryEvent {
                        frame: index,
                        kind,
                        slot,
                        template_id: p.candidate_id,
                        evicted_id,
                        capture_box: Some(p.bbox),
                    });
                }
                frames.push(FrameRecord {
                    frame: index,
                    bbox: p.bbox,
                    iou: 0.0,
                    center_error: 0.0,
                    score: p.score,
                    source: p.source,
                    det: p.det_after,
                    gamma: p.gamma_after,
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("{} frame {index}: {e}", seq.name);
                // The step may have advanced the frame counter before failing.
                state.frame_index = index;
                let prev = frames.last().expect("frame 0 recorded");
                frames.push(FrameRecord {
                    frame: index,
                    bbox: state.previous_box,
                    iou: 0.0,
                    center_error: 0.0,
                    score: 0.0,
                    source: prev.source,
                    det: state.ltm.capacity_det(),
                    gamma: prev.gamma,
                    error: Some(e.to_string()),
                });
            }
        }
        frame_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }

    Ok(RunResult {
        sequence: seq.name.clone(),
        frames,
        events,
        frame_ms,
        initial_slots,
        final_memory: state.ltm,
        crop_dir,
    })
}

/// Fills in overlap and center error against the annotations.
fn score(seq: &Sequence, mut result: RunResult) -> RunResult {
    for (rec, gt) in result.frames.iter_mut().zip(&seq.groundtruth) {
        rec.iou = iou(&rec.bbox, gt);
        rec.center_error = rec.bbox.center_distance(gt);
    }
    result
}

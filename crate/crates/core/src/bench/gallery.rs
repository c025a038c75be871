use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::RunResult;
use crate::error::{Error, Result};
use crate::matcher::crop_file_name;

/// First, middle and last frame of a run.
pub fn default_checkpoints(frames: usize) -> Vec<usize> {
    let last = frames.saturating_sub(1);
    let mut c = vec![0, last / 2, last];
    c.dedup();
    c
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GalleryReport {
    pub written: usize,
    pub missing: usize,
}

/// Copies the crop of every long-term slot, as it stood after each
/// checkpoint frame, to `out_dir/slot_XX/frame_XXXXX.png`. Missing crops
/// are logged and skipped.
pub fn dump_template_gallery(result: &RunResult, out_dir: &Path, checkpoints: &[usize]) -> Result<GalleryReport> {
    let crop_dir = result.crop_dir.as_deref().ok_or_else(|| {
        Error::Parameter("the run did not record template crops".into())
    })?;
    let mut report = GalleryReport::default();
    for &frame in checkpoints {
        if frame >= result.frames.len() {
            return Err(Error::Index {
                index: frame,
                len: result.frames.len(),
            });
        }
        for (slot, id) in result.slots_at(frame).into_iter().enumerate() {
            let src = crop_dir.join(crop_file_name(id));
            let dir = out_dir.join(format!("slot_{slot:02}"));
            fs::create_dir_all(&dir)?;
            if src.is_file() {
                fs::copy(&src, dir.join(format!("frame_{frame:05}.png")))?;
                report.written += 1;
            } else {
                log::warn!("missing crop {} for slot {slot} at frame {frame}", src.display());
                report.missing += 1;
            }
        }
    }
    Ok(report)
}

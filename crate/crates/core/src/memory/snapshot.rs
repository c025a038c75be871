//! On-disk memory snapshots: one `FTS1` file per slot plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::BoundingBox;
use crate::space::{read_feature_file, write_feature_file};

use super::{LongTermMemory, Template};

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT_TAG: &str = "ltm-snapshot-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSlot {
    pub slot: usize,
    pub id: u64,
    pub frame_index: usize,
    pub capture_box: BoundingBox,
    pub feature_file: String,
    pub crop_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format: String,
    pub capacity: usize,
    pub normalized_det: f64,
    pub slots: Vec<SnapshotSlot>,
}

pub fn save_snapshot(mem: &LongTermMemory, dir: impl AsRef<Path>) -> Result<SnapshotManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut slots = Vec::with_capacity(mem.len());
    for (i, t) in mem.slots().iter().enumerate() {
        let name = format!("slot_{i:02}.fts");
        write_feature_file(&t.feature, dir.join(&name))?;
        slots.push(SnapshotSlot {
            slot: i,
            id: t.id,
            frame_index: t.frame_index,
            capture_box: t.capture_box,
            feature_file: name,
            crop_path: t.crop_path.clone(),
        });
    }
    let manifest = SnapshotManifest {
        format: FORMAT_TAG.to_string(),
        capacity: mem.capacity(),
        normalized_det: mem.current_det(),
        slots,
    };
    fs::write(
        dir.join(MANIFEST_NAME),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_snapshot(dir: impl AsRef<Path>) -> Result<LongTermMemory> {
    let dir = dir.as_ref();
    let manifest: SnapshotManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "unknown snapshot format `{}`",
            manifest.format
        )));
    }
    let mut slots = Vec::with_capacity(manifest.slots.len());
    for (i, s) in manifest.slots.iter().enumerate() {
        if s.slot != i {
            return Err(Error::Format(format!("slot {} listed at position {i}", s.slot)));
        }
        let feature = read_feature_file(dir.join(&s.feature_file))?;
        slots.push(Template {
            id: s.id,
            frame_index: s.frame_index,
            feature,
            capture_box: s.capture_box,
            crop_path: s.crop_path.clone(),
        });
    }
    let mem = LongTermMemory::from_slots(slots, manifest.capacity)?;
    if (mem.current_det() - manifest.normalized_det).abs() > 1e-9 {
        return Err(Error::Format(format!(
            "stored determinant {} disagrees with recomputed {}",
            manifest.normalized_det,
            mem.current_det()
        )));
    }
    Ok(mem)
}

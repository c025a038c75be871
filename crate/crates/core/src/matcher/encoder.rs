use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::crop::{crop_and_resize, crop_region, Patch};
use super::Frame;
use crate::error::{Error, Result};
use crate::inference::BoundingBox;
use crate::space::{read_feature_file, FeatureTensor};

/// Name of the metadata file inside a precomputed feature directory.
pub const FEATURE_META_NAME: &str = "meta.json";

/// Grayscale, zero-mean correlation features pooled over `stride`² pixel
/// cells. With unit normalization downstream, matching becomes normalized
/// cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NccEncoder {
    pub stride: usize,
}

impl NccEncoder {
    pub fn new(stride: usize) -> Result<Self> {
        if stride < 1 {
            return Err(Error::Parameter("encoder stride must be at least 1".into()));
        }
        Ok(Self { stride })
    }

    pub fn encode(&self, patch: &Patch) -> Result<FeatureTensor> {
        let s = self.stride;
        let (h, w) = (patch.height / s, patch.width / s);
        if h == 0 || w == 0 {
            return Err(Error::Parameter(format!(
                "{}x{} patch is smaller than one {s}px cell",
                patch.width, patch.height
            )));
        }
        let luma = patch.luma();
        let mut cells = vec![0.0; h * w];
        for (cy, row) in cells.chunks_exact_mut(w).enumerate() {
            for (cx, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for y in cy * s..(cy + 1) * s {
                    let line = &luma[y * patch.width..];
                    acc += line[cx * s..(cx + 1) * s].iter().sum::<f64>();
                }
                *cell = acc / (s * s) as f64;
            }
        }
        let mean = cells.iter().sum::<f64>() / cells.len() as f64;
        cells.iter_mut().for_each(|v| *v -= mean);
        // Rounding leaves tiny residuals on flat patches; snap them to zero so
        // normalization reports the patch as degenerate.
        if cells.iter().all(|v| v.abs() <= 1e-9 * (1.0 + mean.abs())) {
            cells.iter_mut().for_each(|v| *v = 0.0);
        }
        FeatureTensor::new(1, h, w, cells)
    }
}

/// Per-pixel NCC features: [`NccEncoder`] with stride 1.
pub fn encode_ncc(patch: &Patch) -> Result<FeatureTensor> {
    NccEncoder { stride: 1 }.encode(patch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub stride: usize,
    pub channels: usize,
    pub frame_count: usize,
}

/// Reads full-frame feature maps exported offline, one `%06d.fts` file per
/// frame, and crops them in feature space.
#[derive(Debug)]
pub struct PrecomputedEncoder {
    dir: PathBuf,
    meta: FeatureMeta,
    cache: Mutex<Option<(usize, Arc<FeatureTensor>)>>,
}

impl PrecomputedEncoder {
    /// Opens `dir` and checks its declared stride against `expected_stride`.
    pub fn open(dir: impl AsRef<Path>, expected_stride: Option<usize>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta_path = dir.join(FEATURE_META_NAME);
        let text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::ingestion(&meta_path, e.to_string()))?;
        let meta: FeatureMeta = serde_json::from_str(&text)
            .map_err(|e| Error::ingestion(&meta_path, e.to_string()))?;
        if meta.stride < 1 || meta.channels < 1 {
            return Err(Error::Config(format!(
                "{}: stride and channels must be positive",
                meta_path.display()
            )));
        }
        if let Some(s) = expected_stride {
            if s != meta.stride {
                return Err(Error::Config(format!(
                    "feature stride {} in {} does not match configured stride {s}",
                    meta.stride,
                    meta_path.display()
                )));
            }
        }
        Ok(Self {
            dir,
            meta,
            cache: Mutex::new(None),
        })
    }

    pub fn meta(&self) -> &FeatureMeta {
        &self.meta
    }

    pub fn frame_path(&self, frame_index: usize) -> PathBuf {
        self.dir.join(format!("{frame_index:06}.fts"))
    }

    /// Full feature map of one frame.
    pub fn frame_features(&self, frame_index: usize) -> Result<Arc<FeatureTensor>> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((i, f)) = cache.as_ref() {
            if *i == frame_index {
                return Ok(Arc::clone(f));
            }
        }
        let path = self.frame_path(frame_index);
        if !path.is_file() {
            return Err(Error::ingestion(&path, "feature file not found"));
        }
        let f = read_feature_file(&path).map_err(|e| Error::ingestion(&path, e.to_string()))?;
        if f.channels() != self.meta.channels {
            return Err(Error::Config(format!(
                "{} has {} channels, meta.json declares {}",
                path.display(),
                f.channels(),
                self.meta.channels
            )));
        }
        let f = Arc::new(f);
        *cache = Some((frame_index, Arc::clone(&f)));
        Ok(f)
    }

    /// Cells covered by a pixel region: every coordinate divided by the
    /// stride and rounded, at least one cell wide. Cells outside the map
    /// replicate the nearest edge.
    pub fn encode_precomputed(&self, frame_index: usize, region: &BoundingBox) -> Result<FeatureTensor> {
        let full = self.frame_features(frame_index)?;
        let s = self.meta.stride as f64;
        let x0 = (region.x / s).round() as i64;
        let y0 = (region.y / s).round() as i64;
        let w = ((region.w / s).round() as usize).max(1);
        let h = ((region.h / s).round() as usize).max(1);
        let (c, fh, fw) = full.shape();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let sy = (y0 + y as i64).clamp(0, fh as i64 - 1) as usize;
                for x in 0..w {
                    let sx = (x0 + x as i64).clamp(0, fw as i64 - 1) as usize;
                    data.push(full.at(ch, sy, sx));
                }
            }
        }
        FeatureTensor::new(c, h, w, data)
    }

    /// Bilinear resampling of the padded square around `bbox` onto an
    /// `cells`² grid, mirroring [`crop_and_resize`] in feature space.
    pub fn sample(
        &self,
        frame_index: usize,
        bbox: &BoundingBox,
        pad_factor: f64,
        cells: usize,
    ) -> Result<FeatureTensor> {
        if cells == 0 {
            return Err(Error::Parameter("output size must be at least 1".into()));
        }
        let region = crop_region(bbox, pad_factor)?;
        let full = self.frame_features(frame_index)?;
        let (c, fh, fw) = full.shape();
        let s = self.meta.stride as f64;
        let step = region.w / cells as f64;
        let coords = |origin: f64, limit: usize| -> Vec<(usize, usize, f64)> {
            (0..cells)
                .map(|u| {
                    let f = (origin + (u as f64 + 0.5) * step) / s - 0.5;
                    let base = f.floor();
                    let t = f - base;
                    let clamp = |v: f64| v.clamp(0.0, limit as f64 - 1.0) as usize;
                    (clamp(base), clamp(base + 1.0), t)
                })
                .collect()
        };
        let xs = coords(region.x, fw);
        let ys = coords(region.y, fh);
        let mut data = Vec::with_capacity(c * cells * cells);
        for ch in 0..c {
            for &(y0, y1, ty) in &ys {
                for &(x0, x1, tx) in &xs {
                    let top = full.at(ch, y0, x0) * (1.0 - tx) + full.at(ch, y0, x1) * tx;
                    let bottom = full.at(ch, y1, x0) * (1.0 - tx) + full.at(ch, y1, x1) * tx;
                    data.push(top * (1.0 - ty) + bottom * ty);
                }
            }
        }
        FeatureTensor::new(c, cells, cells, data)
    }
}

#[derive(Debug)]
pub enum Encoder {
    Ncc(NccEncoder),
    Precomputed(PrecomputedEncoder),
}

impl Encoder {
    pub fn stride(&self) -> usize {
        match self {
            Encoder::Ncc(e) => e.stride,
            Encoder::Precomputed(e) => e.meta.stride,
        }
    }

    /// Features of the padded square around `bbox`, resampled so that it
    /// spans `out_px` pixels (`out_px / stride` cells).
    pub fn encode_region(
        &self,
        frame: &Frame,
        bbox: &BoundingBox,
        pad_factor: f64,
        out_px: usize,
    ) -> Result<FeatureTensor> {
        match self {
            Encoder::Ncc(e) => e.encode(&crop_and_resize(&frame.image, bbox, pad_factor, out_px)?),
            Encoder::Precomputed(e) => {
                let cells = out_px / e.meta.stride;
                e.sample(frame.index, bbox, pad_factor, cells)
            }
        }
    }
}

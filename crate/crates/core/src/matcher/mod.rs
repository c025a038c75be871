//! The template-matching tracker the memory plugs into: encoders, crop
//! geometry, multi-scale search and peak-to-box mapping.

mod crop;
mod encoder;

pub use crop::{crop_and_resize, crop_region, Patch};
pub use encoder::{
    encode_ncc, Encoder, FeatureMeta, NccEncoder, PrecomputedEncoder, FEATURE_META_NAME,
};

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::BoundingBox;
use crate::memory::{
    Decision, GammaVariant, LongTermMemory, LowerBoundConfig, ShortTermMemory, Template,
    DEFAULT_GAIN_EPSILON,
};
use crate::space::{
    apply_mask, l2_normalize, tapered_cosine_window, tukey_1d, ActivationMap, FeatureTensor, Mask,
};

/// Smallest side a tracked box is allowed to shrink to, in pixels.
pub const MIN_BOX_SIDE: f64 = 4.0;

/// File name of the saved crop of template `id`.
pub fn crop_file_name(id: u64) -> String {
    format!("t{id:06}.png")
}

/// One decoded video frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(index: usize, image: RgbImage) -> Self {
        Self { index, image }
    }

    pub fn load(index: usize, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let image = image::open(path)
            .map_err(|e| Error::ingestion(path, e.to_string()))?
            .to_rgb8();
        Ok(Self { index, image })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Ncc,
    Precomputed,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc" => Ok(EncoderKind::Ncc),
            "precomputed" => Ok(EncoderKind::Precomputed),
            other => Err(Error::Parameter(format!("unknown encoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub output_channels: usize,
    /// Template side in pixels.
    pub template_size: usize,
    /// Search region side in pixels.
    pub search_size: usize,
    /// Pixels per feature cell.
    pub stride: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Ncc,
            output_channels: 1,
            template_size: 64,
            search_size: 160,
            stride: 4,
        }
    }
}

impl EncoderSpec {
    pub fn template_cells(&self) -> usize {
        self.template_size / self.stride
    }

    pub fn search_cells(&self) -> usize {
        self.search_size / self.stride
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Search side over template side.
    pub context_factor: f64,
    pub scales: Vec<f64>,
    pub scale_penalty: f64,
    pub window_influence: f64,
    /// Template side over the larger box side.
    pub template_pad: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            context_factor: 2.5,
            scales: vec![0.96, 1.0, 1.04],
            scale_penalty: 0.97,
            window_influence: 0.2,
            template_pad: 1.0,
        }
    }
}

/// Every hyperparameter of a tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub k_lt: usize,
    pub k_st: usize,
    pub bound: LowerBoundConfig,
    /// `false` skips the lower bound entirely.
    pub use_bound: bool,
    pub th_iou: f64,
    /// Taper fraction of the template mask.
    pub alpha: f64,
    pub dilation: usize,
    /// Unit-normalize templates and score windows by their masked energy.
    pub normalize_features: bool,
    pub gamma_variant: GammaVariant,
    pub gain_epsilon: f64,
    pub modulation: bool,
    pub masking: bool,
    pub use_stm: bool,
    pub encoder: EncoderSpec,
    pub search: SearchConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            k_lt: 8,
            k_st: 4,
            bound: LowerBoundConfig::default(),
            use_bound: true,
            th_iou: 0.4,
            alpha: 0.25,
            dilation: 10,
            normalize_features: true,
            gamma_variant: GammaVariant::default(),
            gain_epsilon: DEFAULT_GAIN_EPSILON,
            modulation: true,
            masking: true,
            use_stm: true,
            encoder: EncoderSpec::default(),
            search: SearchConfig::default(),
        }
    }
}

impl TrackerConfig {
    /// Plain single-template matcher: one long-term slot that never changes,
    /// no short-term memory, no modulation, no mask.
    pub fn baseline() -> Self {
        Self {
            k_lt: 1,
            modulation: false,
            masking: false,
            use_stm: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let e = &self.encoder;
        let s = &self.search;
        if self.k_lt < 1 || self.k_st < 1 {
            return bad("memory capacities must be at least 1".into());
        }
        if self.dilation < 1 {
            return bad("dilation must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.th_iou) {
            return bad(format!("th_iou {} outside [0, 1]", self.th_iou));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.bound.ell > 0.0 && self.bound.ell.is_finite()) {
            return bad(format!("ell {} must be positive", self.bound.ell));
        }
        if !(self.gain_epsilon >= 0.0) {
            return bad("gain epsilon must be non-negative".into());
        }
        if e.stride < 1 {
            return bad("stride must be at least 1".into());
        }
        if e.template_size < 16 || e.template_size >= e.search_size {
            return bad(format!(
                "need 16 <= template_size < search_size, got {} and {}",
                e.template_size, e.search_size
            ));
        }
        if !e.template_size.is_multiple_of(e.stride) || !e.search_size.is_multiple_of(e.stride) {
            return bad(format!("template and search sizes must be multiples of stride {}", e.stride));
        }
        if !(s.context_factor > 1.0) {
            return bad("context_factor must exceed 1".into());
        }
        let ratio = e.search_size as f64 / e.template_size as f64;
        if (ratio - s.context_factor).abs() > 1e-9 {
            return bad(format!(
                "search_size / template_size = {ratio} must equal context_factor {}",
                s.context_factor
            ));
        }
        if s.scales.is_empty()
            || !s.scales.contains(&1.0)
            || s.scales.iter().any(|&v| !(v > 0.0))
            || s.scales.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!("scales {:?} must be positive, ascending and contain 1.0", s.scales));
        }
        if !(s.scale_penalty > 0.0 && s.scale_penalty <= 1.0) {
            return bad(format!("scale_penalty {} outside (0, 1]", s.scale_penalty));
        }
        if !(0.0..=1.0).contains(&s.window_influence) {
            return bad(format!("window_influence {} outside [0, 1]", s.window_influence));
        }
        if !(s.template_pad >= 1.0) {
            return bad("template_pad must be at least 1".into());
        }
        Ok(())
    }

    pub fn make_encoder(&self, features_dir: Option<&Path>) -> Result<Encoder> {
        match self.encoder.kind {
            EncoderKind::Ncc => Ok(Encoder::Ncc(NccEncoder::new(self.encoder.stride)?)),
            EncoderKind::Precomputed => {
                let dir = features_dir.ok_or_else(|| {
                    Error::Config("the precomputed encoder needs a features directory".into())
                })?;
                Ok(Encoder::Precomputed(PrecomputedEncoder::open(dir, Some(self.encoder.stride))?))
            }
        }
    }
}

/// Maps activation-map cells back to image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGeometry {
    /// Center of the search region (the previous box center).
    pub center: (f64, f64),
    pub previous_size: (f64, f64),
    pub scales: Vec<f64>,
    /// Image pixels per map cell at scale 1.
    pub cell_px: f64,
    pub window_influence: f64,
    pub scale_penalty: f64,
}

impl SearchGeometry {
    pub fn scale_of(&self, scale_index: usize) -> Result<f64> {
        self.scales.get(scale_index).copied().ok_or(Error::Index {
            index: scale_index,
            len: self.scales.len(),
        })
    }

    /// Scores blended with a centered Hann window, then multiplied by the
    /// scale penalty when `scale` is not 1.
    pub fn penalized(&self, map: &ActivationMap, scale: f64) -> Vec<f64> {
        let (h, w) = map.dims();
        let rows = tukey_1d(h, 1.0).expect("map has rows");
        let cols = tukey_1d(w, 1.0).expect("map has columns");
        let wi = self.window_influence;
        let penalty = if scale == 1.0 { 1.0 } else { self.scale_penalty };
        map.scores()
            .iter()
            .enumerate()
            .map(|(i, s)| ((1.0 - wi) * s + wi * rows[i / w] * cols[i % w]) * penalty)
            .collect()
    }

    /// Box centered on the preimage of cell `(row, col)` of an `h × w` map,
    /// sized like the previous box times `scale`.
    pub fn box_at(&self, scale: f64, row: usize, col: usize, h: usize, w: usize) -> Result<BoundingBox> {
        let dy = row as f64 - (h as f64 - 1.0) / 2.0;
        let dx = col as f64 - (w as f64 - 1.0) / 2.0;
        let step = self.cell_px * scale;
        BoundingBox::from_center(
            self.center.0 + dx * step,
            self.center.1 + dy * step,
            self.previous_size.0 * scale,
            self.previous_size.1 * scale,
        )
    }
}

/// Box of the penalized argmax of a single map searched at `scale`, with
/// its penalized score.
pub fn locate_peak(map: &ActivationMap, scale: f64, geometry: &SearchGeometry) -> Result<(BoundingBox, f64)> {
    let penalized = geometry.penalized(map, scale);
    let (cell, value) = penalized
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let (h, w) = map.dims();
    Ok((geometry.box_at(scale, cell / w, cell % w, h, w)?, value))
}

/// Extra inputs for [`track_init_with`].
#[derive(Debug, Clone, Default)]
pub struct InitOptions {
    /// Start from a previously saved long-term memory instead of an empty one.
    pub memory: Option<LongTermMemory>,
    /// Save an image crop of every template that enters the long-term memory.
    pub crop_dir: Option<PathBuf>,
}

/// Everything one tracking loop mutates.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub previous_box: BoundingBox,
    pub ltm: LongTermMemory,
    pub stm: ShortTermMemory,
    pub frame_index: usize,
    pub config: TrackerConfig,
    mask: Mask,
    next_id: u64,
    image_size: (u32, u32),
    crop_dir: Option<PathBuf>,
}

impl TrackState {
    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn crop_dir(&self) -> Option<&Path> {
        self.crop_dir.as_deref()
    }

    /// Correlation kernels for stored features plus, when scores are
    /// normalized, the kernel that measures masked window energy.
    pub fn matching_kernels<'a>(
        &self,
        features: impl Iterator<Item = &'a FeatureTensor>,
    ) -> Result<(Vec<FeatureTensor>, Option<FeatureTensor>)> {
        let mut kernels = Vec::new();
        for f in features {
            kernels.push(if self.config.masking { apply_mask(f, &self.mask)? } else { f.clone() });
        }
        if !self.config.normalize_features {
            return Ok((kernels, None));
        }
        let channels = kernels.first().map_or(1, FeatureTensor::channels);
        let plane: Vec<f64> = self.mask.values().iter().map(|m| m * m).collect();
        let energy = FeatureTensor::new(
            channels,
            self.mask.height(),
            self.mask.width(),
            plane.repeat(channels),
        )?;
        Ok((kernels, Some(energy)))
    }

    /// Keeps the box size within `[MIN_BOX_SIDE, image side]` and its
    /// center inside the image.
    pub fn clamp_box(&self, b: BoundingBox) -> BoundingBox {
        let (iw, ih) = (self.image_size.0 as f64, self.image_size.1 as f64);
        let w = b.w.clamp(MIN_BOX_SIDE.min(iw), iw.max(MIN_BOX_SIDE));
        let h = b.h.clamp(MIN_BOX_SIDE.min(ih), ih.max(MIN_BOX_SIDE));
        let (cx, cy) = b.center();
        BoundingBox {
            x: cx.clamp(0.0, iw) - w / 2.0,
            y: cy.clamp(0.0, ih) - h / 2.0,
            w,
            h,
        }
    }

    pub fn crop_path_for(&self, id: u64) -> Option<PathBuf> {
        self.crop_dir.as_ref().map(|d| d.join(crop_file_name(id)))
    }

    /// Saves the crop behind a long-term update and links it to its slot.
    pub fn record_crop(&mut self, frame: &Frame, bbox: &BoundingBox, decision: &Decision) -> Result<()> {
        let slot = match decision {
            Decision::Appended => self.ltm.len() - 1,
            Decision::Replaced(s) => *s,
            _ => return Ok(()),
        };
        let id = self.ltm.slots()[slot].id;
        if let Some(path) = self.crop_path_for(id) {
            self.save_crop(frame, bbox, &path)?;
            self.ltm.set_crop_path(slot, path)?;
        }
        Ok(())
    }

    fn save_crop(&self, frame: &Frame, bbox: &BoundingBox, path: &Path) -> Result<()> {
        let patch = crop_and_resize(
            &frame.image,
            bbox,
            self.config.search.template_pad,
            self.config.encoder.template_size,
        )?;
        patch.to_image().save(path)?;
        Ok(())
    }
}

/// Encodes, masks and normalizes the crop at `bbox` into a fresh template.
pub fn make_template(
    state: &mut TrackState,
    encoder: &Encoder,
    frame: &Frame,
    bbox: &BoundingBox,
) -> Result<Template> {
    let feature = build_feature(&state.config, &state.mask, encoder, frame, bbox)?;
    let id = state.next_id;
    state.next_id += 1;
    Ok(Template::new(id, state.frame_index, feature, *bbox))
}

fn build_feature(
    cfg: &TrackerConfig,
    mask: &Mask,
    encoder: &Encoder,
    frame: &Frame,
    bbox: &BoundingBox,
) -> Result<FeatureTensor> {
    let raw = encoder.encode_region(frame, bbox, cfg.search.template_pad, cfg.encoder.template_size)?;
    let masked = if cfg.masking { apply_mask(&raw, mask)? } else { raw };
    if cfg.normalize_features {
        l2_normalize(&masked)
    } else if masked.norm() <= f64::MIN_POSITIVE {
        Err(Error::Degenerate("template feature is zero".into()))
    } else {
        Ok(masked)
    }
}

/// Builds the base template from the first frame and seeds both memories
/// with it.
pub fn track_init(frame: &Frame, bbox: BoundingBox, config: TrackerConfig, encoder: &Encoder) -> Result<TrackState> {
    track_init_with(frame, bbox, config, encoder, InitOptions::default())
}

pub fn track_init_with(
    frame: &Frame,
    bbox: BoundingBox,
    config: TrackerConfig,
    encoder: &Encoder,
    options: InitOptions,
) -> Result<TrackState> {
    config.validate()?;
    BoundingBox::new(bbox.x, bbox.y, bbox.w, bbox.h)?;
    if encoder.stride() != config.encoder.stride {
        return Err(Error::Config(format!(
            "encoder stride {} differs from configured stride {}",
            encoder.stride(),
            config.encoder.stride
        )));
    }
    let (iw, ih) = frame.image.dimensions();
    let (w, h) = (iw as f64, ih as f64);
    if bbox.x >= w || bbox.y >= h || bbox.x + bbox.w <= 0.0 || bbox.y + bbox.h <= 0.0 {
        return Err(Error::Parameter(format!("init box {bbox:?} does not intersect the {iw}x{ih} image")));
    }
    let cells = config.encoder.template_cells();
    let mask = if config.masking {
        tapered_cosine_window(cells, cells, config.alpha)?
    } else {
        Mask::ones(cells, cells)?
    };
    if let Some(dir) = &options.crop_dir {
        std::fs::create_dir_all(dir)?;
    }
    let base_feature = build_feature(&config, &mask, encoder, frame, &bbox)?;
    let fresh = options.memory.is_none();
    let ltm = match options.memory {
        Some(mem) => {
            if !mem.base().feature.same_shape(&base_feature) {
                return Err(Error::Dimension(
                    "loaded memory does not match the encoder's template shape".into(),
                ));
            }
            if mem.capacity() != config.k_lt {
                return Err(Error::Config(format!(
                    "loaded memory has capacity {}, configured k_lt is {}",
                    mem.capacity(),
                    config.k_lt
                )));
            }
            mem
        }
        None => LongTermMemory::new(Template::new(0, 0, base_feature, bbox), config.k_lt)?,
    };
    let ltm = ltm.with_gain_epsilon(config.gain_epsilon);
    let next_id = ltm.slots().iter().map(|t| t.id).max().unwrap_or(0) + 1;
    let mut stm = ShortTermMemory::new(config.k_st, config.gamma_variant)?;
    stm.push(ltm.base().clone())?;

    let mut state = TrackState {
        previous_box: bbox,
        ltm,
        stm,
        frame_index: 0,
        config,
        mask,
        next_id,
        image_size: (iw, ih),
        crop_dir: options.crop_dir,
    };
    if fresh {
        if let Some(path) = state.crop_path_for(0) {
            state.save_crop(frame, &bbox, &path)?;
            state.ltm.set_crop_path(0, path)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests;

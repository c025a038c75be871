//! Turning per-template activation maps into one box per frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{make_template, Encoder, Frame, SearchGeometry, TrackState};
use crate::memory::{should_consider, Decision};
use crate::space::{batch_cross_correlate, cross_correlate, ActivationMap, FeatureTensor};

/// Axis-aligned box: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter(format!(
                "invalid box ({x}, {y}, {w}, {h})"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "ST")]
    Short,
    #[serde(rename = "LT")]
    Long,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Short => "ST",
            Source::Long => "LT",
        }
    }
}

/// Per-frame trace record of one tracking step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub score: f64,
    pub source: Source,
    pub stm_reinit: bool,
    /// Capacity-order normalized Gram determinant of the long-term memory.
    pub det_after: f64,
    pub gamma_after: f64,
    pub decision: Option<Decision>,
    pub candidate_id: Option<u64>,
}

/// Reweights every map by the peak-weighted average of all maps, then
/// rescales each one back to its own peak. Inputs must be non-negative.
pub fn modulate(maps: &[ActivationMap]) -> Result<Vec<ActivationMap>> {
    let Some(first) = maps.first() else {
        return Err(Error::Parameter("modulation needs at least one map".into()));
    };
    if maps.iter().any(|m| m.dims() != first.dims()) {
        return Err(Error::Dimension("activation maps differ in size".into()));
    }
    if maps.iter().any(|m| m.min() < 0.0) {
        return Err(Error::Parameter("modulation expects non-negative scores".into()));
    }
    let weights: Vec<f64> = maps.iter().map(|m| m.peak().score).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Ok(maps.to_vec());
    }
    let cells = first.scores().len();
    let mut avg = vec![0.0; cells];
    for (m, w) in maps.iter().zip(&weights) {
        for (a, s) in avg.iter_mut().zip(m.scores()) {
            *a += w * s;
        }
    }
    avg.iter_mut().for_each(|a| *a /= total);

    Ok(maps
        .iter()
        .map(|m| {
            let target = m.peak().score;
            let product = m.map_scores(|i, s| s * avg[i]);
            let p = product.peak();
            if !(p.score > 0.0) {
                return m.clone();
            }
            let ratio = target / p.score;
            let argmax = p.row * m.width() + p.col;
            product.map_scores(|i, s| if i == argmax { target } else { (s * ratio).min(target) })
        })
        .collect())
}

/// [`modulate`] for maps of arbitrary sign: each map is shifted to a zero
/// minimum first and shifted back afterwards.
pub fn modulate_shifted(maps: &[ActivationMap]) -> Result<Vec<ActivationMap>> {
    let mins: Vec<f64> = maps.iter().map(|m| m.min()).collect();
    let shifted: Vec<ActivationMap> = maps
        .iter()
        .zip(&mins)
        .map(|(m, &lo)| m.map_scores(|_, s| s - lo))
        .collect();
    Ok(modulate(&shifted)?
        .into_iter()
        .zip(&mins)
        .map(|(m, &lo)| m.map_scores(|_, s| s + lo))
        .collect())
}

/// Global peak over all maps after the geometry's penalties. Ties go to the
/// lowest template id, then the lowest scale index, then the first cell.
pub fn best_prediction(
    maps: &[ActivationMap],
    geometry: &SearchGeometry,
) -> Result<(BoundingBox, f64)> {
    if maps.is_empty() {
        return Err(Error::Parameter("no activation maps to choose from".into()));
    }
    let mut best: Option<(f64, &ActivationMap, usize)> = None;
    for m in maps {
        let penalized = geometry.penalized(m, geometry.scale_of(m.scale_index)?);
        let (cell, value) = penalized
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let better = match best {
            None => true,
            Some((bv, bm, _)) => {
                value > bv
                    || (value == bv
                        && (m.template_id, m.scale_index) < (bm.template_id, bm.scale_index))
            }
        };
        if better {
            best = Some((value, m, cell));
        }
    }
    let (_, m, cell) = best.expect("maps is non-empty");
    let (row, col) = (cell / m.width(), cell % m.width());
    let scale = geometry.scale_of(m.scale_index)?;
    let bbox = geometry.box_at(scale, row, col, m.height(), m.width())?;
    Ok((bbox, m.at(row, col)))
}

/// Keeps the short-term prediction while it overlaps the long-term one by at
/// least `th_iou`; otherwise defers to the long-term prediction and asks for
/// a short-term reset.
pub fn st_lt_switch(
    st: (BoundingBox, f64),
    lt: (BoundingBox, f64),
    th_iou: f64,
) -> (Source, bool) {
    if iou(&st.0, &lt.0) >= th_iou {
        (Source::Short, false)
    } else {
        (Source::Long, true)
    }
}

/// Cosine similarity between each kernel and every search window of the same
/// size, with both sides weighted by `mask_sq`'s square root.
fn windowed_scores(
    kernels: &[FeatureTensor],
    energy_kernel: &FeatureTensor,
    search: &FeatureTensor,
) -> Result<Vec<ActivationMap>> {
    let maps = batch_cross_correlate(kernels, search)?;
    let squared = FeatureTensor::new(
        search.channels(),
        search.height(),
        search.width(),
        search.data().iter().map(|v| v * v).collect(),
    )?;
    let energy = cross_correlate(energy_kernel, &squared)?;
    let floor = 1e-12;
    Ok(maps
        .into_iter()
        .map(|m| {
            m.map_scores(|i, s| {
                let e = energy.scores()[i];
                if e > floor {
                    s / e.sqrt()
                } else {
                    0.0
                }
            })
        })
        .collect())
}

/// One tracking step: match every stored template around the previous box,
/// pick a box, and feed the result back to both memories.
pub fn step(state: &mut TrackState, frame: &Frame, encoder: &Encoder) -> Result<FramePrediction> {
    state.frame_index += 1;
    let cfg = state.config.clone();
    let prev = state.previous_box;
    let (cx, cy) = prev.center();
    let template_side = cfg.search.template_pad * prev.w.max(prev.h);
    let search_side = cfg.search.context_factor * template_side;

    let st_templates: Vec<_> = if cfg.use_stm {
        state.stm.templates().cloned().collect()
    } else {
        Vec::new()
    };
    let lt_templates: Vec<_> = state.ltm.slots().to_vec();
    let all: Vec<_> = st_templates.iter().chain(lt_templates.iter()).collect();

    let (kernels, energy_kernel) = state.matching_kernels(all.iter().map(|t| &t.feature))?;

    let mut st_maps = Vec::new();
    let mut lt_maps = Vec::new();
    for (si, &scale) in cfg.search.scales.iter().enumerate() {
        let region = BoundingBox::from_center(cx, cy, search_side * scale, search_side * scale)?;
        let search = encoder.encode_region(frame, &region, 1.0, cfg.encoder.search_size)?;
        let maps = match &energy_kernel {
            Some(ek) => windowed_scores(&kernels, ek, &search)?,
            None => batch_cross_correlate(&kernels, &search)?,
        };
        let mut maps = maps
            .into_iter()
            .zip(&all)
            .map(|(m, t)| m.with_ids(t.id, si));
        st_maps.push(maps.by_ref().take(st_templates.len()).collect::<Vec<_>>());
        lt_maps.push(maps.collect::<Vec<_>>());
    }

    let flatten = |sets: Vec<Vec<ActivationMap>>| -> Result<Vec<ActivationMap>> {
        let mut out = Vec::new();
        for set in sets {
            if set.is_empty() {
                continue;
            }
            if cfg.modulation {
                out.extend(modulate_shifted(&set)?);
            } else {
                out.extend(set);
            }
        }
        Ok(out)
    };
    let st_maps = flatten(st_maps)?;
    let lt_maps = flatten(lt_maps)?;

    let geometry = SearchGeometry {
        center: (cx, cy),
        previous_size: (prev.w, prev.h),
        scales: cfg.search.scales.clone(),
        cell_px: encoder.stride() as f64 * search_side / cfg.encoder.search_size as f64,
        window_influence: cfg.search.window_influence,
        scale_penalty: cfg.search.scale_penalty,
    };
    let lt = best_prediction(&lt_maps, &geometry)?;
    let (source, reinit, chosen) = if st_maps.is_empty() {
        (Source::Long, false, lt)
    } else {
        let st = best_prediction(&st_maps, &geometry)?;
        let (source, reinit) = st_lt_switch(st, lt, cfg.th_iou);
        (source, reinit, if source == Source::Short { st } else { lt })
    };
    let final_box = state.clamp_box(chosen.0);

    if reinit {
        let lt_box = state.clamp_box(lt.0);
        if let Ok(seed) = make_template(state, encoder, frame, &lt_box) {
            state.stm.reinitialize(seed)?;
        }
    }

    let mut decision = None;
    let mut candidate_id = None;
    if should_consider(state.frame_index, cfg.dilation)? {
        // A candidate from a featureless crop is skipped rather than fatal.
        if let Ok(cand) = make_template(state, encoder, frame, &final_box) {
            candidate_id = Some(cand.id);
            if cfg.use_stm {
                state.stm.push(cand.clone())?;
            }
            let gamma = if cfg.use_stm { state.stm.diversity() } else { 0.0 };
            let bound = cfg.use_bound.then_some(&cfg.bound);
            let d = state.ltm.consider(cand, bound, gamma)?;
            if d.is_update() {
                state.record_crop(frame, &final_box, &d)?;
            }
            decision = Some(d);
        }
    }

    state.previous_box = final_box;
    Ok(FramePrediction {
        frame_index: state.frame_index,
        bbox: final_box,
        score: chosen.1,
        source,
        stm_reinit: reinit,
        det_after: state.ltm.capacity_det(),
        gamma_after: if cfg.use_stm { state.stm.diversity() } else { 0.0 },
        decision,
        candidate_id,
    })
}

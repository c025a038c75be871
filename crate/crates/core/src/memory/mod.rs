//! Long-term and short-term template stores.
//!
//! The long-term memory keeps at most `K_lt` templates and only accepts a new
//! one when it passes a similarity lower bound and, once every slot is taken,
//! when swapping it in strictly grows the normalized Gram determinant. Slot 0
//! holds the base template from the first frame and is never replaced.
//!
//! The short-term memory is a plain FIFO of the last `K_st` templates and
//! supplies the diversity measure γ used by the dynamic lower bound.
//!
//! Both stores are single-writer: every mutation takes `&mut self`, so a
//! caller that shares one across threads has to serialize access itself
//! (for example behind a `RwLock`), which rules out torn reads.

mod snapshot;

pub use snapshot::{load_snapshot, save_snapshot, SnapshotManifest, SnapshotSlot};

use std::collections::VecDeque;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{build_gram, normalized_determinant, substituted_gram, GramMatrix};
use crate::inference::BoundingBox;
use crate::space::{inner_product, FeatureTensor};

/// Default relative improvement a replacement must beat.
pub const DEFAULT_GAIN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: u64,
    pub frame_index: usize,
    /// Masked and (by default) unit-normalized feature.
    pub feature: FeatureTensor,
    pub capture_box: BoundingBox,
    pub crop_path: Option<PathBuf>,
}

impl Template {
    pub fn new(id: u64, frame_index: usize, feature: FeatureTensor, capture_box: BoundingBox) -> Self {
        Self {
            id,
            frame_index,
            feature,
            capture_box,
            crop_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    /// Similarity to the base template only.
    Static,
    /// Static bound relaxed by the short-term diversity γ.
    Dynamic,
    /// Static bound against every stored template.
    Ensemble,
}

impl std::str::FromStr for BoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(BoundMode::Static),
            "dynamic" => Ok(BoundMode::Dynamic),
            "ensemble" => Ok(BoundMode::Ensemble),
            other => Err(Error::Parameter(format!("unknown bound mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConfig {
    pub mode: BoundMode,
    pub ell: f64,
}

impl LowerBoundConfig {
    /// `ell` above 1 is accepted; with unit-norm features it rejects everything.
    pub fn new(mode: BoundMode, ell: f64) -> Result<Self> {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::Parameter(format!("lower bound ell must be positive, got {ell}")));
        }
        Ok(Self { mode, ell })
    }

    /// Mode with its default `ell`: 0.5 for ensemble, 0.8 otherwise.
    pub fn with_default_ell(mode: BoundMode) -> Self {
        let ell = match mode {
            BoundMode::Ensemble => 0.5,
            BoundMode::Static | BoundMode::Dynamic => 0.8,
        };
        Self { mode, ell }
    }
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        Self::with_default_ell(BoundMode::Dynamic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    RejectedBound,
    RejectedNoGain,
    Appended,
    Replaced(usize),
}

impl Decision {
    pub fn is_update(&self) -> bool {
        matches!(self, Decision::Appended | Decision::Replaced(_))
    }
}

/// Whether `candidate` is similar enough to the stored templates to be
/// considered at all.
pub fn lower_bound_check(
    mem: &LongTermMemory,
    candidate: &Template,
    cfg: &LowerBoundConfig,
    gamma: f64,
) -> Result<bool> {
    let base = &mem.slots[0];
    let g11 = mem.gram.get(0, 0);
    Ok(match cfg.mode {
        BoundMode::Static => inner_product(&candidate.feature, &base.feature)? > cfg.ell * g11,
        BoundMode::Dynamic => {
            inner_product(&candidate.feature, &base.feature)? > cfg.ell * g11 - gamma
        }
        BoundMode::Ensemble => {
            for (i, slot) in mem.slots.iter().enumerate() {
                if inner_product(&candidate.feature, &slot.feature)? <= cfg.ell * mem.gram.get(i, i) {
                    return Ok(false);
                }
            }
            true
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongTermMemory {
    capacity: usize,
    slots: Vec<Template>,
    gram: GramMatrix,
    current_det: f64,
    gain_epsilon: f64,
}

impl LongTermMemory {
    pub fn new(base: Template, capacity: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Parameter("long-term capacity must be at least 1".into()));
        }
        if capacity > base.feature.len() {
            return Err(Error::Parameter(format!(
                "long-term capacity {capacity} exceeds feature dimensionality {}",
                base.feature.len()
            )));
        }
        if base.feature.norm() <= f64::MIN_POSITIVE {
            return Err(Error::Degenerate("base template feature is zero".into()));
        }
        Self::from_slots(vec![base], capacity)
    }

    /// Rebuilds a memory from stored templates; slot 0 is the base.
    pub fn from_slots(slots: Vec<Template>, capacity: usize) -> Result<Self> {
        if slots.is_empty() || slots.len() > capacity {
            return Err(Error::Parameter(format!(
                "{} templates for a memory of capacity {capacity}",
                slots.len()
            )));
        }
        let feats: Vec<FeatureTensor> = slots.iter().map(|t| t.feature.clone()).collect();
        let gram = build_gram(&feats)?;
        let current_det = normalized_determinant(&gram)?;
        Ok(Self {
            capacity,
            slots,
            gram,
            current_det,
            gain_epsilon: DEFAULT_GAIN_EPSILON,
        })
    }

    pub fn with_gain_epsilon(mut self, eps: f64) -> Self {
        self.gain_epsilon = eps;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn slots(&self) -> &[Template] {
        &self.slots
    }

    /// Records where the image crop behind `slot` was saved.
    pub fn set_crop_path(&mut self, slot: usize, path: PathBuf) -> Result<()> {
        let len = self.slots.len();
        let t = self.slots.get_mut(slot).ok_or(Error::Index { index: slot, len })?;
        t.crop_path = Some(path);
        Ok(())
    }

    pub fn base(&self) -> &Template {
        &self.slots[0]
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    /// Normalized determinant of the occupied slots.
    pub fn current_det(&self) -> f64 {
        self.current_det
    }

    /// Normalized determinant of all `K_lt` slots, counting unfilled slots as
    /// copies of the base template. It is zero until the memory is full and
    /// equals [`current_det`](Self::current_det) afterwards, so it never
    /// decreases over a run.
    pub fn capacity_det(&self) -> f64 {
        if self.is_full() {
            self.current_det
        } else {
            0.0
        }
    }

    pub fn features(&self) -> Vec<FeatureTensor> {
        self.slots.iter().map(|t| t.feature.clone()).collect()
    }

    /// Offers `candidate` to the memory; mutates only on `Appended` or
    /// `Replaced`.
    pub fn consider(
        &mut self,
        candidate: Template,
        bound: Option<&LowerBoundConfig>,
        gamma: f64,
    ) -> Result<Decision> {
        if !candidate.feature.same_shape(&self.slots[0].feature) {
            return Err(Error::Dimension(format!(
                "candidate shape {:?} does not match memory {:?}",
                candidate.feature.shape(),
                self.slots[0].feature.shape()
            )));
        }
        if let Some(cfg) = bound {
            if !lower_bound_check(self, &candidate, cfg, gamma)? {
                return Ok(Decision::RejectedBound);
            }
        }

        if !self.is_full() {
            let sims = self
                .slots
                .iter()
                .map(|t| inner_product(&candidate.feature, &t.feature))
                .collect::<Result<Vec<_>>>()?;
            let own = inner_product(&candidate.feature, &candidate.feature)?;
            self.gram = self.gram.with_appended(&sims, own);
            self.current_det = normalized_determinant(&self.gram)?;
            self.slots.push(candidate);
            return Ok(Decision::Appended);
        }

        let Some((slot, det)) = self.best_substitution(&candidate.feature)? else {
            return Ok(Decision::RejectedNoGain);
        };
        if det > self.current_det * (1.0 + self.gain_epsilon) && det > self.current_det {
            self.gram = substituted_gram(&self.gram, &self.features(), &candidate.feature, slot)?;
            self.current_det = normalized_determinant(&self.gram)?;
            self.slots[slot] = candidate;
            Ok(Decision::Replaced(slot))
        } else {
            Ok(Decision::RejectedNoGain)
        }
    }

    /// Best non-base slot to swap `candidate` into and the resulting
    /// normalized determinant. Ties go to the lowest slot.
    pub fn best_substitution(&self, candidate: &FeatureTensor) -> Result<Option<(usize, f64)>> {
        let feats = self.features();
        let g11 = self.gram.get(0, 0);
        let n = self.slots.len() as i32;
        let mut best: Option<(usize, f64)> = None;
        for slot in 1..self.slots.len() {
            let g = substituted_gram(&self.gram, &feats, candidate, slot)?;
            let det = crate::gram::determinant(&g) / g11.powi(n);
            if best.is_none_or(|(_, b)| det > b) {
                best = Some((slot, det));
            }
        }
        Ok(best)
    }
}

/// How γ normalizes the upper-triangle sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaVariant {
    /// `2 / (N (N + 1))`.
    #[default]
    AsWritten,
    /// `2 / (N (N - 1))`, one over the number of pairs.
    PairNormalized,
}

/// γ = 1 − c / G_max · Σ_{i<j} G_ij, clamped to [0, 1]; 0 for fewer than
/// two templates or a non-positive maximum entry.
pub fn diversity(gram: &GramMatrix, variant: GammaVariant) -> f64 {
    let n = gram.n();
    let max = gram.max_entry();
    if n < 2 || !(max > 0.0) {
        return 0.0;
    }
    let upper: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| gram.get(i, j))
        .sum();
    let nf = n as f64;
    let c = match variant {
        GammaVariant::AsWritten => 2.0 / (nf * (nf + 1.0)),
        GammaVariant::PairNormalized => 2.0 / (nf * (nf - 1.0)),
    };
    (1.0 - c / max * upper).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermMemory {
    capacity: usize,
    queue: VecDeque<Template>,
    gram: Option<GramMatrix>,
    variant: GammaVariant,
}

impl ShortTermMemory {
    pub fn new(capacity: usize, variant: GammaVariant) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Parameter("short-term capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            queue: VecDeque::with_capacity(capacity + 1),
            gram: None,
            variant,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.queue.iter()
    }

    pub fn gram(&self) -> Option<&GramMatrix> {
        self.gram.as_ref()
    }

    /// Appends `t`, evicting the oldest templates beyond capacity.
    pub fn push(&mut self, t: Template) -> Result<()> {
        if let Some(first) = self.queue.front() {
            if !first.feature.same_shape(&t.feature) {
                return Err(Error::Dimension("short-term template shape mismatch".into()));
            }
        }
        self.queue.push_back(t);
        while self.queue.len() > self.capacity {
            self.queue.pop_front();
        }
        let feats: Vec<FeatureTensor> = self.queue.iter().map(|t| t.feature.clone()).collect();
        self.gram = Some(build_gram(&feats)?);
        Ok(())
    }

    pub fn diversity(&self) -> f64 {
        self.gram
            .as_ref()
            .map_or(0.0, |g| diversity(g, self.variant))
    }

    pub fn reinitialize(&mut self, seed: Template) -> Result<()> {
        self.queue.clear();
        self.gram = None;
        self.push(seed)
    }
}

/// Memory updates only look at every `dilation`-th frame.
pub fn should_consider(frame_index: usize, dilation: usize) -> Result<bool> {
    if dilation < 1 {
        return Err(Error::Parameter("dilation must be at least 1".into()));
    }
    Ok(frame_index.is_multiple_of(dilation))
}

#[cfg(test)]
mod tests;

use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::FeatureTensor;

/// Taper fraction of a Tukey (tapered cosine) window.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaperedWindowSpec {
    pub alpha: f64,
}

impl Default for TaperedWindowSpec {
    fn default() -> Self {
        Self { alpha: 0.25 }
    }
}

impl TaperedWindowSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!(
                "window alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn mask(&self, height: usize, width: usize) -> Result<Mask> {
        tapered_cosine_window(height, width, self.alpha)
    }
}

/// Spatial weighting grid, broadcast over channels by [`apply_mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask {height}x{width} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Symmetric 1D Tukey window: flat over the central `1 - alpha` fraction,
/// raised-cosine taper to zero over `alpha / 2` at each end.
pub fn tukey_1d(len: usize, alpha: f64) -> Result<Vec<f64>> {
    TaperedWindowSpec::new(alpha)?;
    if len == 0 {
        return Err(Error::Parameter("window length must be at least 1".into()));
    }
    let edge = alpha * (len as f64 - 1.0) / 2.0;
    Ok((0..len)
        .map(|i| {
            let from_edge = i.min(len - 1 - i) as f64;
            if edge <= 0.0 || from_edge >= edge {
                1.0
            } else {
                0.5 * (1.0 - (PI * from_edge / edge).cos())
            }
        })
        .collect())
}

/// Outer product of two 1D Tukey windows.
pub fn tapered_cosine_window(height: usize, width: usize, alpha: f64) -> Result<Mask> {
    let rows = tukey_1d(height, alpha)?;
    let cols = tukey_1d(width, alpha)?;
    let values = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |c| r * c))
        .collect();
    Mask::new(height, width, values)
}

/// Element-wise product of each channel of `f` with `mask`.
pub fn apply_mask(f: &FeatureTensor, mask: &Mask) -> Result<FeatureTensor> {
    if mask.height() != f.height() || mask.width() != f.width() {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not match tensor {}x{}",
            mask.height(),
            mask.width(),
            f.height(),
            f.width()
        )));
    }
    let plane = f.height() * f.width();
    let data = f
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * mask.values()[i % plane])
        .collect();
    FeatureTensor::new(f.channels(), f.height(), f.width(), data)
}

//! The inner-product feature space every similarity in the crate lives in.
//!
//! A [`FeatureTensor`] is a dense `channels × height × width` block of `f64`
//! values. Two tensors of the same shape are compared with
//! [`inner_product`]; a small tensor is slid over a larger one with
//! [`cross_correlate`], which produces an [`ActivationMap`].

mod correlate;
mod fts;
mod window;

pub use correlate::{batch_cross_correlate, cross_correlate, ActivationMap, Peak};
pub use fts::{
    decode_feature_bytes, encode_feature_bytes, read_feature_file, write_feature_file,
    write_feature_file_as, Dtype, FTS_MAGIC,
};
pub use window::{apply_mask, tapered_cosine_window, tukey_1d, Mask, TaperedWindowSpec};

use crate::error::{Error, Result};

/// Dense feature embedding of an image patch, stored row-major in
/// channel-height-width order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Dimension("tensor shape overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "tensor value at flat index {pos} is not finite"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// A `1 × 1 × n` tensor; convenient for plain vectors.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(1, 1, n, data)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Dimensionality of the flattened feature space.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub(crate) fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
}

/// Full-overlap correlation of two same-shape tensors, i.e. the flattened
/// dot product.
pub fn inner_product(a: &FeatureTensor, b: &FeatureTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "inner product of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(dot(&a.data, &b.data))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `f` to unit L2 norm.
pub fn l2_normalize(f: &FeatureTensor) -> Result<FeatureTensor> {
    let norm = f.norm();
    if norm <= f64::MIN_POSITIVE || !norm.is_finite() {
        return Err(Error::Degenerate(
            "cannot normalize a tensor with zero norm".into(),
        ));
    }
    f.scaled(1.0 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn basis(n: usize, k: usize) -> FeatureTensor {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        FeatureTensor::from_vec(v).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(inner_product(&basis(3, 0), &basis(3, 0)).unwrap(), 1.0);
        assert_eq!(inner_product(&basis(3, 0), &basis(3, 1)).unwrap(), 0.0);
        let a = FeatureTensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let b = FeatureTensor::from_vec(vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(inner_product(&a, &b).unwrap(), 32.0);
    }

    #[test]
    fn inner_product_shape_mismatch() {
        let a = FeatureTensor::from_vec(vec![1.0, 2.0]).unwrap();
        let b = FeatureTensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(inner_product(&a, &b), Err(Error::Dimension(_))));
        let c = FeatureTensor::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(inner_product(&a, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(FeatureTensor::from_vec(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureTensor::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureTensor::new(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let f = FeatureTensor::from_vec(vec![3.0, 4.0]).unwrap();
        let n = l2_normalize(&f).unwrap();
        assert_abs_diff_eq!(n.data()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(n.data()[1], 0.8, epsilon = 1e-12);
        let again = l2_normalize(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let zero = FeatureTensor::from_vec(vec![0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize(&zero), Err(Error::Degenerate(_))));
    }

    fn tensor_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn inner_product_is_symmetric(a in tensor_strategy(12), b in tensor_strategy(12)) {
            let a = FeatureTensor::new(3, 2, 2, a).unwrap();
            let b = FeatureTensor::new(3, 2, 2, b).unwrap();
            prop_assert_eq!(inner_product(&a, &b).unwrap(), inner_product(&b, &a).unwrap());
        }

        #[test]
        fn normalized_similarity_is_bounded(a in tensor_strategy(9), b in tensor_strategy(9)) {
            let a = FeatureTensor::from_vec(a).unwrap();
            let b = FeatureTensor::from_vec(b).unwrap();
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let a = l2_normalize(&a).unwrap();
            let b = l2_normalize(&b).unwrap();
            prop_assert!((a.norm() - 1.0).abs() < 1e-9);
            prop_assert!(inner_product(&a, &b).unwrap().abs() <= 1.0 + 1e-9);
        }
    }
}

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::FeatureTensor;

/// Peak of an activation map: highest score and its first row-major location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub score: f64,
    pub row: usize,
    pub col: usize,
}

/// 2D similarity response of one template kernel over a search region.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
    pub template_id: u64,
    pub scale_index: usize,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || scores.len() != height * width {
            return Err(Error::Dimension(format!(
                "activation map {height}x{width} with {} scores",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Parameter("activation scores must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            scores,
            template_id: 0,
            scale_index: 0,
        })
    }

    pub fn with_ids(mut self, template_id: u64, scale_index: usize) -> Self {
        self.template_id = template_id;
        self.scale_index = scale_index;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn peak(&self) -> Peak {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        Peak {
            score: self.scores[best],
            row: best / self.width,
            col: best % self.width,
        }
    }

    /// Replaces the scores while keeping ids; `scores` must have the same length.
    pub(crate) fn map_scores(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            scores: self
                .scores
                .iter()
                .enumerate()
                .map(|(i, &s)| f(i, s))
                .collect(),
            template_id: self.template_id,
            scale_index: self.scale_index,
        }
    }
}

fn check_pair(kernel: &FeatureTensor, search: &FeatureTensor) -> Result<(usize, usize)> {
    if kernel.channels() != search.channels() {
        return Err(Error::Dimension(format!(
            "kernel has {} channels, search has {}",
            kernel.channels(),
            search.channels()
        )));
    }
    if kernel.height() > search.height() || kernel.width() > search.width() {
        return Err(Error::Dimension(format!(
            "kernel {}x{} larger than search {}x{}",
            kernel.height(),
            kernel.width(),
            search.height(),
            search.width()
        )));
    }
    Ok((
        search.height() - kernel.height() + 1,
        search.width() - kernel.width() + 1,
    ))
}

/// Valid-mode cross-correlation (no kernel flip), summed over channels.
///
/// Runs row by row: every kernel tap is applied to a whole output row, so
/// each cell still sums over channel, kernel row, kernel column in order.
pub fn cross_correlate(kernel: &FeatureTensor, search: &FeatureTensor) -> Result<ActivationMap> {
    let (oh, ow) = check_pair(kernel, search)?;
    let (channels, kh, kw) = kernel.shape();
    let (sh, sw) = (search.height(), search.width());
    let (k, s) = (kernel.data(), search.data());
    let mut out = vec![0.0; oh * ow];
    for (y, row) in out.chunks_exact_mut(ow).enumerate() {
        for c in 0..channels {
            for i in 0..kh {
                let srow = &s[(c * sh + y + i) * sw..][..sw];
                for (j, &kv) in k[(c * kh + i) * kw..][..kw].iter().enumerate() {
                    for (acc, &sv) in row.iter_mut().zip(&srow[j..j + ow]) {
                        *acc += kv * sv;
                    }
                }
            }
        }
    }
    ActivationMap::new(oh, ow, out)
}

/// Kernels per register block in [`batch_cross_correlate`].
const KB: usize = 3;
/// Output columns per register block.
const XB: usize = 4;

/// Correlates every kernel with the same search tensor.
///
/// Kernels are processed in register blocks of three, blocks in parallel.
/// Each output cell is accumulated in the same order as [`cross_correlate`],
/// so results are bit-identical to a loop of single calls regardless of the
/// thread count.
pub fn batch_cross_correlate(
    kernels: &[FeatureTensor],
    search: &FeatureTensor,
) -> Result<Vec<ActivationMap>> {
    let Some(first) = kernels.first() else {
        return Ok(Vec::new());
    };
    for k in kernels {
        if !k.same_shape(first) {
            return Err(Error::Dimension(format!(
                "batch kernels differ in shape: {:?} vs {:?}",
                k.shape(),
                first.shape()
            )));
        }
    }
    let (oh, ow) = check_pair(first, search)?;
    let blocks: Vec<Vec<Vec<f64>>> = kernels
        .par_chunks(KB)
        .map(|block| match block {
            [a, b, c] => correlate_block::<3>([a, b, c], search),
            [a, b] => correlate_block::<2>([a, b], search),
            [a] => correlate_block::<1>([a], search),
            _ => unreachable!("chunks of at most {KB}"),
        })
        .collect();
    blocks
        .into_iter()
        .flatten()
        .map(|scores| ActivationMap::new(oh, ow, scores))
        .collect()
}

/// Correlates `N` same-shape kernels, `XB` output columns at a time with all
/// accumulators held in registers.
fn correlate_block<const N: usize>(kernels: [&FeatureTensor; N], search: &FeatureTensor) -> Vec<Vec<f64>> {
    let (kh, kw) = (kernels[0].height(), kernels[0].width());
    let (oh, ow) = (search.height() - kh + 1, search.width() - kw + 1);
    // Tap-major interleaving: one load yields the same tap of every kernel.
    let taps: Vec<[f64; N]> = (0..kernels[0].len())
        .map(|t| std::array::from_fn(|b| kernels[b].data()[t]))
        .collect();
    let mut outs = vec![vec![0.0; oh * ow]; N];
    for y in 0..oh {
        let mut x0 = 0;
        while x0 + XB <= ow {
            cells::<N, XB>(&taps, kernels[0], search, y, x0, &mut outs);
            x0 += XB;
        }
        for x in x0..ow {
            cells::<N, 1>(&taps, kernels[0], search, y, x, &mut outs);
        }
    }
    outs
}

#[inline(always)]
fn cells<const N: usize, const W: usize>(
    taps: &[[f64; N]],
    shape_of: &FeatureTensor,
    search: &FeatureTensor,
    y: usize,
    x0: usize,
    outs: &mut [Vec<f64>],
) {
    let (channels, kh, kw) = shape_of.shape();
    let (sh, sw) = (search.height(), search.width());
    let ow = sw - kw + 1;
    let s = search.data();
    let mut acc = [[0.0f64; W]; N];
    for c in 0..channels {
        for i in 0..kh {
            let srow = &s[(c * sh + y + i) * sw + x0..][..kw + W - 1];
            let krow = &taps[(c * kh + i) * kw..][..kw];
            for j in 0..kw {
                let kv = krow[j];
                let sv: [f64; W] = std::array::from_fn(|l| srow[j + l]);
                for b in 0..N {
                    for l in 0..W {
                        acc[b][l] += kv[b] * sv[l];
                    }
                }
            }
        }
    }
    for b in 0..N {
        outs[b][y * ow + x0..][..W].copy_from_slice(&acc[b]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::inner_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(c: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureTensor {
        FeatureTensor::new(c, h, w, data).unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureTensor {
        t(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct evaluation of the valid-mode definition, one window at a time.
    fn oracle(kernel: &FeatureTensor, search: &FeatureTensor) -> Vec<f64> {
        let (c, kh, kw) = kernel.shape();
        let oh = search.height() - kh + 1;
        let ow = search.width() - kw + 1;
        let mut out = Vec::new();
        for y in 0..oh {
            for x in 0..ow {
                let mut window = Vec::new();
                for ch in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            window.push(search.at(ch, y + i, x + j));
                        }
                    }
                }
                let w = t(c, kh, kw, window);
                out.push(inner_product(kernel, &w).unwrap());
            }
        }
        out
    }

    #[test]
    fn scalar_kernel() {
        let k = t(1, 1, 1, vec![2.0]);
        let s = t(1, 3, 3, vec![1.0; 9]);
        let m = cross_correlate(&k, &s).unwrap();
        assert_eq!(m.dims(), (3, 3));
        assert!(m.scores().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn hand_evaluated_map() {
        let k = t(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let s = t(1, 3, 3, (1..=9).map(f64::from).collect());
        let m = cross_correlate(&k, &s).unwrap();
        assert_eq!(m.scores(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn self_match_peaks_at_subpatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_tensor(&mut rng, 2, 9, 11);
        let mut sub = Vec::new();
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..3 {
                    sub.push(s.at(c, 4 + i, 6 + j));
                }
            }
        }
        let k = t(2, 4, 3, sub);
        let m = cross_correlate(&k, &s).unwrap();
        let p = m.peak();
        assert_eq!((p.row, p.col), (4, 6));
        assert_eq!(p.score, inner_product(&k, &k).unwrap());
    }

    #[test]
    fn matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = random_tensor(&mut rng, 3, 4, 5);
            let s = random_tensor(&mut rng, 3, 10, 9);
            let m = cross_correlate(&k, &s).unwrap();
            for (a, b) in m.scores().iter().zip(oracle(&k, &s)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_overlap_equals_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_tensor(&mut rng, 3, 6, 6);
        let b = random_tensor(&mut rng, 3, 6, 6);
        let m = cross_correlate(&a, &b).unwrap();
        assert_eq!(m.dims(), (1, 1));
        assert!((m.scores()[0] - inner_product(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let k = t(2, 2, 2, vec![0.0; 8]);
        let s = t(1, 4, 4, vec![0.0; 16]);
        assert!(matches!(cross_correlate(&k, &s), Err(Error::Dimension(_))));
        let big = t(1, 5, 2, vec![0.0; 10]);
        assert!(matches!(cross_correlate(&big, &s), Err(Error::Dimension(_))));
        let k1 = t(1, 2, 2, vec![0.0; 4]);
        let k2 = t(1, 3, 2, vec![0.0; 6]);
        assert!(batch_cross_correlate(&[k1, k2], &s).is_err());
    }

    #[test]
    fn batch_is_bit_identical_to_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_tensor(&mut rng, 2, 20, 20);
        for n in [1usize, 2, 3, 4, 5, 8, 11] {
            let kernels: Vec<_> = (0..n).map(|_| random_tensor(&mut rng, 2, 6, 6)).collect();
            let batch = batch_cross_correlate(&kernels, &s).unwrap();
            assert_eq!(batch.len(), n);
            for (k, m) in kernels.iter().zip(&batch) {
                assert_eq!(m, &cross_correlate(k, &s).unwrap());
            }
        }
    }

    #[test]
    fn duplicate_kernels_give_identical_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_tensor(&mut rng, 1, 8, 8);
        let k = random_tensor(&mut rng, 1, 3, 3);
        let maps = batch_cross_correlate(&[k.clone(), k], &s).unwrap();
        assert_eq!(maps[0], maps[1]);
    }

    #[test]
    fn peak_prefers_first_row_major() {
        let m = ActivationMap::new(2, 2, vec![0.0, 1.0, 1.0, 0.5]).unwrap();
        let p = m.peak();
        assert_eq!((p.score, p.row, p.col), (1.0, 0, 1));
    }
}

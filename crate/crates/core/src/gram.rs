//! Gram matrices of template features and their determinants.
//!
//! The determinant of the Gram matrix of `n` feature vectors is the squared
//! `n`-dimensional volume of the parallelotope they span, which is the
//! diversity objective of the long-term memory.

use crate::error::{Error, Result};
use crate::space::{inner_product, FeatureTensor};

/// Determinants below zero but above this are rounding noise.
pub const NEGATIVE_DET_TOLERANCE: f64 = 1e-9;

/// Square matrix of pairwise similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl GramMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} entries for a {n}x{n} matrix",
                entries.len()
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows are not square".into()));
        }
        Self::from_entries(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Copy with row and column `slot` replaced by `similarities`, whose
    /// entry at `slot` is the new diagonal value.
    pub fn with_substituted(&self, slot: usize, similarities: &[f64]) -> Result<Self> {
        if slot >= self.n {
            return Err(Error::Index {
                index: slot,
                len: self.n,
            });
        }
        if similarities.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} similarities for a {}x{} matrix",
                similarities.len(),
                self.n,
                self.n
            )));
        }
        let mut out = self.clone();
        for (k, &s) in similarities.iter().enumerate() {
            out.entries[slot * self.n + k] = s;
            out.entries[k * self.n + slot] = s;
        }
        Ok(out)
    }

    /// Copy extended by one row and column.
    pub(crate) fn with_appended(&self, similarities: &[f64], self_similarity: f64) -> Self {
        let n = self.n + 1;
        let mut entries = vec![0.0; n * n];
        for i in 0..self.n {
            entries[i * n..i * n + self.n].copy_from_slice(&self.entries[i * self.n..][..self.n]);
        }
        for (k, &s) in similarities.iter().enumerate() {
            entries[self.n * n + k] = s;
            entries[k * n + self.n] = s;
        }
        entries[n * n - 1] = self_similarity;
        Self { n, entries }
    }

    #[cfg(test)]
    pub(crate) fn without_first(&self) -> Option<Self> {
        if self.n < 2 {
            return None;
        }
        let n = self.n - 1;
        let entries = (1..self.n)
            .flat_map(|i| (1..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Some(Self { n, entries })
    }
}

/// Pairwise inner products of `features`.
pub fn build_gram(features: &[FeatureTensor]) -> Result<GramMatrix> {
    let Some(first) = features.first() else {
        return Err(Error::Dimension("cannot build a Gram matrix of nothing".into()));
    };
    if let Some(bad) = features.iter().find(|f| f.shape() != first.shape()) {
        return Err(Error::Dimension(format!(
            "feature shapes differ: {:?} vs {:?}",
            bad.shape(),
            first.shape()
        )));
    }
    let n = features.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = inner_product(&features[i], &features[j])?;
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    GramMatrix::from_entries(n, entries)
}

/// Pivots this small relative to the largest entry mark the matrix as
/// numerically singular: for a Gram matrix the corresponding vector lies
/// within about `3e-7` (relative) of the span of the others. Elimination
/// residue on rank-deficient inputs reaches roughly `1e-14`.
pub const SINGULAR_PIVOT_TOLERANCE: f64 = 1e-13;

/// Determinant by LU factorization with partial pivoting. Numerically
/// singular matrices report exactly zero rather than rounding noise.
pub fn determinant(g: &GramMatrix) -> f64 {
    lu_determinant(g.n, g.entries.clone())
}

fn lu_determinant(n: usize, mut a: Vec<f64>) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = SINGULAR_PIVOT_TOLERANCE * scale;
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best <= tol {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for row in col + 1..n {
            let factor = a[row * n + col] / p;
            if factor == 0.0 {
                continue;
            }
            for k in col + 1..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
        }
    }
    det
}

/// `det(G / G_11)`, i.e. `det(G) / G_11^n`.
pub fn normalized_determinant(g: &GramMatrix) -> Result<f64> {
    let g11 = g.get(0, 0);
    if !(g11 > 0.0) {
        return Err(Error::Degenerate(format!(
            "cannot normalize by G_11 = {g11}"
        )));
    }
    Ok(determinant(&g.scaled(1.0 / g11)))
}

/// Determinant of `g` after replacing the feature in `slot` by `candidate`.
/// `g` itself is left untouched.
pub fn substitute_and_det(
    g: &GramMatrix,
    features: &[FeatureTensor],
    candidate: &FeatureTensor,
    slot: usize,
) -> Result<f64> {
    Ok(determinant(&substituted_gram(g, features, candidate, slot)?))
}

pub(crate) fn substituted_gram(
    g: &GramMatrix,
    features: &[FeatureTensor],
    candidate: &FeatureTensor,
    slot: usize,
) -> Result<GramMatrix> {
    if features.len() != g.n() {
        return Err(Error::Dimension(format!(
            "{} features for a {}x{} Gram matrix",
            features.len(),
            g.n(),
            g.n()
        )));
    }
    if slot >= g.n() {
        return Err(Error::Index {
            index: slot,
            len: g.n(),
        });
    }
    let sims = features
        .iter()
        .enumerate()
        .map(|(k, f)| {
            if k == slot {
                inner_product(candidate, candidate)
            } else {
                inner_product(candidate, f)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    g.with_substituted(slot, &sims)
}

/// `sqrt(det G)`; tiny negative determinants clamp to zero.
pub fn parallelotope_volume(g: &GramMatrix) -> Result<f64> {
    volume_from_det(determinant(g))
}

pub(crate) fn volume_from_det(det: f64) -> Result<f64> {
    if det < -NEGATIVE_DET_TOLERANCE {
        return Err(Error::NumericConsistency(format!(
            "Gram determinant {det} is negative beyond tolerance"
        )));
    }
    Ok(det.max(0.0).sqrt())
}

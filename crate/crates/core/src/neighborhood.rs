//! Exact Euclidean distances, k-th nearest-neighbor radii and ball queries.
//!
//! Everything here is brute force. Distances accumulate in `f64` in a fixed
//! coordinate order, so the same pair always yields the same bits no matter
//! which routine (or thread) computed it. Work is split over query rows.

use crate::embedding::EmbeddingMatrix;
use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;
use crate::par;

#[inline]
pub fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = f64::from(x) - f64::from(y);
            t * t
        })
        .sum()
}

#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

pub(crate) fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.d() != b.d() {
        return Err(ForteError::DimensionMismatch {
            expected: a.d(),
            found: b.d(),
        });
    }
    Ok(())
}

/// Fills `buf` with distances from `q` to every row of `base`.
#[inline]
fn distances_into(q: &[f32], base: &EmbeddingMatrix, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(base.iter_rows().map(|b| euclidean(q, b)));
}

/// Runs `f(i, distances_from_query_i_to_base)` for every query row.
pub(crate) fn map_query_rows<T, F>(query: &EmbeddingMatrix, base: &EmbeddingMatrix, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync + Send,
{
    par::map_range_with(
        query.n(),
        || Vec::with_capacity(base.n()),
        |buf: &mut Vec<f64>, i| {
            distances_into(query.row(i), base, buf);
            f(i, buf.as_mut_slice())
        },
    )
}

/// k-th smallest value (1-based) of `values`; reorders the slice.
#[inline]
pub(crate) fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    debug_assert!(k >= 1 && k <= values.len());
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Full `n_a × n_b` matrix of squared distances.
pub fn squared_distances(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<FeatureMatrix> {
    check_dims(a, b)?;
    let rows: Vec<Vec<f64>> = par::map_range(a.n(), |i| {
        let q = a.row(i);
        b.iter_rows().map(|r| squared_euclidean(q, r)).collect()
    });
    let data = rows.into_iter().flatten().collect();
    FeatureMatrix::new(a.n(), b.n(), data)
}

/// Per-point k-th nearest-neighbor distances within (or against) a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodProfile {
    radii: Vec<f64>,
    k: usize,
    source_rows: usize,
}

impl NeighborhoodProfile {
    pub fn new(radii: Vec<f64>, k: usize, source_rows: usize) -> Self {
        NeighborhoodProfile {
            radii,
            k,
            source_rows,
        }
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of rows in the set the radii were measured against.
    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}

/// Distance from each row to its k-th nearest *other* row.
///
/// Duplicates occupy separate ranks, so a row with `k` exact copies gets
/// radius 0.
pub fn knn_radii(x: &EmbeddingMatrix, k: usize) -> Result<NeighborhoodProfile> {
    if k == 0 || k >= x.n() {
        return Err(ForteError::InvalidK {
            k,
            reason: format!("need 1 <= k <= n - 1 with n = {}", x.n()),
        });
    }
    let radii = map_query_rows(x, x, |i, d| {
        // drop the self-distance by moving it past the end of the slice
        let last = d.len() - 1;
        d.swap(i, last);
        kth_smallest(&mut d[..last], k)
    });
    Ok(NeighborhoodProfile::new(radii, k, x.n()))
}

/// Distance from each query row to its k-th nearest row of `base`.
///
/// No self-exclusion: query and base are treated as distinct sets.
pub fn cross_knn_radii(
    query: &EmbeddingMatrix,
    base: &EmbeddingMatrix,
    k: usize,
) -> Result<NeighborhoodProfile> {
    check_dims(query, base)?;
    if k == 0 || k > base.n() {
        return Err(ForteError::InvalidK {
            k,
            reason: format!("need 1 <= k <= base size {}", base.n()),
        });
    }
    let radii = map_query_rows(query, base, |_, d| kth_smallest(d, k));
    Ok(NeighborhoodProfile::new(radii, k, base.n()))
}

fn check_profile(centers: &EmbeddingMatrix, radii: &NeighborhoodProfile) -> Result<()> {
    if radii.len() != centers.n() {
        return Err(ForteError::DimensionMismatch {
            expected: centers.n(),
            found: radii.len(),
        });
    }
    Ok(())
}

/// For each query row, the number of closed balls `B(center_i, radius_i)`
/// containing it.
pub fn containment_counts(
    centers: &EmbeddingMatrix,
    radii: &NeighborhoodProfile,
    query: &EmbeddingMatrix,
) -> Result<Vec<usize>> {
    check_dims(centers, query)?;
    check_profile(centers, radii)?;
    let r = radii.radii();
    Ok(map_query_rows(query, centers, |_, d| {
        d.iter().zip(r).filter(|(di, ri)| di <= ri).count()
    }))
}

/// Exact nearest distance from each query row to `refs`.
pub fn min_distances(query: &EmbeddingMatrix, refs: &EmbeddingMatrix) -> Result<Vec<f64>> {
    check_dims(query, refs)?;
    Ok(map_query_rows(query, refs, |_, d| {
        d.iter().copied().fold(f64::INFINITY, f64::min)
    }))
}

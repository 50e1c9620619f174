//! Histogram divergences, marginal Wasserstein and Mahalanobis distances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{ForteError, Result};
use crate::par;

pub const DEFAULT_BINS: usize = 64;

/// Two probability mass functions over shared bins.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPair {
    edges: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl HistogramPair {
    pub fn new(edges: Vec<f64>, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() || edges.len() != p.len() + 1 {
            return Err(ForteError::param(format!(
                "histogram needs bins+1 edges and equal-length masses, got {} edges, {} and {} masses",
                edges.len(),
                p.len(),
                q.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(ForteError::param("histogram edges must be non-decreasing"));
        }
        for (name, m) in [("P", &p), ("Q", &q)] {
            if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(ForteError::param(format!("{name} has a negative or non-finite mass")));
            }
            let total: f64 = m.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(ForteError::param(format!("{name} sums to {total}, not 1")));
            }
        }
        Ok(HistogramPair { edges, p, q })
    }

    /// Equal-width shared bins spanning the pooled min and max. A sample with
    /// zero range gets a single bin.
    pub fn from_samples(a: &[f64], b: &[f64], bins: usize) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(ForteError::Empty("histogram sample"));
        }
        if bins == 0 {
            return Err(ForteError::param("histogram needs at least one bin"));
        }
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ForteError::Degenerate("non-finite histogram sample".into()));
        }
        let bins = if hi > lo { bins } else { 1 };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * width })
            .collect();
        let mass = |x: &[f64]| {
            let mut counts = vec![0.0; bins];
            for &v in x {
                let idx = if width > 0.0 {
                    (((v - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[idx] += 1.0;
            }
            let n = x.len() as f64;
            counts.iter_mut().for_each(|c| *c /= n);
            counts
        };
        let (p, q) = (mass(a), mass(b));
        // Renormalize away rounding so the pair passes the unit-mass check.
        let fix = |m: Vec<f64>| {
            let s: f64 = m.iter().sum();
            m.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        HistogramPair::new(edges, fix(p), fix(q))
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

/// Divergences in nats. `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    pub kl: Option<f64>,
    pub js: f64,
    pub bhattacharyya: Option<f64>,
}

fn kl_terms(p: &[f64], q: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi == 0.0 {
                return None;
            }
            total += pi * (pi / qi).ln();
        }
    }
    Some(total.max(0.0))
}

pub fn histogram_divergences(h: &HistogramPair) -> Divergences {
    let m: Vec<f64> = h.p.iter().zip(&h.q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_terms(&h.p, &m).expect("M covers P") + 0.5 * kl_terms(&h.q, &m).expect("M covers Q");
    let overlap: f64 = h.p.iter().zip(&h.q).map(|(a, b)| (a * b).sqrt()).sum();
    Divergences {
        kl: kl_terms(&h.p, &h.q),
        js: js.clamp(0.0, std::f64::consts::LN_2),
        bhattacharyya: (overlap > 0.0).then(|| (-overlap.min(1.0).ln()).max(0.0)),
    }
}

fn check_same_dim(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.d() != b.d() {
        return Err(ForteError::DimensionMismatch {
            expected: a.d(),
            found: b.d(),
        });
    }
    Ok(())
}

fn column(x: &EmbeddingMatrix, j: usize) -> Vec<f64> {
    x.iter_rows().map(|r| f64::from(r[j])).collect()
}

/// Per-dimension histogram divergences averaged over dimensions. A metric is
/// undefined when it is undefined in any dimension.
pub fn marginal_divergences(a: &EmbeddingMatrix, b: &EmbeddingMatrix, bins: usize) -> Result<Divergences> {
    check_same_dim(a, b)?;
    let per_dim = par::map_range(a.d(), |j| {
        HistogramPair::from_samples(&column(a, j), &column(b, j), bins).map(|h| histogram_divergences(&h))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let d = per_dim.len() as f64;
    let mean_opt = |f: fn(&Divergences) -> Option<f64>| -> Option<f64> {
        per_dim.iter().map(f).sum::<Option<f64>>().map(|s| s / d)
    };
    Ok(Divergences {
        kl: mean_opt(|v| v.kl),
        js: per_dim.iter().map(|v| v.js).sum::<f64>() / d,
        bhattacharyya: mean_opt(|v| v.bhattacharyya),
    })
}

/// Wasserstein-1 distance between two empirical 1-D distributions,
/// `∫ |F_a − F_b|`. Equals the sorted-coupling mean for equal sizes.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (x - prev) * (i as f64 / na - j as f64 / nb).abs();
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        prev = x;
    }
    total
}

/// Mean over dimensions of the marginal Wasserstein-1 distances.
pub fn wasserstein_1d_mean(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64> {
    check_same_dim(a, b)?;
    let per_dim = par::map_range(a.d(), |j| wasserstein_1d(&column(a, j), &column(b, j)));
    Ok(per_dim.iter().sum::<f64>() / a.d() as f64)
}

/// Mean Mahalanobis distance of `query` rows from the distribution of
/// `refs`, with the sample covariance diagonal-loaded by `1e-6 · trace / d`.
pub fn mahalanobis_mean_distance(refs: &EmbeddingMatrix, query: &EmbeddingMatrix) -> Result<f64> {
    check_same_dim(refs, query)?;
    if refs.n() < 2 {
        return Err(ForteError::param("covariance needs at least 2 reference rows"));
    }
    let (n, d) = (refs.n(), refs.d());
    let x = DMatrix::from_row_iterator(n, d, refs.as_slice().iter().map(|&v| f64::from(v)));
    let mu = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let load = 1e-6 * cov.trace() / d as f64;
    for j in 0..d {
        cov[(j, j)] += load;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| ForteError::Degenerate("covariance is singular even after diagonal loading".into()))?;
    let l = chol.l();
    let dists = par::map_range(query.n(), |i| {
        let diff = DVector::from_iterator(d, query.row(i).iter().zip(mu.iter()).map(|(&q, m)| f64::from(q) - m));
        l.solve_lower_triangular(&diff).map(|y| y.norm())
    });
    let total = dists
        .into_iter()
        .sum::<Option<f64>>()
        .ok_or_else(|| ForteError::Degenerate("triangular solve failed".into()))?;
    Ok(total / query.n() as f64)
}

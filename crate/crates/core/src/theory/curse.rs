//! Inlier/outlier statistics across a sweep of dimensionalities.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::embedding::{EmbeddingMatrix, SeededRng};
use crate::error::{ForteError, Result};
use crate::par;
use crate::prdc::{prdc_columns, PrdcColumns, PrdcConfig};

use super::{sample_gaussian, GaussianSpec};

pub const COSINE_SUBSAMPLE: usize = 500;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurseConfig {
    pub d_min: usize,
    pub d_max: usize,
    pub d_step: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub shift: f64,
    pub prdc: PrdcConfig,
    pub seed: u64,
}

impl Default for CurseConfig {
    fn default() -> Self {
        CurseConfig {
            d_min: 2,
            d_max: 200,
            d_step: 5,
            n_in: 1000,
            n_out: 100,
            shift: 3.0,
            prdc: PrdcConfig::default(),
            seed: 0,
        }
    }
}

impl CurseConfig {
    pub fn dims(&self) -> Vec<usize> {
        (self.d_min..=self.d_max).step_by(self.d_step.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurseRow {
    pub d: usize,
    /// precision, recall, density, coverage of inliers against themselves
    pub inlier: [f64; 4],
    /// the same for outliers against the inliers
    pub outlier: [f64; 4],
    pub inlier_mean_norm: f64,
    pub inlier_mean_cosine: f64,
    pub inlier_top2_variance: f64,
}

fn means(c: &PrdcColumns) -> [f64; 4] {
    c.columns().map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn norm(r: &[f32]) -> f64 {
    r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Mean pairwise cosine similarity over the rows.
pub fn mean_pairwise_cosine(x: &EmbeddingMatrix) -> f64 {
    let norms: Vec<f64> = x.iter_rows().map(norm).collect();
    let n = x.n();
    let row_sums = par::map_range(n, |i| {
        let a = x.row(i);
        (i + 1..n)
            .map(|j| {
                let dot: f64 = a.iter().zip(x.row(j)).map(|(&p, &q)| f64::from(p) * f64::from(q)).sum();
                dot / (norms[i] * norms[j])
            })
            .sum::<f64>()
    });
    let pairs = (n * (n - 1) / 2) as f64;
    row_sums.iter().sum::<f64>() / pairs
}

fn covariance(x: &EmbeddingMatrix) -> Vec<f64> {
    let (n, d) = (x.n(), x.d());
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let rows = par::map_range(d, |a| {
        (0..d)
            .map(|b| {
                x.iter_rows()
                    .map(|r| (f64::from(r[a]) - mean[a]) * (f64::from(r[b]) - mean[b]))
                    .sum::<f64>()
                    / (n as f64 - 1.0)
            })
            .collect::<Vec<f64>>()
    });
    rows.concat()
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    c.chunks_exact(v.len())
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Largest eigenpair of a symmetric positive semi-definite matrix by power
/// iteration, stopping when the Rayleigh quotient moves by less than
/// `1e-10` relative.
fn power_iteration(c: &[f64], d: usize, rng: &mut SeededRng) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    let n0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= n0);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = mat_vec(c, &v);
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let len = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if len == 0.0 {
            return (0.0, v);
        }
        v = w.into_iter().map(|a| a / len).collect();
        let done = (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if done {
            break;
        }
    }
    (lambda.max(0.0), v)
}

/// Share of total variance carried by the two leading principal components.
pub fn top2_variance_fraction(x: &EmbeddingMatrix) -> Result<f64> {
    if x.n() < 3 || x.d() < 2 {
        return Err(ForteError::param("top-2 variance needs n >= 3 and d >= 2"));
    }
    let d = x.d();
    let mut c = covariance(x);
    let total: f64 = (0..d).map(|i| c[i * d + i]).sum();
    if !(total > 0.0) {
        return Err(ForteError::Degenerate("zero total variance".into()));
    }
    // fixed start vectors keep the result deterministic
    let mut rng = SeededRng::new(0);
    let (l1, v1) = power_iteration(&c, d, &mut rng);
    for a in 0..d {
        for b in 0..d {
            c[a * d + b] -= l1 * v1[a] * v1[b];
        }
    }
    let (l2, _) = power_iteration(&c, d, &mut rng);
    Ok(((l1 + l2) / total).clamp(0.0, 1.0))
}

fn curse_row(cfg: &CurseConfig, d: usize) -> Result<CurseRow> {
    let base = GaussianSpec::standard(cfg.n_in, d, cfg.seed).with_stream(3 * d as u64);
    let inliers = sample_gaussian(&base)?;
    let outliers = sample_gaussian(
        &GaussianSpec::standard(cfg.n_out, d, cfg.seed)
            .with_shift(cfg.shift)
            .with_stream(3 * d as u64 + 1),
    )?;
    let inlier = means(&prdc_columns(&inliers, &inliers, &cfg.prdc)?);
    let outlier = means(&prdc_columns(&outliers, &inliers, &cfg.prdc)?);
    let mean_norm = inliers.iter_rows().map(norm).sum::<f64>() / inliers.n() as f64;
    let cos_rows = if inliers.n() > COSINE_SUBSAMPLE {
        let mut rng = SeededRng::substream(cfg.seed, 3 * d as u64 + 2);
        let mut idx = sample(&mut rng, inliers.n(), COSINE_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        inliers.select_rows(&idx)?
    } else {
        inliers.clone()
    };
    Ok(CurseRow {
        d,
        inlier,
        outlier,
        inlier_mean_norm: mean_norm,
        inlier_mean_cosine: mean_pairwise_cosine(&cos_rows),
        inlier_top2_variance: top2_variance_fraction(&inliers)?,
    })
}

/// One row per dimensionality `d_min, d_min + d_step, … ≤ d_max`. Each row
/// draws from its own RNG substreams of `seed`. Inliers are compared
/// against themselves and outliers against the inliers.
pub fn curse_experiment(cfg: &CurseConfig) -> Result<Vec<CurseRow>> {
    if cfg.d_min == 0 || cfg.d_step == 0 || cfg.d_max < cfg.d_min {
        return Err(ForteError::param("need 1 <= d_min <= d_max and d_step >= 1"));
    }
    if cfg.n_in < 3 || cfg.n_out == 0 {
        return Err(ForteError::param("need at least 3 inliers and 1 outlier"));
    }
    cfg.prdc.validate()?;
    par::map_slice(&cfg.dims(), |&d| curse_row(cfg, d))
        .into_iter()
        .collect()
}

pub const CURSE_HEADER: [&str; 12] = [
    "d",
    "inlier_precision",
    "inlier_recall",
    "inlier_density",
    "inlier_coverage",
    "outlier_precision",
    "outlier_recall",
    "outlier_density",
    "outlier_coverage",
    "inlier_mean_norm",
    "inlier_mean_cosine",
    "inlier_top2_variance",
];

pub fn write_curse_csv(rows: &[CurseRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| ForteError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(CURSE_HEADER).map_err(to_err)?;
    for r in rows {
        let mut rec = vec![r.d.to_string()];
        rec.extend(r.inlier.iter().chain(&r.outlier).map(|v| v.to_string()));
        rec.extend(
            [r.inlier_mean_norm, r.inlier_mean_cosine, r.inlier_top2_variance]
                .iter()
                .map(|v| v.to_string()),
        );
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| ForteError::io(path, e))
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;
use crate::par;

use super::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `n^(-1/(f+4)) · σ̄`
    Scott,
    /// `(n (f+2) / 4)^(-1/(f+4)) · σ̄`
    Silverman,
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Scott
    }
}

impl std::str::FromStr for BandwidthRule {
    type Err = ForteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scott" => Ok(BandwidthRule::Scott),
            "silverman" => Ok(BandwidthRule::Silverman),
            other => other.parse::<f64>().map(BandwidthRule::Fixed).map_err(|_| {
                ForteError::param(format!(
                    "bandwidth must be scott, silverman or a number, got {s:?}"
                ))
            }),
        }
    }
}

/// Gaussian kernel density estimate with isotropic bandwidth `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub rule: BandwidthRule,
    pub bandwidth: f64,
    pub points: FeatureMatrix,
}

/// Mean of the per-column sample standard deviations (n - 1 denominator).
fn mean_column_std(x: &FeatureMatrix) -> f64 {
    let n = x.rows() as f64;
    let total: f64 = (0..x.cols())
        .map(|j| {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n;
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .sum();
    total / x.cols() as f64
}

pub fn select_bandwidth(x: &FeatureMatrix, rule: BandwidthRule) -> Result<f64> {
    let h = match rule {
        BandwidthRule::Fixed(h) => h,
        BandwidthRule::Scott | BandwidthRule::Silverman => {
            if x.rows() < 2 {
                return Err(ForteError::param(
                    "data-driven bandwidth needs at least 2 points",
                ));
            }
            let n = x.rows() as f64;
            let f = x.cols() as f64;
            let factor = match rule {
                BandwidthRule::Scott => n,
                _ => n * (f + 2.0) / 4.0,
            };
            factor.powf(-1.0 / (f + 4.0)) * mean_column_std(x)
        }
    };
    if !(h > 0.0) || !h.is_finite() {
        return Err(ForteError::Degenerate(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    Ok(h)
}

pub fn kde_fit(x: &FeatureMatrix, rule: BandwidthRule) -> Result<KdeModel> {
    if x.is_empty() {
        return Err(ForteError::Empty("KDE needs at least one point"));
    }
    if !x.all_finite() {
        return Err(ForteError::Degenerate(
            "non-finite value in KDE input".into(),
        ));
    }
    let bandwidth = select_bandwidth(x, rule)?;
    Ok(KdeModel {
        rule,
        bandwidth,
        points: x.clone(),
    })
}

impl KdeModel {
    pub fn log_density_row(&self, q: &[f64]) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let f = self.points.cols() as f64;
        let terms: Vec<f64> = self
            .points
            .iter_rows()
            .map(|p| {
                let sq: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                -sq / (2.0 * h2)
            })
            .collect();
        log_sum_exp(&terms) - (self.points.rows() as f64).ln() - 0.5 * f * (2.0 * PI * h2).ln()
    }

    pub fn log_density(&self, q: &FeatureMatrix) -> Result<Vec<f64>> {
        if q.cols() != self.points.cols() {
            return Err(ForteError::DimensionMismatch {
                expected: self.points.cols(),
                found: q.cols(),
            });
        }
        Ok(par::map_range(q.rows(), |i| self.log_density_row(q.row(i))))
    }
}

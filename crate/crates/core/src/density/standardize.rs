use serde::{Deserialize, Serialize};

use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;

pub const DEFAULT_STD_EPSILON: f64 = 1e-12;

/// Per-column z-scoring with statistics frozen at fit time.
///
/// Columns whose standard deviation is below `epsilon` are centered but not
/// scaled, so they map to 0 on the fitting data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        Self::fit_with_epsilon(x, DEFAULT_STD_EPSILON)
    }

    pub fn fit_with_epsilon(x: &FeatureMatrix, epsilon: f64) -> Result<Self> {
        if x.is_empty() || x.cols() == 0 {
            return Err(ForteError::Empty("standardizer needs at least one row"));
        }
        if !x.all_finite() {
            return Err(ForteError::Degenerate("non-finite feature value".into()));
        }
        let n = x.rows() as f64;
        let f = x.cols();
        let mut mean = vec![0.0; f];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Standardizer { mean, std, epsilon })
    }

    fn scale(&self, j: usize) -> f64 {
        if self.std[j] < self.epsilon {
            1.0
        } else {
            self.std[j]
        }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.cols() != self.mean.len() {
            return Err(ForteError::DimensionMismatch {
                expected: self.mean.len(),
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale(j);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_maps_to_zero() {
        let x =
            FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, 9.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let z = s.apply(&x).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fitted_data_is_standardized() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.37 - 3.0, (i as f64).sin() * 12.0 + 100.0])
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let z = Standardizer::fit(&x).unwrap().apply(&x).unwrap();
        for j in 0..2 {
            let c = z.column(j);
            let mean = c.iter().sum::<f64>() / 50.0;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_reuses_stored_statistics() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let shifted = FeatureMatrix::from_rows(&[vec![10.0], vec![12.0]]).unwrap();
        let z = s.apply(&shifted).unwrap();
        assert_eq!(z.column(0), vec![9.0, 11.0]);
        assert!(Standardizer::fit(&FeatureMatrix::zeros(0, 2)).is_err());
    }
}

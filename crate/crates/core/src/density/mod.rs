//! Density models fitted on PRDC features (or raw embeddings) and a uniform
//! anomaly-score contract: higher score means more anomalous.

mod codec;
pub mod gmm;
pub mod kde;
pub mod ocsvm;
pub mod standardize;

use serde::{Deserialize, Serialize};

use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;

pub use codec::{
    decode_estimator, encode_estimator, load_estimator, save_estimator, MODEL_MAGIC, MODEL_VERSION,
};
pub use gmm::{gmm_fit, GmmModel, GmmParams};
pub use kde::{kde_fit, BandwidthRule, KdeModel};
pub use ocsvm::{ocsvm_fit, GammaRule, OcsvmModel, OcsvmParams};
pub use standardize::Standardizer;

/// Numerically stable `ln Σ exp(v_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Which estimator to fit, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Gmm(GmmParams),
    Kde { bandwidth: BandwidthRule },
    Ocsvm(OcsvmParams),
}

impl EstimatorConfig {
    pub fn gmm() -> Self {
        EstimatorConfig::Gmm(GmmParams::default())
    }

    pub fn kde() -> Self {
        EstimatorConfig::Kde {
            bandwidth: BandwidthRule::Scott,
        }
    }

    pub fn ocsvm() -> Self {
        EstimatorConfig::Ocsvm(OcsvmParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorConfig::Gmm(_) => "gmm",
            EstimatorConfig::Kde { .. } => "kde",
            EstimatorConfig::Ocsvm(_) => "ocsvm",
        }
    }

    /// Default-parameter estimator by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "gmm" => Ok(Self::gmm()),
            "kde" => Ok(Self::kde()),
            "ocsvm" | "svm" => Ok(Self::ocsvm()),
            other => Err(ForteError::param(format!(
                "unknown estimator {other:?} (expected gmm, kde or ocsvm)"
            ))),
        }
    }
}

/// A fitted model of any of the three kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Gmm(GmmModel),
    Kde(KdeModel),
    Ocsvm(OcsvmModel),
}

impl DensityModel {
    pub fn name(&self) -> &'static str {
        match self {
            DensityModel::Gmm(_) => "gmm",
            DensityModel::Kde(_) => "kde",
            DensityModel::Ocsvm(_) => "ocsvm",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            DensityModel::Gmm(m) => m.n_features,
            DensityModel::Kde(m) => m.points.cols(),
            DensityModel::Ocsvm(m) => m.support_vectors.cols(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScores {
    /// Higher means more anomalous.
    pub values: Vec<f64>,
    pub model: &'static str,
}

/// Negative log density for GMM/KDE, negated decision value for OCSVM.
pub fn anomaly_score(model: &DensityModel, q: &FeatureMatrix) -> Result<AnomalyScores> {
    let values: Vec<f64> = match model {
        DensityModel::Gmm(m) => m.log_density(q)?.into_iter().map(|v| -v).collect(),
        DensityModel::Kde(m) => m.log_density(q)?.into_iter().map(|v| -v).collect(),
        DensityModel::Ocsvm(m) => m.decision(q)?.into_iter().map(|v| -v).collect(),
    };
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(ForteError::Degenerate(format!(
            "non-finite anomaly score for query row {}",
            bad + 1
        )));
    }
    Ok(AnomalyScores {
        values,
        model: model.name(),
    })
}

/// A model together with the standardizer applied to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEstimator {
    pub standardizer: Standardizer,
    pub model: DensityModel,
    pub seed: u64,
}

impl FittedEstimator {
    pub fn fit(x: &FeatureMatrix, config: &EstimatorConfig, seed: u64) -> Result<Self> {
        let standardizer = Standardizer::fit(x)?;
        let z = standardizer.apply(x)?;
        let model = match config {
            EstimatorConfig::Gmm(p) => DensityModel::Gmm(gmm_fit(&z, p, seed)?),
            EstimatorConfig::Kde { bandwidth } => DensityModel::Kde(kde_fit(&z, *bandwidth)?),
            EstimatorConfig::Ocsvm(p) => DensityModel::Ocsvm(ocsvm_fit(&z, p)?),
        };
        Ok(FittedEstimator {
            standardizer,
            model,
            seed,
        })
    }

    pub fn score(&self, q: &FeatureMatrix) -> Result<AnomalyScores> {
        anomaly_score(&self.model, &self.standardizer.apply(q)?)
    }

    /// Human-readable notes about fits that did not fully converge.
    pub fn warnings(&self) -> Vec<String> {
        match &self.model {
            DensityModel::Ocsvm(m) if !m.converged => vec![format!(
                "ocsvm did not converge (seed {}): {} iterations, KKT violation {:.3e}",
                self.seed, m.iterations, m.kkt_violation
            )],
            DensityModel::Gmm(m) if !m.converged => vec![format!(
                "gmm reached max_iter (seed {}) without meeting tol",
                self.seed
            )],
            _ => Vec::new(),
        }
    }

    /// True when a solver stopped before meeting its tolerance.
    pub fn has_numeric_failure(&self) -> bool {
        matches!(&self.model, DensityModel::Ocsvm(m) if !m.converged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SeededRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, f: usize, seed: u64) -> FeatureMatrix {
        let mut rng = SeededRng::new(seed);
        let data = (0..n * f)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        FeatureMatrix::new(n, f, data).unwrap()
    }

    #[test]
    fn lse_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn gmm_score_is_negated_log_density() {
        let model = DensityModel::Gmm(GmmModel {
            params: GmmParams::default(),
            seed: 0,
            weights: vec![1.0],
            means: vec![0.0],
            variances: vec![1.0],
            n_features: 1,
            n_iter: 0,
            converged: true,
            log_likelihood: 0.0,
            history: vec![],
        });
        let s = anomaly_score(&model, &FeatureMatrix::from_rows(&[vec![0.0]]).unwrap()).unwrap();
        assert!((s.values[0] - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn kde_score_reverses_density_order() {
        let x = gaussian(80, 2, 1);
        let m = kde_fit(&x, BandwidthRule::Scott).unwrap();
        let q = gaussian(30, 2, 2);
        let ld = m.log_density(&q).unwrap();
        let s = anomaly_score(&DensityModel::Kde(m), &q).unwrap().values;
        for i in 0..30 {
            for j in 0..30 {
                if ld[i] < ld[j] {
                    assert!(s[i] > s[j]);
                }
            }
        }
    }

    #[test]
    fn scores_increase_along_a_ray() {
        let x = gaussian(300, 3, 4);
        for cfg in [
            EstimatorConfig::Gmm(GmmParams {
                n_components: 1,
                ..Default::default()
            }),
            EstimatorConfig::kde(),
            EstimatorConfig::ocsvm(),
        ] {
            let est = FittedEstimator::fit(&x, &cfg, 0).unwrap();
            let ray: Vec<Vec<f64>> = (0..8).map(|t| vec![0.75 * t as f64 + 2.0; 3]).collect();
            let s = est
                .score(&FeatureMatrix::from_rows(&ray).unwrap())
                .unwrap()
                .values;
            if matches!(cfg, EstimatorConfig::Ocsvm(_)) {
                // RBF similarity saturates far away; only require non-decreasing
                assert!(s.windows(2).all(|w| w[1] >= w[0]), "{s:?}");
            } else {
                assert!(s.windows(2).all(|w| w[1] > w[0]), "{} {s:?}", cfg.name());
            }
        }
    }

    #[test]
    fn fitting_data_scores_lower_than_far_points() {
        let x = gaussian(200, 2, 8);
        let far = FeatureMatrix::new(
            200,
            2,
            gaussian(200, 2, 9)
                .as_slice()
                .iter()
                .map(|v| v + 10.0)
                .collect(),
        )
        .unwrap();
        for cfg in [
            EstimatorConfig::gmm(),
            EstimatorConfig::kde(),
            EstimatorConfig::ocsvm(),
        ] {
            let est = FittedEstimator::fit(&x, &cfg, 1).unwrap();
            let own = est.score(&x).unwrap().values;
            let away = est.score(&far).unwrap().values;
            assert!(own.iter().all(|v| v.is_finite()));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(mean(&own) < mean(&away), "{}", cfg.name());
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let est = FittedEstimator::fit(&gaussian(40, 3, 0), &EstimatorConfig::kde(), 0).unwrap();
        assert!(est.score(&gaussian(4, 2, 1)).is_err());
    }
}

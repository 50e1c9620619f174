//! Comparison battery: classical two-sample tests, divergences, classical
//! detectors, and a density model fitted directly on raw embeddings.

pub mod detectors;
pub mod distances;
pub mod stats;

use std::path::Path;

use serde::Serialize;

use crate::density::{EstimatorConfig, FittedEstimator};
use crate::embedding::EmbeddingMatrix;
use crate::error::{ForteError, Result};
use crate::evaluation::{EvaluationReport, ReportContext, SeedRun};

pub use detectors::{average_path_length, isolation_forest_scores, lof_scores, IF_FLAG_THRESHOLD, LOF_FLAG_THRESHOLD};
pub use distances::{
    histogram_divergences, mahalanobis_mean_distance, marginal_divergences, wasserstein_1d, wasserstein_1d_mean,
    Divergences, HistogramPair, DEFAULT_BINS,
};
pub use stats::{flatten, ks_two_sample, mann_whitney_u, z_score, TestResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryParams {
    /// Capped at `refs.n - 1`.
    pub lof_k: usize,
    pub if_trees: usize,
    pub if_subsample: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        BatteryParams {
            lof_k: 20,
            if_trees: 100,
            if_subsample: 256,
            bins: DEFAULT_BINS,
            seed: 0,
        }
    }
}

/// One comparison (reference set vs one query set) across every method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryRow {
    pub label: String,
    pub z_score: TestResult,
    pub ks: TestResult,
    pub mann_whitney: TestResult,
    pub lof_mean: f64,
    pub lof_flagged: f64,
    pub if_mean: f64,
    pub if_flagged: f64,
    pub divergences: Divergences,
    pub wasserstein: f64,
    pub mahalanobis: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fraction_above(v: &[f64], t: f64) -> f64 {
    v.iter().filter(|&&x| x > t).count() as f64 / v.len() as f64
}

pub fn run_battery(
    label: &str,
    refs: &EmbeddingMatrix,
    query: &EmbeddingMatrix,
    params: &BatteryParams,
) -> Result<BatteryRow> {
    if refs.d() != query.d() {
        return Err(ForteError::DimensionMismatch {
            expected: refs.d(),
            found: query.d(),
        });
    }
    let (a, b) = (flatten(refs), flatten(query));
    let lof = lof_scores(refs, query, params.lof_k.min(refs.n().saturating_sub(1)).max(1))?;
    let iso = isolation_forest_scores(refs, query, params.if_trees, params.if_subsample, params.seed)?;
    Ok(BatteryRow {
        label: label.to_string(),
        // query first so a shifted-up query gives a positive statistic
        z_score: z_score(&b, &a)?,
        ks: ks_two_sample(&b, &a)?,
        mann_whitney: mann_whitney_u(&b, &a)?,
        lof_mean: mean(&lof),
        lof_flagged: fraction_above(&lof, LOF_FLAG_THRESHOLD),
        if_mean: mean(&iso),
        if_flagged: fraction_above(&iso, IF_FLAG_THRESHOLD),
        divergences: marginal_divergences(refs, query, params.bins)?,
        wasserstein: wasserstein_1d_mean(refs, query)?,
        mahalanobis: mahalanobis_mean_distance(refs, query)?,
    })
}

pub const BATTERY_HEADER: [&str; 16] = [
    "method",
    "z_score",
    "z_p_value",
    "ks_stat",
    "ks_p_value",
    "mw_stat",
    "mw_p_value",
    "lof_mean",
    "lof_flagged_pct",
    "if_mean",
    "if_flagged_pct",
    "jsd",
    "kld",
    "bhattacharyya",
    "wasserstein",
    "mahalanobis",
];

/// Marker written for undefined values.
pub const UNDEFINED: &str = "undefined";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

impl BatteryRow {
    pub fn csv_record(&self) -> Vec<String> {
        let d = &self.divergences;
        vec![
            self.label.clone(),
            self.z_score.statistic.to_string(),
            cell(self.z_score.p_value),
            self.ks.statistic.to_string(),
            cell(self.ks.p_value),
            self.mann_whitney.statistic.to_string(),
            cell(self.mann_whitney.p_value),
            self.lof_mean.to_string(),
            (100.0 * self.lof_flagged).to_string(),
            self.if_mean.to_string(),
            (100.0 * self.if_flagged).to_string(),
            d.js.to_string(),
            cell(d.kl),
            cell(d.bhattacharyya),
            self.wasserstein.to_string(),
            self.mahalanobis.to_string(),
        ]
    }
}

pub fn write_battery_csv(rows: &[BatteryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| ForteError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(BATTERY_HEADER).map_err(to_err)?;
    for r in rows {
        w.write_record(r.csv_record()).map_err(to_err)?;
    }
    w.flush().map_err(|e| ForteError::io(path, e))
}

/// Fits the density model directly on raw reference embeddings (no PRDC
/// transform) and evaluates ID vs OOD test rows, once per seed.
pub fn raw_feature_baseline(
    refs: &EmbeddingMatrix,
    test_id: &EmbeddingMatrix,
    test_ood: &EmbeddingMatrix,
    config: &EstimatorConfig,
    seeds: &[u64],
) -> Result<EvaluationReport> {
    for m in [test_id, test_ood] {
        if m.d() != refs.d() {
            return Err(ForteError::DimensionMismatch {
                expected: refs.d(),
                found: m.d(),
            });
        }
    }
    let (x, id, ood) = (refs.to_features(), test_id.to_features(), test_ood.to_features());
    let mut runs = Vec::with_capacity(seeds.len());
    let mut warnings = Vec::new();
    for &seed in seeds {
        let est = FittedEstimator::fit(&x, config, seed)?;
        warnings.extend(est.warnings());
        let s_id = est.score(&id)?.values;
        let s_ood = est.score(&ood)?.values;
        runs.push(SeedRun::evaluate(seed, &s_id, &s_ood)?);
    }
    let ctx = ReportContext {
        estimator: config.name().to_string(),
        spaces: vec!["raw".to_string()],
        estimator_params: serde_json::to_value(config).expect("config serializes"),
        ..Default::default()
    };
    EvaluationReport::from_runs(ctx, &runs, test_id.n(), test_ood.n(), warnings)
}

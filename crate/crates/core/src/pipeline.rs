//! End-to-end detection runs: split the in-distribution data, summarize
//! points by their PRDC statistics against the reference third, fit a
//! density model on in-distribution summaries, then score held-out and OOD
//! points.
//!
//! Roles of the thirds, per seed:
//! - `reference`: the manifold every statistic is measured against;
//! - `test_like`: its statistics are the training data of the estimator;
//! - `held_out`: unseen in-distribution points for evaluation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::density::{BandwidthRule, EstimatorConfig, FittedEstimator, GammaRule, GmmParams, OcsvmParams};
use crate::embedding::{load_any, split_indices, EmbeddingMatrix, SplitIndices};
use crate::error::{ForteError, Result};
use crate::evaluation::{EvaluationReport, ReportContext, SeedRun};
use crate::matrix::FeatureMatrix;
use crate::par;
use crate::prdc::{assemble_labeled, DensityNormalization, PrdcConfig, RadiusSource};

pub fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// One representation space: in-distribution and OOD embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceData {
    pub label: String,
    pub id: EmbeddingMatrix,
    pub ood: EmbeddingMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub prdc: PrdcConfig,
    pub estimator: EstimatorConfig,
    pub seeds: Vec<u64>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            prdc: PrdcConfig::default(),
            estimator: EstimatorConfig::gmm(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacePaths {
    pub label: Option<String>,
    pub id: PathBuf,
    pub ood: PathBuf,
}

/// Everything needed for a run, as read from a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub settings: PipelineSettings,
    pub spaces: Vec<SpacePaths>,
    /// Optional sweep axes; empty means "just the settings".
    pub sweep_k: Vec<usize>,
    pub sweep_estimators: Vec<EstimatorConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    k: Option<usize>,
    radius_source: Option<String>,
    normalization: Option<String>,
    estimator: Option<String>,
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    sweep_k: Vec<usize>,
    #[serde(default)]
    sweep_estimators: Vec<String>,
    gmm: Option<GmmParams>,
    kde: Option<RawKde>,
    ocsvm: Option<RawOcsvm>,
    #[serde(default)]
    space: Vec<SpacePaths>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKde {
    bandwidth: Option<toml::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOcsvm {
    nu: Option<f64>,
    gamma: Option<toml::Value>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

fn config_err(msg: impl std::fmt::Display) -> ForteError {
    ForteError::Config(msg.to_string())
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl RawConfig {
    fn estimator(&self, name: &str) -> Result<EstimatorConfig> {
        Ok(match EstimatorConfig::from_name(name).map_err(config_err)? {
            EstimatorConfig::Gmm(_) => EstimatorConfig::Gmm(self.gmm.unwrap_or_default()),
            EstimatorConfig::Kde { .. } => EstimatorConfig::Kde {
                bandwidth: match self.kde.as_ref().and_then(|k| k.bandwidth.as_ref()) {
                    Some(v) => value_text(v).parse::<BandwidthRule>().map_err(config_err)?,
                    None => BandwidthRule::default(),
                },
            },
            EstimatorConfig::Ocsvm(_) => {
                let mut p = OcsvmParams::default();
                if let Some(o) = &self.ocsvm {
                    p.nu = o.nu.unwrap_or(p.nu);
                    p.tol = o.tol.unwrap_or(p.tol);
                    p.max_iter = o.max_iter.unwrap_or(p.max_iter);
                    if let Some(g) = &o.gamma {
                        p.gamma = value_text(g).parse::<GammaRule>().map_err(config_err)?;
                    }
                }
                EstimatorConfig::Ocsvm(p)
            }
        })
    }
}

impl PipelineConfig {
    /// Parses the TOML configuration format. Relative space paths are
    /// resolved against `base_dir`.
    ///
    /// ```toml
    /// k = 5
    /// radius_source = "within_test_set"   # or "from_reference_set"
    /// normalization = "one_over_k"        # or "one_over_km"
    /// estimator = "gmm"                   # gmm | kde | ocsvm
    /// seeds = [0, 1, 2]
    /// sweep_k = [3, 5, 10]                # optional
    /// sweep_estimators = ["gmm", "kde"]   # optional
    ///
    /// [gmm]
    /// n_components = 4
    ///
    /// [[space]]
    /// label = "clip"
    /// id = "clip_id.csv"
    /// ood = "clip_ood.frte"
    /// ```
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(config_err)?;
        let mut prdc = PrdcConfig::default();
        if let Some(k) = raw.k {
            prdc.k = k;
        }
        if let Some(s) = &raw.radius_source {
            prdc.radius_source = s.parse::<RadiusSource>().map_err(config_err)?;
        }
        if let Some(s) = &raw.normalization {
            prdc.density_normalization = s.parse::<DensityNormalization>().map_err(config_err)?;
        }
        let estimator = raw.estimator(raw.estimator.as_deref().unwrap_or("gmm"))?;
        let sweep_estimators = raw
            .sweep_estimators
            .iter()
            .map(|n| raw.estimator(n))
            .collect::<Result<Vec<_>>>()?;
        let spaces = raw
            .space
            .iter()
            .map(|s| SpacePaths {
                label: s.label.clone(),
                id: base_dir.join(&s.id),
                ood: base_dir.join(&s.ood),
            })
            .collect();
        let cfg = PipelineConfig {
            settings: PipelineSettings {
                prdc,
                estimator,
                seeds: raw.seeds.clone().unwrap_or_else(default_seeds),
            },
            spaces,
            sweep_k: raw.sweep_k.clone(),
            sweep_estimators,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ForteError::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.spaces.is_empty() {
            return Err(config_err("at least one [[space]] with id and ood paths is required"));
        }
        validate_settings(&self.settings)?;
        for &k in &self.sweep_k {
            PrdcConfig { k, ..self.settings.prdc }.validate()?;
        }
        Ok(())
    }

    /// Reads every embedding file. Unlabeled spaces are named by the stem of
    /// their ID file.
    pub fn load_spaces(&self) -> Result<Vec<SpaceData>> {
        self.spaces
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let label = s.label.clone().unwrap_or_else(|| {
                    s.id.file_stem()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("space{i}"))
                });
                Ok(SpaceData {
                    label,
                    id: load_any(&s.id)?,
                    ood: load_any(&s.ood)?,
                })
            })
            .collect()
    }
}

fn validate_settings(s: &PipelineSettings) -> Result<()> {
    if s.seeds.is_empty() {
        return Err(ForteError::param("at least one seed is required"));
    }
    let mut sorted = s.seeds.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ForteError::param("seeds must be distinct"));
    }
    s.prdc.validate()
}

fn validate_spaces(spaces: &[SpaceData]) -> Result<()> {
    let first = spaces.first().ok_or(ForteError::Empty("no representation spaces"))?;
    for s in spaces {
        if s.id.n() != first.id.n() {
            return Err(ForteError::param(format!(
                "space {:?} has {} ID rows but {:?} has {}; ID rows must align across spaces",
                s.label,
                s.id.n(),
                first.label,
                first.id.n()
            )));
        }
        if s.ood.n() != first.ood.n() {
            return Err(ForteError::param(format!(
                "space {:?} has {} OOD rows but {:?} has {}; OOD rows must align across spaces",
                s.label,
                s.ood.n(),
                first.label,
                first.ood.n()
            )));
        }
        if s.id.d() != s.ood.d() {
            return Err(ForteError::DimensionMismatch {
                expected: s.id.d(),
                found: s.ood.d(),
            });
        }
    }
    Ok(())
}

/// Per-point scores of one seed, for optional dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedScores {
    pub seed: u64,
    /// Row indices into the ID input of the held-out points.
    pub id_rows: Vec<usize>,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForteRun {
    pub report: EvaluationReport,
    pub scores: Vec<SeedScores>,
    /// True when some fit stopped before meeting its tolerance.
    pub numeric_failure: bool,
}

impl ForteRun {
    /// `seed,set,row,score`, one line per scored point.
    pub fn write_scores_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_err = |e: csv::Error| ForteError::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(to_err)?;
        w.write_record(["seed", "set", "row", "score"]).map_err(to_err)?;
        for s in &self.scores {
            for (row, score) in s.id_rows.iter().zip(&s.id_scores) {
                w.write_record([s.seed.to_string(), "id".into(), row.to_string(), score.to_string()])
                    .map_err(to_err)?;
            }
            for (row, score) in s.ood_scores.iter().enumerate() {
                w.write_record([s.seed.to_string(), "ood".into(), row.to_string(), score.to_string()])
                    .map_err(to_err)?;
            }
        }
        w.flush().map_err(|e| ForteError::io(path, e))
    }
}

struct SeedFeatures {
    split: SplitIndices,
    calibration: FeatureMatrix,
    held_out: FeatureMatrix,
    ood: FeatureMatrix,
}

fn seed_features(spaces: &[SpaceData], prdc: &PrdcConfig, seed: u64) -> Result<SeedFeatures> {
    let split = split_indices(spaces[0].id.n(), seed)?;
    let labels: Vec<String> = spaces.iter().map(|s| s.label.clone()).collect();
    let part = |idx: &[usize]| -> Result<Vec<EmbeddingMatrix>> { spaces.iter().map(|s| s.id.select_rows(idx)).collect() };
    let reference = part(&split.reference)?;
    let test_like = part(&split.test_like)?;
    let held_out = part(&split.held_out)?;
    let refs: Vec<&EmbeddingMatrix> = reference.iter().collect();
    let features = |test: Vec<&EmbeddingMatrix>| assemble_labeled(&test, &refs, &labels, prdc).map(|f| f.into_features());
    Ok(SeedFeatures {
        calibration: features(test_like.iter().collect())?,
        held_out: features(held_out.iter().collect())?,
        ood: features(spaces.iter().map(|s| &s.ood).collect())?,
        split,
    })
}

/// Fits the estimator of one seed. Uses only in-distribution data.
pub fn calibrate(spaces: &[SpaceData], settings: &PipelineSettings, seed: u64) -> Result<FittedEstimator> {
    validate_spaces(spaces)?;
    let labels: Vec<String> = spaces.iter().map(|s| s.label.clone()).collect();
    let split = split_indices(spaces[0].id.n(), seed)?;
    let reference: Vec<EmbeddingMatrix> = spaces
        .iter()
        .map(|s| s.id.select_rows(&split.reference))
        .collect::<Result<_>>()?;
    let test_like: Vec<EmbeddingMatrix> = spaces
        .iter()
        .map(|s| s.id.select_rows(&split.test_like))
        .collect::<Result<_>>()?;
    let features = assemble_labeled(
        &test_like.iter().collect::<Vec<_>>(),
        &reference.iter().collect::<Vec<_>>(),
        &labels,
        &settings.prdc,
    )?;
    FittedEstimator::fit(features.features(), &settings.estimator, seed)
}

struct SeedResult {
    run: SeedRun,
    scores: SeedScores,
    warnings: Vec<String>,
    numeric_failure: bool,
}

fn evaluate_seed(f: &SeedFeatures, estimator: &EstimatorConfig, seed: u64) -> Result<SeedResult> {
    let est = FittedEstimator::fit(&f.calibration, estimator, seed)?;
    let id_scores = est.score(&f.held_out)?.values;
    let ood_scores = est.score(&f.ood)?.values;
    Ok(SeedResult {
        run: SeedRun::evaluate(seed, &id_scores, &ood_scores)?,
        scores: SeedScores {
            seed,
            id_rows: f.split.held_out.clone(),
            id_scores,
            ood_scores,
        },
        warnings: est.warnings(),
        numeric_failure: est.has_numeric_failure(),
    })
}

fn assemble_run(
    spaces: &[SpaceData],
    prdc: &PrdcConfig,
    estimator: &EstimatorConfig,
    results: Vec<SeedResult>,
) -> Result<ForteRun> {
    let ctx = ReportContext {
        estimator: estimator.name().to_string(),
        k: Some(prdc.k),
        radius_source: Some(prdc.radius_source.as_str().to_string()),
        normalization: Some(prdc.density_normalization.as_str().to_string()),
        spaces: spaces.iter().map(|s| s.label.clone()).collect(),
        estimator_params: serde_json::to_value(estimator).expect("config serializes"),
    };
    let runs: Vec<SeedRun> = results.iter().map(|r| r.run).collect();
    let n_id = results[0].scores.id_scores.len();
    let n_ood = results[0].scores.ood_scores.len();
    let warnings = results.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
    let numeric_failure = results.iter().any(|r| r.numeric_failure);
    let report = EvaluationReport::from_runs(ctx, &runs, n_id, n_ood, warnings)?;
    Ok(ForteRun {
        report,
        scores: results.into_iter().map(|r| r.scores).collect(),
        numeric_failure,
    })
}

/// Runs every (k, estimator) pair over all seeds. Features for a (seed, k)
/// cell are computed once and shared by all estimators; splits depend only
/// on the seed, so every pair sees the same permutations. Seeds run in
/// parallel, and results are ordered by k, then estimator, then seed.
pub fn run_forte_sweep_on(
    spaces: &[SpaceData],
    settings: &PipelineSettings,
    k_values: &[usize],
    estimators: &[EstimatorConfig],
) -> Result<Vec<ForteRun>> {
    validate_spaces(spaces)?;
    validate_settings(settings)?;
    if k_values.is_empty() || estimators.is_empty() {
        return Err(ForteError::param("sweep needs at least one k and one estimator"));
    }
    let mut out = Vec::with_capacity(k_values.len() * estimators.len());
    for &k in k_values {
        let prdc = PrdcConfig { k, ..settings.prdc };
        prdc.validate()?;
        let per_seed = par::map_slice(&settings.seeds, |&seed| -> Result<Vec<SeedResult>> {
            let f = seed_features(spaces, &prdc, seed)?;
            estimators.iter().map(|e| evaluate_seed(&f, e, seed)).collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut by_estimator: Vec<Vec<SeedResult>> = estimators.iter().map(|_| Vec::new()).collect();
        for seed_results in per_seed {
            for (slot, r) in by_estimator.iter_mut().zip(seed_results) {
                slot.push(r);
            }
        }
        for (e, results) in estimators.iter().zip(by_estimator) {
            out.push(assemble_run(spaces, &prdc, e, results)?);
        }
    }
    Ok(out)
}

pub fn run_forte_on(spaces: &[SpaceData], settings: &PipelineSettings) -> Result<ForteRun> {
    let mut runs = run_forte_sweep_on(spaces, settings, &[settings.prdc.k], &[settings.estimator])?;
    Ok(runs.remove(0))
}

pub fn run_forte(cfg: &PipelineConfig) -> Result<ForteRun> {
    cfg.validate()?;
    run_forte_on(&cfg.load_spaces()?, &cfg.settings)
}

/// Sweeps the configured axes, falling back to the single settings value
/// for an axis left empty.
pub fn run_forte_sweep(cfg: &PipelineConfig) -> Result<Vec<ForteRun>> {
    cfg.validate()?;
    let ks = if cfg.sweep_k.is_empty() {
        vec![cfg.settings.prdc.k]
    } else {
        cfg.sweep_k.clone()
    };
    let ests = if cfg.sweep_estimators.is_empty() {
        vec![cfg.settings.estimator]
    } else {
        cfg.sweep_estimators.clone()
    };
    run_forte_sweep_on(&cfg.load_spaces()?, &cfg.settings, &ks, &ests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{sample_gaussian, GaussianSpec};

    fn fixture(n_id: usize, n_ood: usize, d: usize, shift: f64) -> SpaceData {
        SpaceData {
            label: "g".into(),
            id: sample_gaussian(&GaussianSpec::standard(n_id, d, 100)).unwrap(),
            ood: sample_gaussian(&GaussianSpec::standard(n_ood, d, 100).with_stream(1).with_shift(shift)).unwrap(),
        }
    }

    fn quick() -> PipelineSettings {
        PipelineSettings {
            seeds: vec![0, 1, 2],
            ..Default::default()
        }
    }

    #[test]
    fn separable_fixture_is_detected() {
        let run = run_forte_on(&[fixture(300, 100, 8, 3.0)], &quick()).unwrap();
        assert!(run.report.auroc.mean >= 0.99, "{}", run.report.auroc.mean);
        assert_eq!(run.report.n_id, 100);
        assert_eq!(run.report.n_ood, 100);
        assert_eq!(run.report.seeds, vec![0, 1, 2]);
        assert_eq!(run.scores.len(), 3);
    }

    #[test]
    fn sweep_matches_single_runs_and_is_deterministic() {
        let spaces = [fixture(240, 60, 6, 2.0)];
        let s = quick();
        let ests = [EstimatorConfig::gmm(), EstimatorConfig::kde()];
        let sweep = run_forte_sweep_on(&spaces, &s, &[3, 5], &ests).unwrap();
        assert_eq!(sweep.len(), 4);
        let meta: Vec<(Option<usize>, String)> =
            sweep.iter().map(|r| (r.report.k, r.report.estimator.clone())).collect();
        assert_eq!(
            meta,
            vec![
                (Some(3), "gmm".into()),
                (Some(3), "kde".into()),
                (Some(5), "gmm".into()),
                (Some(5), "kde".into())
            ]
        );
        let single = run_forte_on(
            &spaces,
            &PipelineSettings {
                prdc: PrdcConfig::with_k(5),
                estimator: EstimatorConfig::kde(),
                ..s.clone()
            },
        )
        .unwrap();
        assert_eq!(single, sweep[3]);
        assert_eq!(sweep, run_forte_sweep_on(&spaces, &s, &[3, 5], &ests).unwrap());
    }

    #[test]
    fn fitted_model_ignores_ood_data() {
        let a = fixture(150, 40, 4, 3.0);
        let mut b = a.clone();
        b.ood = sample_gaussian(&GaussianSpec::standard(7, 4, 9)).unwrap();
        let s = quick();
        assert_eq!(calibrate(&[a], &s, 1).unwrap(), calibrate(&[b], &s, 1).unwrap());
    }

    #[test]
    fn misaligned_spaces_are_rejected() {
        let a = fixture(90, 30, 4, 1.0);
        let mut b = fixture(90, 30, 4, 1.0);
        b.id = sample_gaussian(&GaussianSpec::standard(91, 4, 0)).unwrap();
        assert!(run_forte_on(&[a.clone(), b], &quick()).is_err());
        let mut c = a.clone();
        c.ood = sample_gaussian(&GaussianSpec::standard(30, 5, 0)).unwrap();
        assert!(run_forte_on(&[c], &quick()).is_err());
        let bad = PipelineSettings {
            prdc: PrdcConfig::with_k(40),
            ..quick()
        };
        assert!(run_forte_on(&[a], &bad).is_err());
    }

    #[test]
    fn toml_config_round_trip() {
        let text = r#"
            k = 7
            radius_source = "from_reference_set"
            estimator = "ocsvm"
            seeds = [4, 2]
            sweep_k = [3, 5]
            sweep_estimators = ["gmm", "kde"]
            [ocsvm]
            nu = 0.2
            gamma = 0.5
            [kde]
            bandwidth = "silverman"
            [[space]]
            label = "a"
            id = "id.csv"
            ood = "ood.frte"
        "#;
        let cfg = PipelineConfig::from_toml(text, Path::new("/data")).unwrap();
        assert_eq!(cfg.settings.prdc.k, 7);
        assert_eq!(cfg.settings.prdc.radius_source, RadiusSource::FromReferenceSet);
        assert_eq!(cfg.settings.seeds, vec![4, 2]);
        match cfg.settings.estimator {
            EstimatorConfig::Ocsvm(p) => {
                assert_eq!(p.nu, 0.2);
                assert_eq!(p.gamma, GammaRule::Fixed(0.5));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            cfg.sweep_estimators[1],
            EstimatorConfig::Kde {
                bandwidth: BandwidthRule::Silverman
            }
        );
        assert_eq!(cfg.spaces[0].id, Path::new("/data/id.csv"));
        assert!(PipelineConfig::from_toml("k = 5\n", Path::new(".")).is_err());
        assert!(PipelineConfig::from_toml("bogus = 1\n", Path::new(".")).is_err());
    }
}

//! Threshold-free detection metrics and multi-seed aggregation.
//!
//! OOD is the positive class and higher scores mean more anomalous.

use serde::{Deserialize, Serialize};

use crate::error::{ForteError, Result};

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() {
        return Err(ForteError::Empty("no in-distribution scores"));
    }
    if ood.is_empty() {
        return Err(ForteError::Empty("no OOD scores"));
    }
    if id.iter().chain(ood).any(|v| !v.is_finite()) {
        return Err(ForteError::Degenerate("non-finite score".into()));
    }
    Ok(())
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counted one half. Computed from midranks of the pooled sample.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&v| (v, false))
        .chain(ood.iter().map(|&v| (v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ood_rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let positives = pooled[i..=j].iter().filter(|p| p.1).count();
        ood_rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let u = ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0;
    Ok((u / (n_id * n_ood)).clamp(0.0, 1.0))
}

/// FPR at the largest threshold whose TPR reaches `target_tpr`, with the
/// rule "positive iff score ≥ t" and no interpolation between operating
/// points.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], target_tpr: f64) -> Result<f64> {
    check_scores(id, ood)?;
    if !(0.0..=1.0).contains(&target_tpr) {
        return Err(ForteError::param(format!("target TPR must lie in [0, 1], got {target_tpr}")));
    }
    let n_ood = ood.len();
    // smallest count c with c / n_ood ≥ target, tolerant of rounding in the target
    let needed = (0..=n_ood)
        .find(|&c| c as f64 / n_ood as f64 >= target_tpr - 1e-12)
        .unwrap_or(n_ood);
    if needed == 0 {
        return Ok(0.0);
    }
    let mut sorted = ood.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[needed - 1];
    let false_pos = id.iter().filter(|&&v| v >= threshold).count();
    Ok(false_pos as f64 / id.len() as f64)
}

/// FPR at 95% TPR.
pub fn fpr95(id: &[f64], ood: &[f64]) -> Result<f64> {
    fpr_at_tpr(id, ood, 0.95)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub auroc: f64,
    pub fpr95: f64,
}

impl SeedRun {
    pub fn evaluate(seed: u64, id: &[f64], ood: &[f64]) -> Result<Self> {
        Ok(SeedRun {
            seed,
            auroc: auroc(id, ood)?,
            fpr95: fpr95(id, ood)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation, 0 for a single run.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ForteError::Empty("no runs to aggregate"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(MetricSummary {
            mean,
            std,
            per_seed: values,
        })
    }

    /// `"mean ± std"` in percent with two decimals.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedAggregate {
    pub seeds: Vec<u64>,
    pub auroc: MetricSummary,
    pub fpr95: MetricSummary,
}

/// Mean and sample standard deviation of each metric. Runs are ordered by
/// seed first, so the input order does not affect the result.
pub fn aggregate_seeds(runs: &[SeedRun]) -> Result<SeedAggregate> {
    if runs.is_empty() {
        return Err(ForteError::Empty("no runs to aggregate"));
    }
    let mut runs = runs.to_vec();
    runs.sort_by_key(|r| r.seed);
    Ok(SeedAggregate {
        seeds: runs.iter().map(|r| r.seed).collect(),
        auroc: MetricSummary::from_values(runs.iter().map(|r| r.auroc).collect())?,
        fpr95: MetricSummary::from_values(runs.iter().map(|r| r.fpr95).collect())?,
    })
}

/// Settings echoed into a report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportContext {
    pub estimator: String,
    /// `None` for runs that do not use a k-NN transform.
    pub k: Option<usize>,
    pub radius_source: Option<String>,
    pub normalization: Option<String>,
    pub spaces: Vec<String>,
    pub estimator_params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub estimator: String,
    pub k: Option<usize>,
    pub radius_source: Option<String>,
    pub normalization: Option<String>,
    pub seeds: Vec<u64>,
    pub auroc: MetricSummary,
    pub fpr95: MetricSummary,
    pub n_id: usize,
    pub n_ood: usize,
    pub spaces: Vec<String>,
    pub estimator_params: serde_json::Value,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn from_runs(
        ctx: ReportContext,
        runs: &[SeedRun],
        n_id: usize,
        n_ood: usize,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let agg = aggregate_seeds(runs)?;
        Ok(EvaluationReport {
            estimator: ctx.estimator,
            k: ctx.k,
            radius_source: ctx.radius_source,
            normalization: ctx.normalization,
            seeds: agg.seeds,
            auroc: agg.auroc,
            fpr95: agg.fpr95,
            n_id,
            n_ood,
            spaces: ctx.spaces,
            estimator_params: ctx.estimator_params,
            warnings,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One-line summary, e.g. `gmm k=5: AUROC 99.10 ± 0.20, FPR95 1.00 ± 0.50`.
    pub fn summary_line(&self) -> String {
        let k = self.k.map(|k| format!(" k={k}")).unwrap_or_default();
        format!(
            "{}{}: AUROC {}, FPR95 {} ({} seeds, {} ID / {} OOD)",
            self.estimator,
            k,
            self.auroc.percent(),
            self.fpr95.percent(),
            self.seeds.len(),
            self.n_id,
            self.n_ood
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut wins = 0.0;
        for o in ood {
            for i in id {
                wins += if o > i {
                    1.0
                } else if o == i {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (id.len() * ood.len()) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.7], &[0.5, 0.9]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr95(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        let id: Vec<f64> = (1..=10).map(f64::from).collect();
        let mut ood = vec![0.5, 5.5];
        ood.extend((0..18).map(|i| 6.0 + i as f64));
        assert_eq!(fpr95(&id, &ood).unwrap(), 0.5);
        assert_eq!(fpr95(&[1.0; 7], &[1.0; 5]).unwrap(), 1.0);
        assert!(fpr95(&[1.0], &[]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate_seeds(&[SeedRun { seed: 0, auroc: 0.9, fpr95: 0.1 }]).unwrap();
        assert_eq!((one.auroc.mean, one.auroc.std), (0.9, 0.0));
        let runs = [
            SeedRun { seed: 3, auroc: 1.0, fpr95: 0.0 },
            SeedRun { seed: 1, auroc: 0.8, fpr95: 0.2 },
        ];
        let two = aggregate_seeds(&runs).unwrap();
        assert!((two.auroc.mean - 0.9).abs() < 1e-15);
        assert!((two.auroc.std - 0.141_421_356_237_309_5).abs() < 1e-12);
        assert_eq!(two.seeds, vec![1, 3]);
        let rev: Vec<SeedRun> = runs.iter().rev().copied().collect();
        assert_eq!(aggregate_seeds(&rev).unwrap(), two);
        assert!(aggregate_seeds(&[]).is_err());
        assert_eq!(two.auroc.percent(), "90.00 ± 14.14");
    }

    #[test]
    fn report_json_has_schema_keys() {
        let report = EvaluationReport::from_runs(
            ReportContext {
                estimator: "gmm".into(),
                k: Some(5),
                ..Default::default()
            },
            &[SeedRun { seed: 0, auroc: 0.9, fpr95: 0.1 }],
            10,
            5,
            vec![],
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in [
            "estimator",
            "k",
            "radius_source",
            "normalization",
            "seeds",
            "auroc",
            "fpr95",
            "n_id",
            "n_ood",
            "spaces",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["auroc"]["per_seed"][0], 0.9);
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_count(
            id in proptest::collection::vec(0u8..12, 1..40),
            ood in proptest::collection::vec(0u8..12, 1..40),
        ) {
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            let a = auroc(&id, &ood).unwrap();
            prop_assert!((a - brute_auroc(&id, &ood)).abs() < 1e-12);
            prop_assert!((auroc(&ood, &id).unwrap() - (1.0 - a)).abs() < 1e-12);
            let cubed = |v: &Vec<f64>| v.iter().map(|x| x * x * x + 1.0).collect::<Vec<_>>();
            prop_assert!((auroc(&cubed(&id), &cubed(&ood)).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn fpr_is_monotone_in_target(
            id in proptest::collection::vec(-5.0f64..5.0, 1..30),
            ood in proptest::collection::vec(-5.0f64..5.0, 1..30),
            lo in 0.0f64..1.0,
            hi in 0.0f64..1.0,
        ) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let f_lo = fpr_at_tpr(&id, &ood, lo).unwrap();
            let f_hi = fpr_at_tpr(&id, &ood, hi).unwrap();
            prop_assert!(f_lo <= f_hi);
            prop_assert!((0.0..=1.0).contains(&f_lo));
        }
    }
}

//! Per-point precision, recall, density and coverage.
//!
//! For a test point `x` against reference points `r_1..r_m`, with `NND_k(p)`
//! the distance from `p` to its k-th nearest neighbor:
//!
//! | metric    | value                                                        |
//! |-----------|--------------------------------------------------------------|
//! | precision | `1[x ∈ ∪_i B(r_i, NND_k(r_i))]`                              |
//! | recall    | `#{i : d(x, r_i) ≤ ρ(x)} / m`                                 |
//! | density   | `#{i : d(x, r_i) ≤ NND_k(r_i)} / k` (or `/ (k·m)`)            |
//! | coverage  | `1[min_i d(x, r_i) < ρ(x)]`                                   |
//!
//! Balls are closed. Coverage uses a strict comparison. `ρ(x)` is the test
//! point's own k-NN radius, taken either within the test set (self excluded)
//! or against the reference set; see [`RadiusSource`].

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;
use crate::neighborhood::{
    check_dims, knn_radii, kth_smallest, map_query_rows, NeighborhoodProfile,
};

/// Where a test point's own k-NN radius (used by recall and coverage) comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSource {
    /// k-th nearest neighbor among the other test points.
    #[default]
    WithinTestSet,
    /// k-th nearest neighbor among the reference points.
    FromReferenceSet,
}

impl RadiusSource {
    pub fn as_str(self) -> &'static str {
        match self {
            RadiusSource::WithinTestSet => "within_test_set",
            RadiusSource::FromReferenceSet => "from_reference_set",
        }
    }
}

impl std::str::FromStr for RadiusSource {
    type Err = ForteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "within_test_set" | "within_test" | "test" => Ok(RadiusSource::WithinTestSet),
            "from_reference_set" | "from_reference" | "reference" => {
                Ok(RadiusSource::FromReferenceSet)
            }
            other => Err(ForteError::param(format!(
                "unknown radius source {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityNormalization {
    /// Divide the containment count by `k`; ID points average about 1.
    #[default]
    OneOverK,
    /// Divide by `k·m`.
    OneOverKm,
}

impl DensityNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityNormalization::OneOverK => "one_over_k",
            DensityNormalization::OneOverKm => "one_over_km",
        }
    }

    fn divisor(self, k: usize, m: usize) -> f64 {
        match self {
            DensityNormalization::OneOverK => k as f64,
            DensityNormalization::OneOverKm => (k * m) as f64,
        }
    }
}

impl std::str::FromStr for DensityNormalization {
    type Err = ForteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "one_over_k" | "k" => Ok(DensityNormalization::OneOverK),
            "one_over_km" | "km" => Ok(DensityNormalization::OneOverKm),
            other => Err(ForteError::param(format!(
                "unknown density normalization {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrdcConfig {
    pub k: usize,
    pub radius_source: RadiusSource,
    pub density_normalization: DensityNormalization,
}

impl Default for PrdcConfig {
    fn default() -> Self {
        PrdcConfig {
            k: 5,
            radius_source: RadiusSource::WithinTestSet,
            density_normalization: DensityNormalization::OneOverK,
        }
    }
}

impl PrdcConfig {
    pub fn with_k(k: usize) -> Self {
        PrdcConfig {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(ForteError::InvalidK {
                k: 0,
                reason: "k must be at least 1".into(),
            });
        }
        Ok(())
    }
}

pub const METRIC_NAMES: [&str; 4] = ["precision", "recall", "density", "coverage"];

/// The four per-point statistics of one test set against one reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrdcColumns {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub density: Vec<f64>,
    pub coverage: Vec<f64>,
}

impl PrdcColumns {
    pub fn len(&self) -> usize {
        self.precision.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precision.is_empty()
    }

    pub fn columns(&self) -> [&[f64]; 4] {
        [&self.precision, &self.recall, &self.density, &self.coverage]
    }

    pub fn into_matrix(self) -> FeatureMatrix {
        FeatureMatrix::from_columns(&[self.precision, self.recall, self.density, self.coverage])
            .expect("columns have equal length")
    }
}

fn reference_radii(refs: &EmbeddingMatrix, k: usize) -> Result<NeighborhoodProfile> {
    if k == 0 || k >= refs.n() {
        return Err(ForteError::InvalidK {
            k,
            reason: format!(
                "reference radii need k <= m - 1, but the reference set has m = {} points",
                refs.n()
            ),
        });
    }
    knn_radii(refs, k)
}

/// Each test point's own radius, or `None` when it is taken from the
/// reference distances during the main pass.
fn test_radii(
    test: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    k: usize,
    source: RadiusSource,
) -> Result<Option<Vec<f64>>> {
    match source {
        RadiusSource::WithinTestSet => {
            if k == 0 || test.n() <= k {
                return Err(ForteError::InvalidK {
                    k,
                    reason: format!(
                        "within-test-set radii need more than k test points, got {}",
                        test.n()
                    ),
                });
            }
            Ok(Some(knn_radii(test, k)?.radii().to_vec()))
        }
        RadiusSource::FromReferenceSet => {
            if k == 0 || refs.n() < k {
                return Err(ForteError::InvalidK {
                    k,
                    reason: format!(
                        "reference-set radii need at least k reference points, got {}",
                        refs.n()
                    ),
                });
            }
            Ok(None)
        }
    }
}

/// Binary indicator: the test point lies in the union of reference balls.
pub fn precision_pp(test: &EmbeddingMatrix, refs: &EmbeddingMatrix, k: usize) -> Result<Vec<f64>> {
    check_dims(test, refs)?;
    let radii = reference_radii(refs, k)?;
    let r = radii.radii();
    Ok(map_query_rows(test, refs, |_, d| {
        indicator(d.iter().zip(r).any(|(di, ri)| di <= ri))
    }))
}

/// Fraction of reference points inside the test point's own k-NN ball.
pub fn recall_pp(
    test: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    k: usize,
    source: RadiusSource,
) -> Result<Vec<f64>> {
    check_dims(test, refs)?;
    let own = test_radii(test, refs, k, source)?;
    let m = refs.n() as f64;
    Ok(map_query_rows(test, refs, |i, d| {
        let rho = own_radius(own.as_deref(), i, d, k);
        d.iter().filter(|&&di| di <= rho).count() as f64 / m
    }))
}

/// Number of reference balls containing the test point, scaled per `norm`.
pub fn density_pp(
    test: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    k: usize,
    norm: DensityNormalization,
) -> Result<Vec<f64>> {
    check_dims(test, refs)?;
    let radii = reference_radii(refs, k)?;
    let divisor = norm.divisor(k, refs.n());
    let r = radii.radii();
    Ok(map_query_rows(test, refs, |_, d| {
        d.iter().zip(r).filter(|(di, ri)| di <= ri).count() as f64 / divisor
    }))
}

/// Binary indicator: the nearest reference is strictly closer than the test
/// point's own k-NN radius.
pub fn coverage_pp(
    test: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    k: usize,
    source: RadiusSource,
) -> Result<Vec<f64>> {
    check_dims(test, refs)?;
    let own = test_radii(test, refs, k, source)?;
    Ok(map_query_rows(test, refs, |i, d| {
        let nearest = d.iter().copied().fold(f64::INFINITY, f64::min);
        let rho = own_radius(own.as_deref(), i, d, k);
        indicator(nearest < rho)
    }))
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Reorders `d` when the radius has to be selected from it.
#[inline]
fn own_radius(own: Option<&[f64]>, i: usize, d: &mut [f64], k: usize) -> f64 {
    match own {
        Some(r) => r[i],
        None => kth_smallest(d, k),
    }
}

/// All four statistics in a single pass over the test × reference distances.
pub fn prdc_columns(
    test: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    cfg: &PrdcConfig,
) -> Result<PrdcColumns> {
    cfg.validate()?;
    check_dims(test, refs)?;
    let k = cfg.k;
    let ref_radii = reference_radii(refs, k)?;
    let own = test_radii(test, refs, k, cfg.radius_source)?;
    let r = ref_radii.radii();
    let m = refs.n() as f64;
    let divisor = cfg.density_normalization.divisor(k, refs.n());

    let rows = map_query_rows(test, refs, |i, d| {
        let mut contained = 0usize;
        let mut nearest = f64::INFINITY;
        for (&di, &ri) in d.iter().zip(r) {
            contained += usize::from(di <= ri);
            nearest = nearest.min(di);
        }
        // order-sensitive work is done; selecting may now reorder d
        let rho = own_radius(own.as_deref(), i, d, k);
        let inside = d.iter().filter(|&&di| di <= rho).count();
        [
            indicator(contained > 0),
            inside as f64 / m,
            contained as f64 / divisor,
            indicator(nearest < rho),
        ]
    });

    let mut out = PrdcColumns {
        precision: Vec::with_capacity(rows.len()),
        recall: Vec::with_capacity(rows.len()),
        density: Vec::with_capacity(rows.len()),
        coverage: Vec::with_capacity(rows.len()),
    };
    for [p, rc, dn, c] in rows {
        out.precision.push(p);
        out.recall.push(rc);
        out.density.push(dn);
        out.coverage.push(c);
    }
    Ok(out)
}

/// Per-point feature vectors: `[precision, recall, density, coverage]` for
/// each representation space, concatenated in space order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrdcFeatureMatrix {
    features: FeatureMatrix,
    space_labels: Vec<String>,
}

impl PrdcFeatureMatrix {
    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn into_features(self) -> FeatureMatrix {
        self.features
    }

    pub fn space_labels(&self) -> &[String] {
        &self.space_labels
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    /// Column names of the form `<space>.<metric>`.
    pub fn column_labels(&self) -> Vec<String> {
        self.space_labels
            .iter()
            .flat_map(|s| METRIC_NAMES.iter().map(move |m| format!("{s}.{m}")))
            .collect()
    }
}

pub fn default_space_labels(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("space{i}")).collect()
}

/// Computes the PRDC features of each test space against the matching
/// reference space and concatenates them horizontally.
pub fn assemble_features(
    test_spaces: &[&EmbeddingMatrix],
    ref_spaces: &[&EmbeddingMatrix],
    cfg: &PrdcConfig,
) -> Result<PrdcFeatureMatrix> {
    assemble_labeled(
        test_spaces,
        ref_spaces,
        &default_space_labels(test_spaces.len()),
        cfg,
    )
}

pub fn assemble_labeled(
    test_spaces: &[&EmbeddingMatrix],
    ref_spaces: &[&EmbeddingMatrix],
    labels: &[String],
    cfg: &PrdcConfig,
) -> Result<PrdcFeatureMatrix> {
    if test_spaces.is_empty() {
        return Err(ForteError::Empty("no representation spaces"));
    }
    if test_spaces.len() != ref_spaces.len() || labels.len() != test_spaces.len() {
        return Err(ForteError::param(format!(
            "space lists differ in length: {} test, {} reference, {} labels",
            test_spaces.len(),
            ref_spaces.len(),
            labels.len()
        )));
    }
    let n = test_spaces[0].n();
    let m = ref_spaces[0].n();
    for (t, r) in test_spaces.iter().zip(ref_spaces) {
        if t.n() != n {
            return Err(ForteError::DimensionMismatch {
                expected: n,
                found: t.n(),
            });
        }
        if r.n() != m {
            return Err(ForteError::DimensionMismatch {
                expected: m,
                found: r.n(),
            });
        }
    }
    let blocks: Vec<FeatureMatrix> = test_spaces
        .iter()
        .zip(ref_spaces)
        .map(|(t, r)| prdc_columns(t, r, cfg).map(PrdcColumns::into_matrix))
        .collect::<Result<_>>()?;
    let refs: Vec<&FeatureMatrix> = blocks.iter().collect();
    Ok(PrdcFeatureMatrix {
        features: FeatureMatrix::hstack(&refs)?,
        space_labels: labels.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SeededRng;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::Rng;

    fn line(xs: &[f32]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&xs.iter().map(|&x| vec![x, 0.0]).collect::<Vec<_>>()).unwrap()
    }

    fn refs3() -> EmbeddingMatrix {
        line(&[0.0, 1.0, 3.0])
    }

    /// Points on a 1/8 grid so that exact isometries stay exact in f32.
    fn grid(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = SeededRng::new(seed);
        let data = (0..n * d)
            .map(|_| rng.random_range(-40i32..40) as f32 / 8.0)
            .collect();
        EmbeddingMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn precision_examples() {
        let p = precision_pp(&line(&[0.5, 5.5, 3.0]), &refs3(), 1).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 1.0]);
        assert!(precision_pp(&line(&[0.5]), &refs3(), 3).is_err());
    }

    #[test]
    fn recall_examples() {
        let test = line(&[0.5, 2.0]);
        let r = recall_pp(&test, &refs3(), 1, RadiusSource::WithinTestSet).unwrap();
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-15);
        let one = line(&[4.0]);
        let r = recall_pp(&one, &one, 1, RadiusSource::FromReferenceSet).unwrap();
        assert_eq!(r, vec![1.0]);
        assert!(recall_pp(&one, &refs3(), 1, RadiusSource::WithinTestSet).is_err());
    }

    #[test]
    fn density_examples() {
        let q = line(&[0.5]);
        assert_eq!(
            density_pp(&q, &refs3(), 1, DensityNormalization::OneOverK).unwrap(),
            vec![2.0]
        );
        let km = density_pp(&q, &refs3(), 1, DensityNormalization::OneOverKm).unwrap();
        assert!((km[0] - 2.0 / 3.0).abs() < 1e-15);
        let far = line(&[1.0e6]);
        assert_eq!(
            density_pp(&far, &refs3(), 1, DensityNormalization::OneOverK).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn coverage_examples() {
        // nearest ref 2.5 away, own radius 2.5: strict comparison fails
        let c = coverage_pp(&line(&[5.5]), &refs3(), 1, RadiusSource::FromReferenceSet).unwrap();
        assert_eq!(c, vec![0.0]);
        let c = coverage_pp(&line(&[0.5, 2.0]), &refs3(), 1, RadiusSource::WithinTestSet).unwrap();
        assert_eq!(c[0], 1.0);
    }

    #[test]
    fn columns_agree_with_single_ops() {
        let test = grid(40, 3, 1);
        let refs = grid(50, 3, 2);
        for source in [RadiusSource::WithinTestSet, RadiusSource::FromReferenceSet] {
            let cfg = PrdcConfig {
                k: 3,
                radius_source: source,
                density_normalization: DensityNormalization::OneOverKm,
            };
            let all = prdc_columns(&test, &refs, &cfg).unwrap();
            assert_eq!(all.precision, precision_pp(&test, &refs, 3).unwrap());
            assert_eq!(all.recall, recall_pp(&test, &refs, 3, source).unwrap());
            assert_eq!(
                all.density,
                density_pp(&test, &refs, 3, DensityNormalization::OneOverKm).unwrap()
            );
            assert_eq!(all.coverage, coverage_pp(&test, &refs, 3, source).unwrap());
        }
    }

    #[test]
    fn assemble_concatenates_spaces() {
        let t0 = grid(30, 2, 3);
        let r0 = grid(30, 2, 4);
        let t1 = grid(30, 5, 5);
        let r1 = grid(30, 5, 6);
        let cfg = PrdcConfig::with_k(3);
        let one = assemble_features(&[&t0], &[&r0], &cfg).unwrap();
        assert_eq!(one.features().cols(), 4);
        let three = assemble_features(&[&t0, &t1, &t0], &[&r0, &r1, &r0], &cfg).unwrap();
        assert_eq!(three.features().cols(), 12);
        for i in 0..30 {
            let row = three.features().row(i);
            assert_eq!(&row[0..4], one.features().row(i));
            assert_eq!(&row[8..12], &row[0..4]);
        }
        assert_eq!(three.column_labels()[5], "space1.recall");
        assert!(assemble_features(&[&t0], &[&r0, &r1], &cfg).is_err());
        let short = grid(10, 2, 9);
        assert!(assemble_features(&[&t0, &short], &[&r0, &r0], &cfg).is_err());
    }

    #[test]
    fn self_evaluation_has_full_precision() {
        let x = grid(50, 3, 11);
        let cols = prdc_columns(&x, &x, &PrdcConfig::with_k(4)).unwrap();
        assert!(cols.precision.iter().all(|&p| p == 1.0));
    }

    /// Exact isometry on the grid: swap two axes, flip a sign, shift by integers.
    fn isometry(m: &EmbeddingMatrix, shift: f32) -> EmbeddingMatrix {
        let rows: Vec<Vec<f32>> = m
            .iter_rows()
            .map(|r| {
                let mut v = r.to_vec();
                v.swap(0, 1);
                v[0] = -v[0];
                v.iter_mut().for_each(|x| *x += shift);
                v
            })
            .collect();
        EmbeddingMatrix::from_rows(&rows).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn isometry_and_scale_invariance(seed in any::<u64>(), k in 1usize..6) {
            let test = grid(30, 3, seed);
            let refs = grid(40, 3, seed.wrapping_add(1));
            for source in [RadiusSource::WithinTestSet, RadiusSource::FromReferenceSet] {
                let cfg = PrdcConfig { k, radius_source: source, density_normalization: DensityNormalization::OneOverK };
                let base = prdc_columns(&test, &refs, &cfg).unwrap();
                let moved = prdc_columns(&isometry(&test, 3.0), &isometry(&refs, 3.0), &cfg).unwrap();
                prop_assert_eq!(&base, &moved);
                let scaled = prdc_columns(&test.map(|v| v * 4.0).unwrap(), &refs.map(|v| v * 4.0).unwrap(), &cfg).unwrap();
                prop_assert_eq!(&base, &scaled);
            }
        }

        #[test]
        fn value_ranges(seed in any::<u64>(), k in 1usize..8) {
            let test = grid(25, 2, seed);
            let refs = grid(35, 2, seed ^ 7);
            let cols = prdc_columns(&test, &refs, &PrdcConfig::with_k(k)).unwrap();
            for i in 0..cols.len() {
                prop_assert!(cols.precision[i] == 0.0 || cols.precision[i] == 1.0);
                prop_assert!(cols.coverage[i] == 0.0 || cols.coverage[i] == 1.0);
                prop_assert!((0.0..=1.0).contains(&cols.recall[i]));
                prop_assert!(cols.density[i] >= 0.0);
            }
        }
    }
}

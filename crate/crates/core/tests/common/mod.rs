//! Literal-definition oracles and random instances shared by the
//! integration tests. Everything here is deliberately naive: full sorts,
//! nested loops, no shared code with the library beyond data types.

#![allow(dead_code)]

use std::f64::consts::PI;

use forte::density::{BandwidthRule, GmmModel, GmmParams, KdeModel};
use forte::evaluation::auroc;
use forte::prdc::{prdc_columns, DensityNormalization, PrdcConfig, RadiusSource};
use forte::{EmbeddingMatrix, FeatureMatrix, SeededRng};
use rand::Rng;

pub fn dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        let t = a[j] as f64 - b[j] as f64;
        s += t * t;
    }
    s.sqrt()
}

/// Distance to the k-th nearest point of `set`, skipping index `skip`.
pub fn kth_distance(p: &[f32], set: &EmbeddingMatrix, k: usize, skip: Option<usize>) -> f64 {
    let mut d = Vec::new();
    for j in 0..set.n() {
        if Some(j) != skip {
            d.push(dist(p, set.row(j)));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d[k - 1]
}

/// Per-point precision, recall, density, coverage straight from the
/// definitions.
pub fn prdc_oracle(test: &EmbeddingMatrix, refs: &EmbeddingMatrix, cfg: &PrdcConfig) -> [Vec<f64>; 4] {
    let k = cfg.k;
    let m = refs.n();
    let ref_r: Vec<f64> = (0..m).map(|j| kth_distance(refs.row(j), refs, k, Some(j))).collect();
    let mut out = [vec![], vec![], vec![], vec![]];
    for i in 0..test.n() {
        let x = test.row(i);
        let rho = match cfg.radius_source {
            RadiusSource::WithinTestSet => kth_distance(x, test, k, Some(i)),
            RadiusSource::FromReferenceSet => kth_distance(x, refs, k, None),
        };
        let mut balls = 0;
        let mut inside = 0;
        let mut nearest = f64::INFINITY;
        for j in 0..m {
            let d = dist(x, refs.row(j));
            if d <= ref_r[j] {
                balls += 1;
            }
            if d <= rho {
                inside += 1;
            }
            if d < nearest {
                nearest = d;
            }
        }
        let density = match cfg.density_normalization {
            DensityNormalization::OneOverK => balls as f64 / k as f64,
            DensityNormalization::OneOverKm => balls as f64 / (k * m) as f64,
        };
        out[0].push(if balls > 0 { 1.0 } else { 0.0 });
        out[1].push(inside as f64 / m as f64);
        out[2].push(density);
        out[3].push(if nearest < rho { 1.0 } else { 0.0 });
    }
    out
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counted as one half.
pub fn auroc_oracle(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood {
        for &i in id {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Local outlier factor from the textbook definitions.
pub fn lof_oracle(refs: &EmbeddingMatrix, query: &EmbeddingMatrix, k: usize) -> Vec<f64> {
    let neighbors = |p: &[f32], skip: Option<usize>| -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = (0..refs.n())
            .filter(|&j| Some(j) != skip)
            .map(|j| (dist(p, refs.row(j)), j))
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        d.truncate(k);
        d
    };
    let k_distance: Vec<f64> = (0..refs.n()).map(|j| neighbors(refs.row(j), Some(j))[k - 1].0).collect();
    let lrd = |nb: &[(f64, usize)]| {
        let mut reach = 0.0;
        for &(d, o) in nb {
            reach += if d > k_distance[o] { d } else { k_distance[o] };
        }
        k as f64 / reach
    };
    let ref_lrd: Vec<f64> = (0..refs.n()).map(|j| lrd(&neighbors(refs.row(j), Some(j)))).collect();
    (0..query.n())
        .map(|i| {
            let nb = neighbors(query.row(i), None);
            let own = lrd(&nb);
            let mut s = 0.0;
            for &(_, o) in &nb {
                s += ref_lrd[o] / own;
            }
            s / k as f64
        })
        .collect()
}

/// Gaussian KDE density, summed directly.
pub fn kde_density_oracle(points: &FeatureMatrix, h: f64, q: &[f64]) -> f64 {
    let f = points.cols() as f64;
    let norm = (2.0 * PI * h * h).powf(-f / 2.0);
    let mut s = 0.0;
    for p in points.iter_rows() {
        let mut sq = 0.0;
        for j in 0..q.len() {
            sq += (p[j] - q[j]) * (p[j] - q[j]);
        }
        s += norm * (-sq / (2.0 * h * h)).exp();
    }
    s / points.rows() as f64
}

/// Mixture density from the fitted parameters, product of 1-D normals.
pub fn gmm_density_oracle(m: &GmmModel, q: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in 0..m.n_components() {
        let mut p = m.weights[c];
        for j in 0..q.len() {
            let v = m.variance(c)[j];
            let t = q[j] - m.mean(c)[j];
            p *= (-t * t / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        }
        s += p;
    }
    s
}

pub fn gaussian_embedding(rng: &mut SeededRng, n: usize, d: usize, mean: f64, round: bool) -> EmbeddingMatrix {
    let data = (0..n * d)
        .map(|_| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            let v = mean + z;
            // coarse grids make exact distance ties common
            if round {
                (v * 2.0).round() as f32 / 2.0
            } else {
                v as f32
            }
        })
        .collect();
    EmbeddingMatrix::new(n, d, data).unwrap()
}

pub fn gaussian_features(rng: &mut SeededRng, n: usize, f: usize, spread: f64) -> FeatureMatrix {
    let data = (0..n * f)
        .map(|_| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            spread * z
        })
        .collect();
    FeatureMatrix::new(n, f, data).unwrap()
}

/// Relative agreement of two positive reals.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Outcome of one batch of oracle comparisons.
#[derive(Debug, Default)]
pub struct OracleTally {
    pub instances: usize,
    pub comparisons: usize,
    pub mismatches: Vec<String>,
}

impl OracleTally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.comparisons += 1;
        if !ok && self.mismatches.len() < 20 {
            self.mismatches.push(what());
        }
    }
}

pub const ORACLE_INSTANCES: usize = 50;
pub const REAL_TOL: f64 = 1e-9;

/// Per-point statistics on random instances with n, m <= 200 and d <= 8,
/// alternating radius sources and normalizations; half the instances sit
/// on a coarse grid so ties occur.
pub fn prdc_oracle_batch(seed: u64) -> OracleTally {
    let mut rng = SeededRng::new(seed);
    let mut t = OracleTally::default();
    for inst in 0..ORACLE_INSTANCES {
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=10);
        let n = rng.random_range(k + 1..=200);
        let m = rng.random_range(k + 1..=200);
        let round = inst % 2 == 1;
        let shift = rng.random_range(0.0..3.0);
        let refs = gaussian_embedding(&mut rng, m, d, 0.0, round);
        let test = gaussian_embedding(&mut rng, n, d, shift, round);
        let cfg = PrdcConfig {
            k,
            radius_source: if inst % 4 < 2 {
                RadiusSource::WithinTestSet
            } else {
                RadiusSource::FromReferenceSet
            },
            density_normalization: if inst % 3 == 0 {
                DensityNormalization::OneOverKm
            } else {
                DensityNormalization::OneOverK
            },
        };
        let got = prdc_columns(&test, &refs, &cfg).unwrap();
        let want = prdc_oracle(&test, &refs, &cfg);
        for (c, (g, w)) in got.columns().iter().zip(&want).enumerate() {
            for i in 0..n {
                t.check(g[i] == w[i], || format!("instance {inst} metric {c} row {i}: {} vs {}", g[i], w[i]));
            }
        }
        t.instances += 1;
    }
    t
}

pub fn auroc_oracle_batch(seed: u64) -> OracleTally {
    let mut rng = SeededRng::new(seed);
    let mut t = OracleTally::default();
    for inst in 0..ORACLE_INSTANCES {
        let n_id = rng.random_range(1..=200);
        let n_ood = rng.random_range(1..=200);
        // small integer range on odd instances forces ties
        let top = if inst % 2 == 1 { 5 } else { 1_000_000 };
        let id: Vec<f64> = (0..n_id).map(|_| rng.random_range(0..top) as f64).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| rng.random_range(0..top) as f64 + 0.3 * inst as f64 / 50.0).collect();
        let got = auroc(&id, &ood).unwrap();
        let want = auroc_oracle(&id, &ood);
        t.check((got - want).abs() <= REAL_TOL * want.abs().max(1e-300), || {
            format!("instance {inst}: {got} vs {want}")
        });
        t.instances += 1;
    }
    t
}

pub fn lof_oracle_batch(seed: u64) -> OracleTally {
    let mut rng = SeededRng::new(seed);
    let mut t = OracleTally::default();
    for inst in 0..ORACLE_INSTANCES {
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=20);
        let m = rng.random_range(k + 2..=200);
        let n = rng.random_range(1..=200);
        let refs = gaussian_embedding(&mut rng, m, d, 0.0, false);
        let query = gaussian_embedding(&mut rng, n, d, 1.0, false);
        let got = forte::baselines::lof_scores(&refs, &query, k).unwrap();
        let want = lof_oracle(&refs, &query, k);
        for i in 0..n {
            t.check(rel_close(got[i], want[i], REAL_TOL), || format!("instance {inst} row {i}: {} vs {}", got[i], want[i]));
        }
        t.instances += 1;
    }
    t
}

/// KDE and GMM log densities against directly summed densities. Equal logs
/// to 1e-9 absolute means equal densities to 1e-9 relative.
pub fn density_oracle_batch(seed: u64) -> OracleTally {
    let mut rng = SeededRng::new(seed);
    let mut t = OracleTally::default();
    for inst in 0..ORACLE_INSTANCES {
        let f = rng.random_range(1..=8);
        let n = rng.random_range(10..=200);
        let x = gaussian_features(&mut rng, n, f, 1.0);
        let q = gaussian_features(&mut rng, 20, f, 1.5);
        let rule = match inst % 3 {
            0 => BandwidthRule::Scott,
            1 => BandwidthRule::Silverman,
            _ => BandwidthRule::Fixed(rng.random_range(0.3..2.0)),
        };
        let kde: KdeModel = forte::density::kde_fit(&x, rule).unwrap();
        let got = kde.log_density(&q).unwrap();
        for (i, row) in q.iter_rows().enumerate() {
            let want = kde_density_oracle(&x, kde.bandwidth, row).ln();
            t.check((got[i] - want).abs() <= REAL_TOL, || format!("kde instance {inst} row {i}: {} vs {want}", got[i]));
        }
        let params = GmmParams {
            n_components: rng.random_range(1..=4),
            ..Default::default()
        };
        let gmm = forte::density::gmm_fit(&x, &params, inst as u64).unwrap();
        let got = gmm.log_density(&q).unwrap();
        for (i, row) in q.iter_rows().enumerate() {
            let want = gmm_density_oracle(&gmm, row).ln();
            t.check((got[i] - want).abs() <= REAL_TOL, || format!("gmm instance {inst} row {i}: {} vs {want}", got[i]));
        }
        t.instances += 1;
    }
    t
}

//! Diagonal-covariance Gaussian mixture fitted by expectation maximization.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::SeededRng;
use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;
use crate::par;

use super::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub n_components: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub reg_floor: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            n_components: 4,
            tol: 1e-6,
            max_iter: 500,
            reg_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub params: GmmParams,
    pub seed: u64,
    pub weights: Vec<f64>,
    /// `n_components × n_features`, row-major.
    pub means: Vec<f64>,
    /// Diagonal variances, same layout as `means`.
    pub variances: Vec<f64>,
    pub n_features: usize,
    pub n_iter: usize,
    pub converged: bool,
    /// Mean per-point log-likelihood of the fitting data under the final parameters.
    pub log_likelihood: f64,
    /// Mean log-likelihood after initialization and after every M-step.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.n_features..(c + 1) * self.n_features]
    }

    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.n_features..(c + 1) * self.n_features]
    }

    /// `ln w_c + ln N(x; μ_c, Σ_c)` for every component.
    fn component_log_terms(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.weights[c].ln() + diag_log_normal(x, self.mean(c), self.variance(c));
        }
    }

    pub fn log_density_row(&self, x: &[f64]) -> f64 {
        let mut terms = vec![0.0; self.n_components()];
        self.component_log_terms(x, &mut terms);
        log_sum_exp(&terms)
    }

    pub fn log_density(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(ForteError::DimensionMismatch {
                expected: self.n_features,
                found: x.cols(),
            });
        }
        Ok(par::map_range(x.rows(), |i| self.log_density_row(x.row(i))))
    }
}

pub(crate) fn diag_log_normal(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
        let t = xi - mi;
        acc += (2.0 * PI * vi).ln() + t * t / vi;
    }
    -0.5 * acc
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn kmeans_pp(x: &FeatureMatrix, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let n = x.rows();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq(x.row(i), x.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining points coincide with a center
            rng.random_range(0..n)
        };
        centers.push(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq(x.row(i), x.row(pick)));
        }
    }
    centers
}

/// E-step: fills `resp` (n × K) with posterior responsibilities and returns
/// the mean log-likelihood.
fn e_step(model: &GmmModel, x: &FeatureMatrix, resp: &mut [f64]) -> f64 {
    let k = model.n_components();
    let mut total = 0.0;
    for i in 0..x.rows() {
        let r = &mut resp[i * k..(i + 1) * k];
        model.component_log_terms(x.row(i), r);
        let lse = log_sum_exp(r);
        total += lse;
        r.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    total / x.rows() as f64
}

fn m_step(model: &mut GmmModel, x: &FeatureMatrix, resp: &[f64]) {
    let k = model.n_components();
    let f = model.n_features;
    let n = x.rows() as f64;
    for c in 0..k {
        let nk: f64 = (0..x.rows()).map(|i| resp[i * k + c]).sum();
        model.weights[c] = nk / n;
        if nk <= 1e-12 * n {
            // an empty component keeps its location; its weight carries it out
            continue;
        }
        let mut mean = vec![0.0; f];
        for i in 0..x.rows() {
            let w = resp[i * k + c];
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += w * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; f];
        for i in 0..x.rows() {
            let w = resp[i * k + c];
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += w * (v - m) * (v - m);
            }
        }
        // clamping is the exact maximizer under the variance floor
        var.iter_mut()
            .for_each(|s| *s = (*s / nk).max(model.params.reg_floor));
        model.means[c * f..(c + 1) * f].copy_from_slice(&mean);
        model.variances[c * f..(c + 1) * f].copy_from_slice(&var);
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

pub fn gmm_fit(x: &FeatureMatrix, params: &GmmParams, seed: u64) -> Result<GmmModel> {
    let k = params.n_components;
    if k == 0 {
        return Err(ForteError::param("n_components must be at least 1"));
    }
    if x.rows() < k {
        return Err(ForteError::param(format!(
            "{} points cannot support {k} mixture components",
            x.rows()
        )));
    }
    if !x.all_finite() {
        return Err(ForteError::Degenerate(
            "non-finite value in GMM input".into(),
        ));
    }
    if !(params.reg_floor > 0.0) || !(params.tol >= 0.0) {
        return Err(ForteError::param("reg_floor must be > 0 and tol >= 0"));
    }
    let f = x.cols();
    let n = x.rows() as f64;

    let mut global_mean = vec![0.0; f];
    for row in x.iter_rows() {
        global_mean
            .iter_mut()
            .zip(row)
            .for_each(|(m, v)| *m += v / n);
    }
    let mut global_var = vec![0.0; f];
    for row in x.iter_rows() {
        for ((s, v), m) in global_var.iter_mut().zip(row).zip(&global_mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    global_var
        .iter_mut()
        .for_each(|v| *v = v.max(params.reg_floor));

    let mut rng = SeededRng::new(seed);
    let centers = kmeans_pp(x, k, &mut rng);
    let mut means = Vec::with_capacity(k * f);
    let mut variances = Vec::with_capacity(k * f);
    for &c in &centers {
        means.extend_from_slice(x.row(c));
        variances.extend_from_slice(&global_var);
    }
    let mut model = GmmModel {
        params: *params,
        seed,
        weights: vec![1.0 / k as f64; k],
        means,
        variances,
        n_features: f,
        n_iter: 0,
        converged: false,
        log_likelihood: f64::NEG_INFINITY,
        history: Vec::new(),
    };

    let mut resp = vec![0.0; x.rows() * k];
    let mut ll = e_step(&model, x, &mut resp);
    model.history.push(ll);
    for iter in 1..=params.max_iter {
        m_step(&mut model, x, &resp);
        let next = e_step(&model, x, &mut resp);
        model.history.push(next);
        model.n_iter = iter;
        let gain = next - ll;
        ll = next;
        if gain < params.tol {
            model.converged = true;
            break;
        }
    }
    model.log_likelihood = ll;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rows(n: usize, f: usize, center: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|_| {
                (0..f)
                    .map(|_| {
                        center + {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn analytic_single_gaussian() {
        let model = GmmModel {
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
        };
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        assert!((model.log_density_row(&[0.0]) + half_ln_2pi).abs() < 1e-12);
        assert!((model.log_density_row(&[1.0]) + half_ln_2pi + 0.5).abs() < 1e-12);
        let lds = model
            .log_density(&FeatureMatrix::from_rows(&[vec![0.0]]).unwrap())
            .unwrap();
        assert!((lds[0] + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn one_component_closed_form() {
        let rows = gaussian_rows(300, 3, 2.0, 5);
        let mut rows = rows;
        rows.iter_mut().for_each(|r| r[2] = 7.0); // constant column
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let params = GmmParams {
            n_components: 1,
            ..Default::default()
        };
        let m = gmm_fit(&x, &params, 1).unwrap();
        for j in 0..3 {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / 300.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 300.0;
            assert!((m.mean(0)[j] - mean).abs() < 1e-12);
            assert!((m.variance(0)[j] - var.max(params.reg_floor)).abs() < 1e-12);
        }
        assert_eq!(m.variance(0)[2], params.reg_floor);
    }

    #[test]
    fn separates_two_clusters() {
        let mut rows = gaussian_rows(200, 2, -10.0, 1);
        rows.extend(gaussian_rows(200, 2, 10.0, 2));
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let params = GmmParams {
            n_components: 2,
            ..Default::default()
        };
        let m = gmm_fit(&x, &params, 3).unwrap();
        let cluster_mean = |lo: usize| -> Vec<f64> {
            (0..2)
                .map(|j| rows[lo..lo + 200].iter().map(|r| r[j]).sum::<f64>() / 200.0)
                .collect()
        };
        let (a, b) = (cluster_mean(0), cluster_mean(200));
        let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(p, q)| (p - q).abs() < 0.5);
        assert!(
            (close(m.mean(0), &a) && close(m.mean(1), &b))
                || (close(m.mean(0), &b) && close(m.mean(1), &a))
        );
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_under_seed() {
        let x = FeatureMatrix::from_rows(&gaussian_rows(120, 4, 0.0, 9)).unwrap();
        let p = GmmParams::default();
        assert_eq!(gmm_fit(&x, &p, 11).unwrap(), gmm_fit(&x, &p, 11).unwrap());
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..5 {
            let mut rows = gaussian_rows(150, 3, 0.0, seed);
            rows.extend(gaussian_rows(50, 3, 4.0, seed + 100));
            let x = FeatureMatrix::from_rows(&rows).unwrap();
            let m = gmm_fit(&x, &GmmParams::default(), seed).unwrap();
            for w in m.history.windows(2) {
                assert!(w[1] - w[0] >= -1e-10, "{:?}", m.history);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(gmm_fit(&x, &GmmParams::default(), 0).is_err());
        let bad = FeatureMatrix::from_rows(&[vec![f64::NAN], vec![1.0]]).unwrap();
        let one = GmmParams {
            n_components: 1,
            ..Default::default()
        };
        assert!(gmm_fit(&bad, &one, 0).is_err());
    }
}

//! Closed-form expectations of the per-point statistics for isotropic
//! Gaussian data, and Monte Carlo harnesses that check them.

pub mod curse;
pub mod simulation;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, SeededRng};
use crate::error::{ForteError, Result};

pub use curse::{curse_experiment, top2_variance_fraction, write_curse_csv, CurseConfig, CurseRow};
pub use simulation::{monte_carlo_verify, SimulationConfig, SimulationReport, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GaussianMean {
    /// The same value in every coordinate.
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Isotropic normal sample `N(mean, sigma² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub n: usize,
    pub d: usize,
    pub mean: GaussianMean,
    pub sigma: f64,
    pub seed: u64,
    /// RNG substream, so several independent sets can share one seed.
    pub stream: u64,
}

impl GaussianSpec {
    pub fn standard(n: usize, d: usize, seed: u64) -> Self {
        GaussianSpec {
            n,
            d,
            mean: GaussianMean::Scalar(0.0),
            sigma: 1.0,
            seed,
            stream: 0,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.mean = GaussianMean::Scalar(shift);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(ForteError::param("Gaussian sample needs n >= 1 and d >= 1"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(ForteError::param(format!("sigma must be positive, got {}", self.sigma)));
        }
        if let GaussianMean::Vector(v) = &self.mean {
            if v.len() != self.d {
                return Err(ForteError::DimensionMismatch {
                    expected: self.d,
                    found: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// Draws `n × d` values row by row: standard normals from the ziggurat
/// sampler of `rand_distr` on `SeededRng::substream(seed, stream)`, scaled,
/// shifted and rounded to f32.
pub fn sample_gaussian(spec: &GaussianSpec) -> Result<EmbeddingMatrix> {
    spec.validate()?;
    let mut rng = SeededRng::substream(spec.seed, spec.stream);
    let mut data = Vec::with_capacity(spec.n * spec.d);
    for _ in 0..spec.n {
        for j in 0..spec.d {
            let mu = match &spec.mean {
                GaussianMean::Scalar(m) => *m,
                GaussianMean::Vector(v) => v[j],
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((mu + spec.sigma * z) as f32);
        }
    }
    EmbeddingMatrix::new(spec.n, spec.d, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    /// The value the proof arrives at.
    pub coverage: f64,
    /// `1 − e^(−k)`, as written in the theorem statement.
    pub coverage_alternate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub precision: f64,
    pub recall: f64,
    /// Approximate: `(1/k)(1 − k/n_train)`.
    pub density: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub k: usize,
    pub n_train: usize,
    pub expected: Expectations,
    pub variances: Variances,
}

fn check_k(k: usize, n_train: usize) -> Result<()> {
    if k == 0 || k >= n_train {
        return Err(ForteError::InvalidK {
            k,
            reason: format!("need 1 <= k < n_train = {n_train}"),
        });
    }
    Ok(())
}

/// Expected per-point values for an in-distribution test point, with
/// distances measured to a reference set of `n_train` points.
pub fn expected_prdc(k: usize, n_train: usize) -> Result<Expectations> {
    check_k(k, n_train)?;
    let miss = (-(k as f64)).exp();
    Ok(Expectations {
        precision: 1.0 - miss,
        recall: k as f64 / n_train as f64,
        density: 1.0,
        coverage: 1.0,
        coverage_alternate: 1.0 - miss,
    })
}

pub fn prdc_variances(k: usize, n_train: usize) -> Result<Variances> {
    check_k(k, n_train)?;
    let kf = k as f64;
    let p = kf / n_train as f64;
    Ok(Variances {
        precision: (-kf).exp() - (-2.0 * kf).exp(),
        recall: p * (1.0 - p) / n_train as f64,
        density: (1.0 / kf) * (1.0 - p),
        coverage: 0.0,
    })
}

pub fn predict(k: usize, n_train: usize) -> Result<TheoryPrediction> {
    Ok(TheoryPrediction {
        k,
        n_train,
        expected: expected_prdc(k, n_train)?,
        variances: prdc_variances(k, n_train)?,
    })
}

/// Mean of the k-th order statistic of `n` standard uniforms,
/// `Beta(k, n − k + 1)`, which is `k / (n + 1)`.
pub fn beta_order_statistic_mean(k: usize, n: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(ForteError::InvalidK {
            k,
            reason: format!("need 1 <= k <= n = {n}"),
        });
    }
    Ok(k as f64 / (n as f64 + 1.0))
}

/// Mean and variance of the squared distance between two independent
/// `N(·, σ² I_D)` points whose means differ by `delta` in norm.
pub fn chi2_distance_moments(sigma: f64, d: usize, delta: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) || d == 0 || !(delta >= 0.0) || !sigma.is_finite() || !delta.is_finite() {
        return Err(ForteError::param(format!(
            "need sigma > 0, D >= 1, delta >= 0; got sigma={sigma}, D={d}, delta={delta}"
        )));
    }
    let s2 = sigma * sigma;
    let df = d as f64;
    let lambda = delta * delta / (2.0 * s2);
    Ok((2.0 * s2 * df + delta * delta, 8.0 * s2 * s2 * df + 16.0 * s2 * s2 * lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn closed_forms() {
        let e = expected_prdc(5, 1000).unwrap();
        assert!((e.precision - 0.993_262).abs() < 1e-6);
        assert_eq!((e.recall, e.density, e.coverage), (0.005, 1.0, 1.0));
        assert!((expected_prdc(3, 1000).unwrap().precision - 0.950_213).abs() < 1e-6);
        assert!(expected_prdc(60, 1000).unwrap().precision > 1.0 - 1e-15);
        assert!(expected_prdc(0, 10).is_err() && expected_prdc(10, 10).is_err());

        assert!((prdc_variances(1, 10).unwrap().precision - 0.232_544).abs() < 1e-6);
        assert!((prdc_variances(10, 1_000_000).unwrap().density - 0.1).abs() < 1e-5);
        assert!((prdc_variances(5, 1000).unwrap().recall - 4.975e-6).abs() < 1e-12);

        assert_eq!(beta_order_statistic_mean(1, 1).unwrap(), 0.5);
        assert_eq!(beta_order_statistic_mean(7, 7).unwrap(), 7.0 / 8.0);
        assert!(beta_order_statistic_mean(2, 1).is_err());

        assert_eq!(chi2_distance_moments(1.0, 10, 0.0).unwrap(), (20.0, 80.0));
        assert_eq!(chi2_distance_moments(1.0, 10, 3.0).unwrap(), (29.0, 152.0));
        assert!(chi2_distance_moments(0.0, 10, 0.0).is_err());
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let spec = GaussianSpec::standard(100_000, 1, 3);
        let x = sample_gaussian(&spec).unwrap();
        let v: Vec<f64> = x.as_slice().iter().map(|&a| f64::from(a)).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02, "{mean} {var}");
        assert_eq!(x, sample_gaussian(&spec).unwrap());
        let shifted = sample_gaussian(&spec.clone().with_shift(3.0)).unwrap();
        let m3 = shifted.as_slice().iter().map(|&a| f64::from(a)).sum::<f64>() / n;
        assert!((m3 - 3.0).abs() < 0.02);
        assert_ne!(x, sample_gaussian(&spec.with_stream(1)).unwrap());
        assert!(sample_gaussian(&GaussianSpec::standard(3, 2, 0).with_sigma(0.0)).is_err());
    }

    #[test]
    fn order_statistic_monte_carlo() {
        let (k, n, trials) = (3, 10, 100_000);
        let mut rng = SeededRng::new(11);
        let mut buf = vec![0.0f64; n];
        let mut total = 0.0;
        for _ in 0..trials {
            buf.iter_mut().for_each(|u| *u = rng.random());
            buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            total += buf[k - 1];
        }
        let target = beta_order_statistic_mean(k, n).unwrap();
        assert!((total / trials as f64 - target).abs() < 0.005);
    }

    #[test]
    fn squared_distance_monte_carlo() {
        let a = sample_gaussian(&GaussianSpec::standard(100_000, 10, 5)).unwrap();
        let b = sample_gaussian(&GaussianSpec::standard(100_000, 10, 5).with_stream(1)).unwrap();
        let mean = (0..a.n())
            .map(|i| crate::neighborhood::squared_euclidean(a.row(i), b.row(i)))
            .sum::<f64>()
            / a.n() as f64;
        assert!((mean - chi2_distance_moments(1.0, 10, 0.0).unwrap().0).abs() < 0.5);
    }
}
